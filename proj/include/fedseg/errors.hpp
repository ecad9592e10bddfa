#pragma once

#include <stdexcept>
#include <string>

namespace fedseg {

// Shape or dimension disagreement between tensors / configs.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid numeric value: log of non-positive input, NaN/Inf escaping a
// primitive, NaN gradients reaching the optimizer.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an operation's contract (wrong dataset kind, spent tape,
// mismatched key sets, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or unreadable on-disk artifact (checkpoint, dataset, manifest).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedseg

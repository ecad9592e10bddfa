#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedseg/errors.hpp"

namespace fedseg {

// Extents of a dense row-major tensor. Empty shape = rank-0 scalar.
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor extent must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense 64-bit real tensor. Copies share storage (cheap handles); every
// primitive allocates a fresh buffer, so values are immutable along the
// graph. `values()` exposes the buffer for initializers and the optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor full(Shape shape, double v) {
    size_t n = static_cast<size_t>(numel(shape));
    return from(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor scalar(double v) { return from({}, {v}); }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }

  int64_t size() const { return impl_ ? static_cast<int64_t>(impl_->data.size()) : 0; }

  const std::vector<double>& values() const { return impl_->data; }
  std::vector<double>& values() { return impl_->data; }

  double item() const {
    if (!impl_ || impl_->data.size() != 1)
      throw ContractError("Tensor::item: tensor is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  // Tape linkage. A node id is only meaningful together with the epoch of
  // the tape that assigned it; stale ids from finished tapes are ignored.
  int node() const { return impl_ ? impl_->node : -1; }
  uint64_t tape_epoch() const { return impl_ ? impl_->tape_epoch : 0; }
  void bind_node(uint64_t epoch, int node) const {
    impl_->tape_epoch = epoch;
    impl_->node = node;
  }

  Tensor detached() const {
    Tensor t = from(shape(), values());
    return t;
  }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    uint64_t tape_epoch = 0;
    int node = -1;
  };
  std::shared_ptr<Impl> impl_;
};

// node id -> gradient, keyed by the ids leaves held during the pass.
using GradMap = std::unordered_map<int, Tensor>;

inline const Tensor* find_grad(const GradMap& grads, const Tensor& t) {
  auto it = grads.find(t.node());
  return it == grads.end() ? nullptr : &it->second;
}

// Reverse-mode tape: an ordered record of primitive applications. Inputs of
// every node precede it. Supports exactly one backward pass, after which the
// node list is cleared.
class GradTape {
 public:
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  GradTape() : epoch_(++epoch_counter()) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  uint64_t epoch() const { return epoch_; }
  size_t node_count() const { return nodes_.size(); }
  bool spent() const { return spent_; }

  // Registers (or retrieves) a leaf node for a requires_grad tensor.
  int leaf(const Tensor& t) {
    if (t.tape_epoch() == epoch_ && t.node() >= 0) return t.node();
    Node n;
    n.op = "leaf";
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    t.bind_node(epoch_, id);
    return id;
  }

  int record(const char* op, std::vector<int> parents, BackwardFn back) {
    Node n;
    n.op = op;
    n.parents = std::move(parents);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  GradMap backward(const Tensor& loss);

 private:
  struct Node {
    const char* op = "";
    std::vector<int> parents;  // -1 marks inputs that do not need gradients
    BackwardFn back;
    bool is_leaf = false;
  };

  static uint64_t& epoch_counter() {
    static uint64_t c = 0;
    return c;
  }

  std::vector<Node> nodes_;
  uint64_t epoch_;
  bool spent_ = false;
};

namespace detail {

inline thread_local GradTape* g_active_tape = nullptr;
inline thread_local int g_no_grad_depth = 0;

}  // namespace detail

// Makes `tape` the thread's recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape) : prev_(detail::g_active_tape) {
    detail::g_active_tape = &tape;
  }
  ~TapeScope() { detail::g_active_tape = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

// Suspends recording (teacher inference, gradient math, plain evaluation).
class NoGradScope {
 public:
  NoGradScope() { ++detail::g_no_grad_depth; }
  ~NoGradScope() { --detail::g_no_grad_depth; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

inline GradTape* active_tape() {
  return detail::g_no_grad_depth > 0 ? nullptr : detail::g_active_tape;
}

inline GradMap GradTape::backward(const Tensor& loss) {
  if (spent_) throw ContractError("GradTape: backward already ran on this tape");
  if (nodes_.empty()) throw ContractError("GradTape: tape is empty");
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar tensor");
  if (loss.tape_epoch() != epoch_ || loss.node() < 0)
    throw ContractError("backward: loss is not on this tape");

  NoGradScope no_grad;  // gradient math must not re-record

  std::vector<Tensor> grads(nodes_.size());
  grads[loss.node()] = Tensor::full(loss.shape(), 1.0);

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& node = nodes_[i];
    if (!grads[i].defined() || node.is_leaf) continue;
    std::vector<Tensor> parent_grads = node.back(grads[i]);
    if (parent_grads.size() != node.parents.size())
      throw ContractError(std::string("backward: arity mismatch in op ") + node.op);
    for (size_t j = 0; j < node.parents.size(); ++j) {
      int p = node.parents[j];
      if (p < 0 || !parent_grads[j].defined()) continue;
      if (!grads[p].defined()) {
        grads[p] = std::move(parent_grads[j]);
      } else {
        auto& acc = grads[p].values();
        const auto& add = parent_grads[j].values();
        if (acc.size() != add.size())
          throw ContractError(std::string("backward: gradient shape mismatch in op ") + node.op);
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
      }
    }
    grads[i] = Tensor();  // free intermediate gradient
  }

  GradMap out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf && grads[i].defined()) out.emplace(static_cast<int>(i), grads[i]);
  }

  nodes_.clear();
  spent_ = true;
  return out;
}

// Backward through the thread's active tape.
inline GradMap backward(const Tensor& loss) {
  GradTape* tape = detail::g_active_tape;
  if (!tape) throw ContractError("backward: no active tape");
  return tape->backward(loss);
}

}  // namespace fedseg

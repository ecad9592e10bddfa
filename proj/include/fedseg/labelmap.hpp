#pragma once

#include <cstdint>
#include <vector>

#include "fedseg/errors.hpp"

namespace fedseg {

// Per-pixel class identifiers. Valid ids are < num_classes of the producing
// context; kIgnore marks pixels excluded from losses and metrics.
struct LabelMap {
  static constexpr uint8_t kIgnore = 255;

  int height = 0;
  int width = 0;
  std::vector<uint8_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, uint8_t fill = 0)
      : height(h), width(w), ids(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }
  uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }

  size_t pixels() const { return ids.size(); }

  bool operator==(const LabelMap& o) const {
    return height == o.height && width == o.width && ids == o.ids;
  }
};

}  // namespace fedseg

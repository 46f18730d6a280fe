#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dts/error.hpp"

namespace dts {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel class ids, row-major. 255 marks pixels excluded from losses and metrics.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), ids(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t size() const noexcept { return ids.size(); }
  std::uint8_t& at(int y, int x) { return ids[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }

  bool same_size(const LabelMap& o) const noexcept { return height == o.height && width == o.width; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;

  /// Throws unless every non-ignore id is below `num_classes`.
  void validate(int num_classes) const {
    for (std::uint8_t v : ids) {
      if (v != kIgnoreLabel && v >= num_classes) {
        throw ConfigError("label id " + std::to_string(v) + " out of range for " + std::to_string(num_classes) +
                          " classes");
      }
    }
  }
};

}  // namespace dts

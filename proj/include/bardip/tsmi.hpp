#pragma once

#include "bardip/common.hpp"

namespace bardip {

/// Time series of magnetisation images in the compressed temporal basis:
/// `data` is N x K with pixel index p = row * width + col.
struct Tsmi {
  std::size_t height = 0;
  std::size_t width = 0;
  CxMatrix data;

  Tsmi() = default;
  Tsmi(std::size_t h, std::size_t w, std::size_t k)
      : height(h), width(w), data(CxMatrix::Zero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(k))) {}

  std::size_t pixels() const { return height * width; }
  std::size_t channels() const { return static_cast<std::size_t>(data.cols()); }
};

} // namespace bardip

#pragma once

#include "bardip/phantom.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace bardip {

inline constexpr double kPsnrCapDb = 99.0;

/// 100 * mean over the mask of |estimate - truth| / truth.
double mape(std::span<const double> estimate, std::span<const double> truth, std::span<const std::uint8_t> mask);

/// 20 log10(peak / RMSE) over the mask, on magnitudes each divided by their
/// masked mean magnitude; the peak is the largest normalised truth magnitude.
/// An exact match reports kPsnrCapDb.
double psnr(std::span<const Complex> estimate, std::span<const Complex> truth, std::span<const std::uint8_t> mask);

struct MetricsReport {
  double mape_t1 = 0.0;
  double mape_t2 = 0.0;
  double psnr_pd = 0.0;
  std::size_t pixels = 0;
};

/// Metrics of `estimate` against `truth` over the truth mask.
MetricsReport evaluate_maps(const std::vector<TissueParams>& estimate, const QuantMaps& truth);

} // namespace bardip

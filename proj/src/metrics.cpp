#include "bardip/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace bardip {

double mape(std::span<const double> estimate, std::span<const double> truth, std::span<const std::uint8_t> mask) {
  if (estimate.size() != truth.size() || mask.size() != truth.size()) {
    throw DimensionError("mape: estimate, truth and mask sizes differ");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (!mask[p]) {
      continue;
    }
    if (!(truth[p] > 0.0)) {
      throw std::invalid_argument(fmt::format("mape: non-positive truth {} inside the mask at pixel {}", truth[p], p));
    }
    total += std::abs(estimate[p] - truth[p]) / truth[p];
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("mape: empty mask");
  }
  return 100.0 * total / static_cast<double>(count);
}

namespace {

double masked_mean_magnitude(std::span<const Complex> v, std::span<const std::uint8_t> mask, std::size_t& count) {
  double total = 0.0;
  count = 0;
  for (std::size_t p = 0; p < v.size(); ++p) {
    if (mask[p]) {
      total += std::abs(v[p]);
      ++count;
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

} // namespace

double psnr(std::span<const Complex> estimate, std::span<const Complex> truth, std::span<const std::uint8_t> mask) {
  if (estimate.size() != truth.size() || mask.size() != truth.size()) {
    throw DimensionError("psnr: estimate, truth and mask sizes differ");
  }
  std::size_t count = 0;
  const double truth_mean = masked_mean_magnitude(truth, mask, count);
  if (count == 0) {
    throw std::invalid_argument("psnr: empty mask");
  }
  if (truth_mean == 0.0) {
    throw std::invalid_argument("psnr: truth is zero on the mask");
  }
  const double est_mean = masked_mean_magnitude(estimate, mask, count);
  // A zero estimate stays zero after normalisation.
  const double est_scale = est_mean > 0.0 ? 1.0 / est_mean : 0.0;
  double peak = 0.0;
  double sq = 0.0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (!mask[p]) {
      continue;
    }
    const double t = std::abs(truth[p]) / truth_mean;
    const double e = std::abs(estimate[p]) * est_scale;
    peak = std::max(peak, t);
    sq += (e - t) * (e - t);
  }
  const double rmse = std::sqrt(sq / static_cast<double>(count));
  if (rmse == 0.0) {
    return kPsnrCapDb;
  }
  return std::min(kPsnrCapDb, 20.0 * std::log10(peak / rmse));
}

MetricsReport evaluate_maps(const std::vector<TissueParams>& estimate, const QuantMaps& truth) {
  const std::size_t n = truth.pixels();
  if (estimate.size() != n) {
    throw DimensionError(fmt::format("estimate has {} pixels, truth {}", estimate.size(), n));
  }
  std::vector<double> e1(n), e2(n), t1(n), t2(n);
  std::vector<Complex> epd(n), tpd(n);
  for (std::size_t p = 0; p < n; ++p) {
    e1[p] = estimate[p].t1_ms;
    e2[p] = estimate[p].t2_ms;
    epd[p] = estimate[p].pd;
    t1[p] = truth.qmaps[p].t1_ms;
    t2[p] = truth.qmaps[p].t2_ms;
    tpd[p] = truth.qmaps[p].pd;
  }
  MetricsReport r;
  r.mape_t1 = mape(e1, t1, truth.mask);
  r.mape_t2 = mape(e2, t2, truth.mask);
  r.psnr_pd = psnr(epd, tpd, truth.mask);
  r.pixels = static_cast<std::size_t>(std::count(truth.mask.begin(), truth.mask.end(), std::uint8_t{1}));
  return r;
}

} // namespace bardip

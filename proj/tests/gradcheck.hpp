#pragma once

#include "bardip/nn/ops.hpp"
#include "bardip/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace bardip::test {

inline nn::Tensor random_tensor(nn::Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::normal_distribution<double> g;
  nn::Buffer v(nn::numel(shape));
  for (auto& x : v) {
    x = g(rng);
  }
  return nn::Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Relative discrepancy between the reverse-mode gradient of f with respect
/// to `inputs` and central differences with step h, over the concatenation of
/// all input gradients: max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, floor).
/// Concatenation keeps structurally zero gradients (a bias ahead of instance
/// normalisation) from dividing roundoff by roundoff.
inline double gradient_error(const std::function<nn::Tensor()>& f, std::vector<nn::Tensor> inputs,
                             double h = 1e-4, double floor = 1e-8) {
  for (auto& t : inputs) {
    t.zero_grad();
  }
  f().backward();
  double scale = floor;
  double diff = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f().item();
      v[i] = keep - h;
      const double down = f().item();
      v[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      scale = std::max(scale, std::abs(numeric));
      diff = std::max(diff, std::abs(numeric - analytic[i]));
    }
  }
  return diff / scale;
}

/// Scalar probe sum(out * weights) with fixed random weights, so every output
/// element contributes a distinct cotangent.
inline nn::Tensor probe(const nn::Tensor& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return nn::sum(nn::mul(out, random_tensor(out.shape(), rng, false)));
}

} // namespace bardip::test

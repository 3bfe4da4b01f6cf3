#include "bardip/nn/adam.hpp"
#include "bardip/common.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace bardip::nn {

namespace {
constexpr double kFlush = std::numeric_limits<double>::min();
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw std::invalid_argument("ADAM needs lr > 0 and betas in [0, 1)");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) {
      continue;
    }
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw TrainingDiverged(fmt::format("non-finite gradient in parameter {} at step {}", k, step_ + 1));
      }
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) {
      continue;
    }
    auto values = p.values();
    const auto grad = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      // Subnormal moments are flushed: a unit whose gradient stays zero would
      // otherwise decay into the slow subnormal range.
      if (std::abs(m[i]) < kFlush) {
        m[i] = 0.0;
      }
      if (v[i] < kFlush) {
        v[i] = 0.0;
      }
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    p.zero_grad();
  }
}

void Adam::set_lr(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument(fmt::format("learning rate must be finite and positive, got {}", lr));
  }
  config_.lr = lr;
}

} // namespace bardip::nn

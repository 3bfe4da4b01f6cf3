#pragma once

#include "bardip/nn/tensor.hpp"

#include <vector>

namespace bardip::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected ADAM over the gradients stored on each parameter.
class Adam {
public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  /// Throws TrainingDiverged, leaving parameters untouched, when any gradient
  /// is non-finite.
  void step();
  void zero_grad();

  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr);

private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

} // namespace bardip::nn

#pragma once

#include "bardip/nn/ops.hpp"
#include "bardip/nn/tensor.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace bardip::nn {

using Rng = std::mt19937_64;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

std::vector<Tensor> tensors(const ParameterList& params);

/// U(-b, b) with b = sqrt(6 / fan_in); requires_grad is set.
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

class Linear {
public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(ParameterList& out, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;
};

class Conv2d {
public:
  Conv2d() = default;
  /// Stride 1, "same" padding for odd kernels.
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, 1, padding); }
  void collect(ParameterList& out, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;
  std::size_t padding = 0;
};

class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  /// Kernel 2, stride 2: doubles the spatial size.
  ConvTranspose2d(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, weight, bias, 2); }
  void collect(ParameterList& out, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;
};

enum class Activation { relu, leaky_relu, tanh, sigmoid };

Tensor activate(const Tensor& x, Activation a);

/// Fully connected network; the activation follows every layer but the last.
class Mlp {
public:
  Mlp() = default;
  Mlp(const std::vector<std::size_t>& sizes, Activation hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  ParameterList parameters(const std::string& prefix) const;
  std::size_t in_features() const { return layers_.front().weight.dim(1); }
  std::size_t out_features() const { return layers_.back().weight.dim(0); }

private:
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::relu;
};

// MRFM container: u64 count, then per parameter its name, u32 rank, u64 dims
// and float64 values.
void save_checkpoint(const std::filesystem::path& path, const ParameterList& params);
/// Copies stored values into `params`, matching by name; shapes must agree.
void load_checkpoint(const std::filesystem::path& path, ParameterList& params);

} // namespace bardip::nn

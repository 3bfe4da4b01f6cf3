#pragma once

#include "bardip/common.hpp"
#include "bardip/nn/layers.hpp"

namespace bardip {

/// Encoder/decoder with skip connections. Each stage is two 3x3 convolutions,
/// each followed by instance normalisation and a leaky ReLU; downsampling is
/// 2x2 max pooling and upsampling a 2x2 stride-2 transposed convolution. A
/// final 1x1 convolution maps to `out_channels`.
struct UnetConfig {
  std::size_t levels = 4;
  std::size_t base_channels = 32;
  std::size_t in_channels = 10;
  std::size_t out_channels = 10;
};

class Unet {
public:
  Unet(const UnetConfig& config, nn::Rng& rng);

  /// x is [N, in_channels, H, W]. Inputs are zero-padded up to a multiple of
  /// 2^levels and the output is cropped back to H x W.
  nn::Tensor forward(const nn::Tensor& x) const;
  nn::ParameterList parameters() const;
  const UnetConfig& config() const { return config_; }

private:
  struct Block {
    nn::Conv2d first;
    nn::Conv2d second;
  };
  nn::Tensor run_block(const Block& b, const nn::Tensor& x) const;

  UnetConfig config_;
  std::vector<Block> down_;
  Block bottleneck_;
  std::vector<nn::ConvTranspose2d> up_;
  std::vector<Block> up_blocks_;
  nn::Conv2d head_;
};

} // namespace bardip

#include "bardip/unet.hpp"

#include <fmt/format.h>

namespace bardip {

Unet::Unet(const UnetConfig& config, nn::Rng& rng) : config_(config) {
  if (config.levels == 0 || config.base_channels == 0 || config.in_channels == 0 || config.out_channels == 0) {
    throw std::invalid_argument("U-Net sizes must be positive");
  }
  std::size_t in = config.in_channels;
  for (std::size_t l = 0; l < config.levels; ++l) {
    const std::size_t ch = config.base_channels << l;
    down_.push_back({nn::Conv2d(in, ch, 3, rng), nn::Conv2d(ch, ch, 3, rng)});
    in = ch;
  }
  const std::size_t deepest = config.base_channels << config.levels;
  bottleneck_ = {nn::Conv2d(in, deepest, 3, rng), nn::Conv2d(deepest, deepest, 3, rng)};
  in = deepest;
  for (std::size_t l = config.levels; l-- > 0;) {
    const std::size_t ch = config.base_channels << l;
    up_.emplace_back(in, ch, rng);
    up_blocks_.push_back({nn::Conv2d(2 * ch, ch, 3, rng), nn::Conv2d(ch, ch, 3, rng)});
    in = ch;
  }
  head_ = nn::Conv2d(in, config.out_channels, 1, rng);
}

nn::Tensor Unet::run_block(const Block& b, const nn::Tensor& x) const {
  nn::Tensor h = nn::leaky_relu(nn::instance_norm2d(b.first(x)), 0.01);
  return nn::leaky_relu(nn::instance_norm2d(b.second(h)), 0.01);
}

nn::Tensor Unet::forward(const nn::Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw DimensionError(fmt::format("U-Net expects [N, {}, H, W], got {}", config_.in_channels, nn::shape_string(x.shape())));
  }
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  const std::size_t mult = std::size_t{1} << config_.levels;
  const std::size_t pad_h = (mult - H % mult) % mult;
  const std::size_t pad_w = (mult - W % mult) % mult;
  nn::Tensor h = (pad_h || pad_w) ? nn::pad2d(x, pad_h, pad_w) : x;

  std::vector<nn::Tensor> skips;
  for (const auto& b : down_) {
    h = run_block(b, h);
    skips.push_back(h);
    h = nn::max_pool2d(h, 2);
  }
  h = run_block(bottleneck_, h);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = up_[i](h);
    h = nn::concat_channels(h, skips[skips.size() - 1 - i]);
    h = run_block(up_blocks_[i], h);
  }
  h = head_(h);
  return (pad_h || pad_w) ? nn::crop2d(h, H, W) : h;
}

nn::ParameterList Unet::parameters() const {
  nn::ParameterList out;
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].first.collect(out, fmt::format("down{}.conv0", i));
    down_[i].second.collect(out, fmt::format("down{}.conv1", i));
  }
  bottleneck_.first.collect(out, "bottleneck.conv0");
  bottleneck_.second.collect(out, "bottleneck.conv1");
  for (std::size_t i = 0; i < up_.size(); ++i) {
    up_[i].collect(out, fmt::format("up{}.transpose", i));
    up_blocks_[i].first.collect(out, fmt::format("up{}.conv0", i));
    up_blocks_[i].second.collect(out, fmt::format("up{}.conv1", i));
  }
  head_.collect(out, "head");
  return out;
}

} // namespace bardip

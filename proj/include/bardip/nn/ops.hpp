#pragma once

#include "bardip/nn/tensor.hpp"

namespace bardip::nn {

// Elementwise; operands must have equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// x [B, in], weight [out, in], bias [out] (may be undefined) -> [B, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Columns [begin, begin + count) of a [B, n] tensor.
Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t count);

/// [R, C] -> [C, R].
Tensor transpose(const Tensor& x);
/// Row-wise x / max(||x||, eps) for a [B, n] tensor.
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// x [N, C, H, W], weight [O, C, kh, kw], bias [O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

/// x [N, C, H, W], weight [C, O, kh, kw]; output [N, O, (H-1)*stride + kh, (W-1)*stride + kw].
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

/// Non-overlapping window x window max pooling; H and W must be multiples of window.
Tensor max_pool2d(const Tensor& x, std::size_t window = 2);

/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample_nearest2d(const Tensor& x, std::size_t factor = 2);

/// Per-sample, per-channel normalisation to zero mean and unit variance (no affine).
Tensor instance_norm2d(const Tensor& x, double eps = 1e-5);

/// Concatenate two [N, C, H, W] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Zero-pad a [N, C, H, W] tensor at the bottom and right edges.
Tensor pad2d(const Tensor& x, std::size_t bottom, std::size_t right);
/// Keep the top-left height x width window of a [N, C, H, W] tensor.
Tensor crop2d(const Tensor& x, std::size_t height, std::size_t width);

// Losses reduce to a scalar.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);
Tensor mae_loss(const Tensor& prediction, const Tensor& target);
/// Sum of squared differences, ||prediction - target||_2^2.
Tensor sse_loss(const Tensor& prediction, const Tensor& target);
/// Sum of absolute differences, ||prediction - target||_1.
Tensor sae_loss(const Tensor& prediction, const Tensor& target);

} // namespace bardip::nn

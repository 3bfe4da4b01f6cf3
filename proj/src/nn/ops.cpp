#include "bardip/nn/ops.hpp"
#include "bardip/common.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace bardip::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shapes {} and {} differ", op, shape_string(a.shape()), shape_string(b.shape())));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(fmt::format("{}: expected rank {}, got {}", op, rank, shape_string(x.shape())));
  }
}

inline Buffer* grad_of(Node& out, std::size_t i) { return input_grad(out, i); }

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

// src [C, H, W] -> col [C*kh*kw, out_h*out_w]
void im2col(const double* src, const ConvGeometry& g, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* dst = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst + oy * g.out_w, dst + (oy + 1) * g.out_w, 0.0);
            continue;
          }
          const double* row = src + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          double* out = dst + oy * g.out_w;
          if (g.stride == 1) {
            // Valid outputs form one contiguous run.
            const auto off = static_cast<std::ptrdiff_t>(j) - pad;
            const auto W = static_cast<std::ptrdiff_t>(g.width);
            const auto OW = static_cast<std::ptrdiff_t>(g.out_w);
            const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, OW);
            const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(W - off, lo, OW);
            std::fill(out, out + lo, 0.0);
            std::copy(row + lo + off, row + hi + off, out + lo);
            std::fill(out + hi, out + OW, 0.0);
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            out[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : row[x];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col back into dst [C, H, W].
void col2im(const double* col, const ConvGeometry& g, double* dst) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* src = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            continue;
          }
          double* row = dst + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          if (g.stride == 1) {
            const auto off = static_cast<std::ptrdiff_t>(j) - pad;
            const auto W = static_cast<std::ptrdiff_t>(g.width);
            const auto OW = static_cast<std::ptrdiff_t>(g.out_w);
            const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, OW);
            const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(W - off, lo, OW);
            const double* in = src + oy * g.out_w;
            for (std::ptrdiff_t ox = lo; ox < hi; ++ox) {
              row[ox + off] += in[ox];
            }
            continue;
          }
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) {
              row[x] += src[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df) {
  Buffer out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(xv[i]);
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [df](Node& o) {
    auto* gx = grad_of(o, 0);
    if (!gx) {
      return;
    }
    const auto& xin = o.inputs[0]->value;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      (*gx)[i] += o.grad[i] * df(xin[i], o.value[i]);
    }
  });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.values()[i] + b.values()[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_of(o, k)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          (*g)[i] += o.grad[i];
        }
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.values()[i] - b.values()[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[i] += o.grad[i];
      }
    }
    if (auto* g = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[i] -= o.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.values()[i] * b.values()[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    const auto& av = o.inputs[0]->value;
    const auto& bv = o.inputs[1]->value;
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[i] += o.grad[i] * bv[i];
      }
    }
    if (auto* g = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[i] += o.grad[i] * av[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = s * a.values()[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[i] += s * o.grad[i];
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) {
    s += v;
  }
  return Tensor::make_result({1}, {s}, {a}, [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (double& v : *g) {
        v += o.grad[0];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError(fmt::format("cannot reshape {} to {}", shape_string(x.shape()), shape_string(shape)));
  }
  Buffer out(x.values().begin(), x.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[i] += o.grad[i];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t B = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out_features = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError(fmt::format("linear: input {} vs weight {}", shape_string(x.shape()), shape_string(weight.shape())));
  }
  if (bias.defined() && bias.size() != out_features) {
    throw DimensionError("linear: bias size mismatch");
  }
  Buffer out(B * out_features);
  {
    ConstMapMat X(x.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(in));
    ConstMapMat W(weight.data(), static_cast<Eigen::Index>(out_features), static_cast<Eigen::Index>(in));
    MapMat Y(out.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(out_features));
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
      Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), static_cast<Eigen::Index>(out_features));
    }
  }
  return Tensor::make_result({B, out_features}, std::move(out), {x, weight, bias}, [B, in, out_features](Node& o) {
    const auto b = static_cast<Eigen::Index>(B);
    const auto n_in = static_cast<Eigen::Index>(in);
    const auto n_out = static_cast<Eigen::Index>(out_features);
    ConstMapMat G(o.grad.data(), b, n_out);
    if (auto* gx = grad_of(o, 0)) {
      ConstMapMat W(o.inputs[1]->value.data(), n_out, n_in);
      MapMat(gx->data(), b, n_in).noalias() += G * W;
    }
    if (auto* gw = grad_of(o, 1)) {
      ConstMapMat X(o.inputs[0]->value.data(), b, n_in);
      MapMat(gw->data(), n_out, n_in).noalias() += G.transpose() * X;
    }
    if (auto* gb = grad_of(o, 2)) {
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), n_out) += G.colwise().sum();
    }
  });
}

Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_columns");
  const std::size_t B = x.dim(0);
  const std::size_t n = x.dim(1);
  if (begin + count > n) {
    throw DimensionError("slice_columns: range exceeds width");
  }
  Buffer out(B * count);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < count; ++c) {
      out[r * count + c] = x.values()[r * n + begin + c];
    }
  }
  return Tensor::make_result({B, count}, std::move(out), {x}, [B, n, begin, count](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
          (*g)[r * n + begin + c] += o.grad[r * count + c];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t R = x.dim(0);
  const std::size_t C = x.dim(1);
  Buffer out(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      out[c * R + r] = x.values()[r * C + c];
    }
  }
  return Tensor::make_result({C, R}, std::move(out), {x}, [R, C](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          (*g)[r * C + c] += o.grad[c * R + r];
        }
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t B = x.dim(0);
  const std::size_t n = x.dim(1);
  Buffer out(B * n);
  Buffer norms(B);
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      s += x.values()[r * n + c] * x.values()[r * n + c];
    }
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = x.values()[r * n + c] / norms[r];
    }
  }
  return Tensor::make_result({B, n}, std::move(out), {x}, [B, n, eps, norms](Node& o) {
    auto* g = grad_of(o, 0);
    if (!g) {
      return;
    }
    for (std::size_t r = 0; r < B; ++r) {
      const double* y = o.value.data() + r * n;
      const double* gy = o.grad.data() + r * n;
      if (norms[r] <= eps) {
        for (std::size_t c = 0; c < n; ++c) {
          (*g)[r * n + c] += gy[c] / eps;
        }
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        dot += gy[c] * y[c];
      }
      for (std::size_t c = 0; c < n; ++c) {
        (*g)[r * n + c] += (gy[c] - dot * y[c]) / norms[r];
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t N = x.dim(0);
  const std::size_t O = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.channels) {
    throw DimensionError(fmt::format("conv2d: input {} vs weight {}", shape_string(x.shape()), shape_string(weight.shape())));
  }
  if (stride == 0 || g.height + 2 * padding < g.kh || g.width + 2 * padding < g.kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  if (bias.defined() && bias.size() != O) {
    throw DimensionError("conv2d: bias size mismatch");
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const auto o_rows = static_cast<Eigen::Index>(O);
  auto cols_buf = std::make_shared<Buffer>(N * g.rows() * g.cols());
  Buffer out(N * O * g.cols());
  ConstMapMat W(weight.data(), o_rows, rows);
  for (std::size_t n = 0; n < N; ++n) {
    double* col = cols_buf->data() + n * g.rows() * g.cols();
    im2col(x.data() + n * g.channels * g.height * g.width, g, col);
    MapMat Y(out.data() + n * O * g.cols(), o_rows, cols);
    Y.noalias() = W * ConstMapMat(col, rows, cols);
    if (bias.defined()) {
      Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), o_rows);
    }
  }
  return Tensor::make_result({N, O, g.out_h, g.out_w}, std::move(out), {x, weight, bias},
                             [g, N, O, cols_buf](Node& o) {
    const auto rows = static_cast<Eigen::Index>(g.rows());
    const auto cols = static_cast<Eigen::Index>(g.cols());
    const auto o_rows = static_cast<Eigen::Index>(O);
    auto* gx = grad_of(o, 0);
    auto* gw = grad_of(o, 1);
    auto* gb = grad_of(o, 2);
    ConstMapMat W(o.inputs[1]->value.data(), o_rows, rows);
    RowMat dcol;
    for (std::size_t n = 0; n < N; ++n) {
      ConstMapMat G(o.grad.data() + n * O * g.cols(), o_rows, cols);
      ConstMapMat col(cols_buf->data() + n * g.rows() * g.cols(), rows, cols);
      if (gw) {
        MapMat(gw->data(), o_rows, rows).noalias() += G * col.transpose();
      }
      if (gb) {
        Eigen::Map<Eigen::VectorXd>(gb->data(), o_rows) += G.rowwise().sum();
      }
      if (gx) {
        dcol.noalias() = W.transpose() * G;
        col2im(dcol.data(), g, gx->data() + n * g.channels * g.height * g.width);
      }
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d");
  const std::size_t N = x.dim(0);
  const std::size_t C = x.dim(1);
  const std::size_t H = x.dim(2);
  const std::size_t Wd = x.dim(3);
  if (weight.dim(0) != C || stride == 0) {
    throw DimensionError(fmt::format("conv_transpose2d: input {} vs weight {}", shape_string(x.shape()),
                                     shape_string(weight.shape())));
  }
  const std::size_t O = weight.dim(1);
  if (bias.defined() && bias.size() != O) {
    throw DimensionError("conv_transpose2d: bias size mismatch");
  }
  // The transposed convolution is the adjoint of a convolution over the
  // output-sized image; the geometry below describes that convolution.
  ConvGeometry g{O, (H - 1) * stride + weight.dim(2), (Wd - 1) * stride + weight.dim(3), weight.dim(2), weight.dim(3),
                 stride, 0, H, Wd};
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const auto c_rows = static_cast<Eigen::Index>(C);
  const std::size_t out_plane = g.height * g.width;
  Buffer out(N * O * out_plane, 0.0);
  ConstMapMat Wm(weight.data(), c_rows, rows);
  RowMat col;
  for (std::size_t n = 0; n < N; ++n) {
    col.noalias() = Wm.transpose() * ConstMapMat(x.data() + n * C * g.cols(), c_rows, cols);
    double* dst = out.data() + n * O * out_plane;
    col2im(col.data(), g, dst);
    if (bias.defined()) {
      for (std::size_t oc = 0; oc < O; ++oc) {
        for (std::size_t i = 0; i < out_plane; ++i) {
          dst[oc * out_plane + i] += bias.values()[oc];
        }
      }
    }
  }
  return Tensor::make_result({N, O, g.height, g.width}, std::move(out), {x, weight, bias}, [g, N, C, O](Node& o) {
    const auto rows = static_cast<Eigen::Index>(g.rows());
    const auto cols = static_cast<Eigen::Index>(g.cols());
    const auto c_rows = static_cast<Eigen::Index>(C);
    const std::size_t out_plane = g.height * g.width;
    auto* gx = grad_of(o, 0);
    auto* gw = grad_of(o, 1);
    auto* gb = grad_of(o, 2);
    ConstMapMat Wm(o.inputs[1]->value.data(), c_rows, rows);
    RowMat dcol(rows, cols);
    for (std::size_t n = 0; n < N; ++n) {
      const double* gout = o.grad.data() + n * O * out_plane;
      if (gx || gw) {
        im2col(gout, g, dcol.data());
      }
      if (gx) {
        MapMat(gx->data() + n * C * g.cols(), c_rows, cols).noalias() += Wm * dcol;
      }
      if (gw) {
        ConstMapMat X(o.inputs[0]->value.data() + n * C * g.cols(), c_rows, cols);
        MapMat(gw->data(), c_rows, rows).noalias() += X * dcol.transpose();
      }
      if (gb) {
        for (std::size_t oc = 0; oc < O; ++oc) {
          double s = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) {
            s += gout[oc * out_plane + i];
          }
          (*gb)[oc] += s;
        }
      }
    }
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t N = x.dim(0);
  const std::size_t C = x.dim(1);
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  if (window == 0 || H % window != 0 || W % window != 0) {
    throw DimensionError(fmt::format("max_pool2d: {} not divisible by window {}", shape_string(x.shape()), window));
  }
  const std::size_t oh = H / window;
  const std::size_t ow = W / window;
  Buffer out(N * C * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto xv = x.values();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = plane * H * W + oy * window * W + ox * window;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = plane * H * W + (oy * window + i) * W + ox * window + j;
            if (xv[idx] > xv[best]) {
              best = idx;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
    }
  }
  return Tensor::make_result({N, C, oh, ow}, std::move(out), {x}, [argmax](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        (*g)[(*argmax)[i]] += o.grad[i];
      }
    }
  });
}

Tensor upsample_nearest2d(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest2d");
  const std::size_t NC = x.dim(0) * x.dim(1);
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  const std::size_t oh = H * factor;
  const std::size_t ow = W * factor;
  Buffer out(NC * oh * ow);
  for (std::size_t p = 0; p < NC; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        out[(p * oh + y) * ow + xx] = x.values()[(p * H + y / factor) * W + xx / factor];
      }
    }
  }
  return Tensor::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, [NC, H, W, factor](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      const std::size_t oh = H * factor;
      const std::size_t ow = W * factor;
      for (std::size_t p = 0; p < NC; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            (*g)[(p * H + y / factor) * W + xx / factor] += o.grad[(p * oh + y) * ow + xx];
          }
        }
      }
    }
  });
}

Tensor instance_norm2d(const Tensor& x, double eps) {
  require_rank(x, 4, "instance_norm2d");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t area = x.dim(2) * x.dim(3);
  Buffer out(x.size());
  auto inv_std = std::make_shared<Buffer>(planes);
  const auto xv = x.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * area;
    double mean = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      mean += src[i];
    }
    mean /= static_cast<double>(area);
    double var = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      var += (src[i] - mean) * (src[i] - mean);
    }
    var /= static_cast<double>(area);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    for (std::size_t i = 0; i < area; ++i) {
      out[p * area + i] = (src[i] - mean) * is;
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [planes, area, inv_std](Node& o) {
    auto* g = grad_of(o, 0);
    if (!g) {
      return;
    }
    const auto n = static_cast<double>(area);
    for (std::size_t p = 0; p < planes; ++p) {
      const double* y = o.value.data() + p * area;
      const double* gy = o.grad.data() + p * area;
      double mean_g = 0.0;
      double mean_gy = 0.0;
      for (std::size_t i = 0; i < area; ++i) {
        mean_g += gy[i];
        mean_gy += gy[i] * y[i];
      }
      mean_g /= n;
      mean_gy /= n;
      for (std::size_t i = 0; i < area; ++i) {
        (*g)[p * area + i] += (*inv_std)[p] * (gy[i] - mean_g - y[i] * mean_gy);
      }
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError(fmt::format("concat_channels: {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
  }
  const std::size_t N = a.dim(0);
  const std::size_t ca = a.dim(1) * a.dim(2) * a.dim(3);
  const std::size_t cb = b.dim(1) * b.dim(2) * b.dim(3);
  Buffer out(N * (ca + cb));
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * ca, ca, out.data() + n * (ca + cb));
    std::copy_n(b.data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
  }
  return Tensor::make_result({N, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)}, std::move(out), {a, b},
                             [N, ca, cb](Node& o) {
    auto* ga = grad_of(o, 0);
    auto* gb = grad_of(o, 1);
    for (std::size_t n = 0; n < N; ++n) {
      const double* src = o.grad.data() + n * (ca + cb);
      if (ga) {
        for (std::size_t i = 0; i < ca; ++i) {
          (*ga)[n * ca + i] += src[i];
        }
      }
      if (gb) {
        for (std::size_t i = 0; i < cb; ++i) {
          (*gb)[n * cb + i] += src[ca + i];
        }
      }
    }
  });
}

Tensor pad2d(const Tensor& x, std::size_t bottom, std::size_t right) {
  require_rank(x, 4, "pad2d");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  const std::size_t oh = H + bottom;
  const std::size_t ow = W + right;
  Buffer out(planes * oh * ow, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < H; ++y) {
      std::copy_n(x.data() + (p * H + y) * W, W, out.data() + (p * oh + y) * ow);
    }
  }
  return Tensor::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, [planes, H, W, oh, ow](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t xx = 0; xx < W; ++xx) {
            (*g)[(p * H + y) * W + xx] += o.grad[(p * oh + y) * ow + xx];
          }
        }
      }
    }
  });
}

Tensor crop2d(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank(x, 4, "crop2d");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  if (height > H || width > W) {
    throw DimensionError("crop2d: window larger than input");
  }
  Buffer out(planes * height * width);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < height; ++y) {
      std::copy_n(x.data() + (p * H + y) * W, width, out.data() + (p * height + y) * width);
    }
  }
  return Tensor::make_result({x.dim(0), x.dim(1), height, width}, std::move(out), {x},
                             [planes, H, W, height, width](Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < height; ++y) {
          for (std::size_t xx = 0; xx < width; ++xx) {
            (*g)[(p * H + y) * W + xx] += o.grad[(p * height + y) * width + xx];
          }
        }
      }
    }
  });
}

namespace {

Tensor reduce_loss(const Tensor& prediction, const Tensor& target, bool squared, double weight) {
  require_same_shape(prediction, target, "loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction.values()[i] - target.values()[i];
    acc += squared ? d * d : std::abs(d);
  }
  return Tensor::make_result({1}, {weight * acc}, {prediction, target}, [squared, weight](Node& o) {
    const auto& p = o.inputs[0]->value;
    const auto& t = o.inputs[1]->value;
    auto* gp = grad_of(o, 0);
    auto* gt = grad_of(o, 1);
    const double up = o.grad[0] * weight;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      const double dd = squared ? 2.0 * d : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      if (gp) {
        (*gp)[i] += up * dd;
      }
      if (gt) {
        (*gt)[i] -= up * dd;
      }
    }
  });
}

} // namespace

Tensor mse_loss(const Tensor& p, const Tensor& t) { return reduce_loss(p, t, true, 1.0 / static_cast<double>(p.size())); }
Tensor mae_loss(const Tensor& p, const Tensor& t) { return reduce_loss(p, t, false, 1.0 / static_cast<double>(p.size())); }
Tensor sse_loss(const Tensor& p, const Tensor& t) { return reduce_loss(p, t, true, 1.0); }
Tensor sae_loss(const Tensor& p, const Tensor& t) { return reduce_loss(p, t, false, 1.0); }

} // namespace bardip::nn

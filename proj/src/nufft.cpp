#include "bardip/nufft.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <cmath>
#include <mutex>
#include <numbers>

namespace bardip {

namespace {

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

} // namespace

KaiserBessel::KaiserBessel(double w, double os) : width(w), oversampling(os) {
  const double a = (w / os) * (os - 0.5);
  beta = std::numbers::pi * std::sqrt(a * a - 0.8);
}

double KaiserBessel::operator()(double u) const {
  const double r = 2.0 * u / width;
  if (std::abs(r) > 1.0) {
    return 0.0;
  }
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r));
}

double KaiserBessel::transform(double nu) const {
  const double t = std::numbers::pi * width * nu;
  const double z2 = beta * beta - t * t;
  if (z2 > 1e-12) {
    const double z = std::sqrt(z2);
    return width * std::sinh(z) / z;
  }
  if (z2 < -1e-12) {
    const double z = std::sqrt(-z2);
    return width * std::sin(z) / z;
  }
  return width;
}

struct Nufft2d::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    if (forward) {
      fftw_destroy_plan(forward);
    }
    if (backward) {
      fftw_destroy_plan(backward);
    }
  }
};

Nufft2d::Nufft2d(std::size_t height, std::size_t width, double oversampling, int kernel_width)
    : height_(height), width_(width), kernel_(kernel_width, oversampling) {
  if (height == 0 || width == 0) {
    throw std::invalid_argument("NUFFT image must be non-empty");
  }
  if (kernel_width != kKernelTaps) {
    throw std::invalid_argument(fmt::format("only kernel width {} is supported", kKernelTaps));
  }
  grid_rows_ = static_cast<std::size_t>(std::ceil(oversampling * static_cast<double>(height)));
  grid_cols_ = static_cast<std::size_t>(std::ceil(oversampling * static_cast<double>(width)));

  deapod_rows_.resize(height);
  for (std::size_t r = 0; r < height; ++r) {
    const double n = static_cast<double>(r) - static_cast<double>(height / 2);
    deapod_rows_[r] = 1.0 / kernel_.transform(n / static_cast<double>(grid_rows_));
  }
  deapod_cols_.resize(width);
  for (std::size_t c = 0; c < width; ++c) {
    const double n = static_cast<double>(c) - static_cast<double>(width / 2);
    deapod_cols_[c] = 1.0 / kernel_.transform(n / static_cast<double>(grid_cols_));
  }

  plans_ = std::make_unique<Plans>();
  std::lock_guard lock(planner_mutex());
  auto* scratch = fftw_alloc_complex(grid_size());
  const int rows = static_cast<int>(grid_rows_);
  const int cols = static_cast<int>(grid_cols_);
  plans_->forward = fftw_plan_dft_2d(rows, cols, scratch, scratch, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans_->backward = fftw_plan_dft_2d(rows, cols, scratch, scratch, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(scratch);
  if (!plans_->forward || !plans_->backward) {
    throw Error("FFTW planning failed");
  }
}

Nufft2d::~Nufft2d() = default;
Nufft2d::Nufft2d(Nufft2d&&) noexcept = default;
Nufft2d& Nufft2d::operator=(Nufft2d&&) noexcept = default;

std::vector<GriddingTap> Nufft2d::taps(std::span<const double> coords) const {
  if (coords.size() % 2 != 0) {
    throw DimensionError("coordinates must come in (kx, ky) pairs");
  }
  const std::size_t M = coords.size() / 2;
  std::vector<GriddingTap> out(M);
  for (std::size_t m = 0; m < M; ++m) {
    const double kx = coords[2 * m];
    const double ky = coords[2 * m + 1];
    if (!(kx >= -0.5 && kx < 0.5) || !(ky >= -0.5 && ky < 0.5)) {
      throw std::out_of_range(fmt::format("k-space coordinate ({}, {}) outside [-0.5, 0.5)", kx, ky));
    }
    const double ux = kx * static_cast<double>(grid_cols_);
    const double uy = ky * static_cast<double>(grid_rows_);
    const double half = kernel_.width / 2.0;
    const auto cx = static_cast<int>(std::ceil(ux - half));
    const auto cy = static_cast<int>(std::ceil(uy - half));
    auto& t = out[m];
    t.col0 = cx;
    t.row0 = cy;
    for (int j = 0; j < kKernelTaps; ++j) {
      t.wcol[static_cast<std::size_t>(j)] = kernel_(ux - (cx + j));
      t.wrow[static_cast<std::size_t>(j)] = kernel_(uy - (cy + j));
    }
  }
  return out;
}

std::array<std::size_t, kKernelTaps * kKernelTaps> Nufft2d::offsets(const GriddingTap& tap) const {
  std::array<std::size_t, kKernelTaps * kKernelTaps> off{};
  const auto rows = static_cast<int>(grid_rows_);
  const auto cols = static_cast<int>(grid_cols_);
  for (int a = 0; a < kKernelTaps; ++a) {
    const int r = ((tap.row0 + a) % rows + rows) % rows;
    for (int b = 0; b < kKernelTaps; ++b) {
      const int c = ((tap.col0 + b) % cols + cols) % cols;
      off[static_cast<std::size_t>(a * kKernelTaps + b)] = static_cast<std::size_t>(r) * grid_cols_ + static_cast<std::size_t>(c);
    }
  }
  return off;
}

Complex Nufft2d::interpolate(const Complex* grid, const GriddingTap& tap) const {
  const auto off = offsets(tap);
  Complex acc = 0.0;
  for (std::size_t a = 0; a < kKernelTaps; ++a) {
    Complex row = 0.0;
    for (std::size_t b = 0; b < kKernelTaps; ++b) {
      row += tap.wcol[b] * grid[off[a * kKernelTaps + b]];
    }
    acc += tap.wrow[a] * row;
  }
  return acc;
}

void Nufft2d::spread(Complex value, const GriddingTap& tap, Complex* grid) const {
  const auto off = offsets(tap);
  for (std::size_t a = 0; a < kKernelTaps; ++a) {
    const Complex row = tap.wrow[a] * value;
    for (std::size_t b = 0; b < kKernelTaps; ++b) {
      grid[off[a * kKernelTaps + b]] += tap.wcol[b] * row;
    }
  }
}

void Nufft2d::image_to_grid(const Complex* image, Complex* grid) const {
  std::fill(grid, grid + grid_size(), Complex(0.0));
  const auto H = static_cast<std::ptrdiff_t>(height_);
  const auto W = static_cast<std::ptrdiff_t>(width_);
  const auto GR = static_cast<std::ptrdiff_t>(grid_rows_);
  const auto GC = static_cast<std::ptrdiff_t>(grid_cols_);
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    const std::ptrdiff_t gr = ((r - H / 2) % GR + GR) % GR;
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      const std::ptrdiff_t gc = ((c - W / 2) % GC + GC) % GC;
      grid[gr * GC + gc] = image[r * W + c] * (deapod_rows_[static_cast<std::size_t>(r)] * deapod_cols_[static_cast<std::size_t>(c)]);
    }
  }
  auto* g = reinterpret_cast<fftw_complex*>(grid);
  fftw_execute_dft(plans_->forward, g, g);
}

void Nufft2d::grid_to_image(const Complex* grid, Complex* image) const {
  std::vector<Complex> buf(grid, grid + grid_size());
  auto* raw = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_execute_dft(plans_->backward, raw, raw);
  const Complex* g = buf.data();
  const auto H = static_cast<std::ptrdiff_t>(height_);
  const auto W = static_cast<std::ptrdiff_t>(width_);
  const auto GR = static_cast<std::ptrdiff_t>(grid_rows_);
  const auto GC = static_cast<std::ptrdiff_t>(grid_cols_);
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    const std::ptrdiff_t gr = ((r - H / 2) % GR + GR) % GR;
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      const std::ptrdiff_t gc = ((c - W / 2) % GC + GC) % GC;
      image[r * W + c] = g[gr * GC + gc] * (deapod_rows_[static_cast<std::size_t>(r)] * deapod_cols_[static_cast<std::size_t>(c)]);
    }
  }
}

CxVector Nufft2d::forward(const CxVector& image, std::span<const double> coords) const {
  if (static_cast<std::size_t>(image.size()) != pixels()) {
    throw DimensionError(fmt::format("image has {} pixels, NUFFT expects {}", image.size(), pixels()));
  }
  const auto tp = taps(coords);
  std::vector<Complex> grid(grid_size());
  image_to_grid(image.data(), grid.data());
  CxVector out(static_cast<Eigen::Index>(tp.size()));
  for (std::size_t m = 0; m < tp.size(); ++m) {
    out[static_cast<Eigen::Index>(m)] = interpolate(grid.data(), tp[m]);
  }
  return out;
}

CxVector Nufft2d::adjoint(const CxVector& samples, std::span<const double> coords) const {
  const auto tp = taps(coords);
  if (static_cast<std::size_t>(samples.size()) != tp.size()) {
    throw DimensionError("sample count does not match coordinate count");
  }
  std::vector<Complex> grid(grid_size(), Complex(0.0));
  for (std::size_t m = 0; m < tp.size(); ++m) {
    spread(samples[static_cast<Eigen::Index>(m)], tp[m], grid.data());
  }
  CxVector image(static_cast<Eigen::Index>(pixels()));
  grid_to_image(grid.data(), image.data());
  return image;
}

CxVector direct_dft(const CxVector& image, std::size_t height, std::size_t width, std::span<const double> coords) {
  const std::size_t M = coords.size() / 2;
  CxVector out = CxVector::Zero(static_cast<Eigen::Index>(M));
  for (std::size_t m = 0; m < M; ++m) {
    Complex acc = 0.0;
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double ph = -2.0 * std::numbers::pi *
                          (coords[2 * m] * (static_cast<double>(c) - static_cast<double>(width / 2)) +
                           coords[2 * m + 1] * (static_cast<double>(r) - static_cast<double>(height / 2)));
        acc += image[static_cast<Eigen::Index>(r * width + c)] * std::polar(1.0, ph);
      }
    }
    out[static_cast<Eigen::Index>(m)] = acc;
  }
  return out;
}

CxVector direct_dft_adjoint(const CxVector& samples, std::size_t height, std::size_t width,
                            std::span<const double> coords) {
  const std::size_t M = coords.size() / 2;
  CxVector out = CxVector::Zero(static_cast<Eigen::Index>(height * width));
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      Complex acc = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        const double ph = 2.0 * std::numbers::pi *
                          (coords[2 * m] * (static_cast<double>(c) - static_cast<double>(width / 2)) +
                           coords[2 * m + 1] * (static_cast<double>(r) - static_cast<double>(height / 2)));
        acc += samples[static_cast<Eigen::Index>(m)] * std::polar(1.0, ph);
      }
      out[static_cast<Eigen::Index>(r * width + c)] = acc;
    }
  }
  return out;
}

} // namespace bardip

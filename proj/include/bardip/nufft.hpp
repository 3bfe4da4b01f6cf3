#pragma once

#include "bardip/common.hpp"

#include <array>
#include <memory>
#include <span>
#include <vector>

namespace bardip {

/// Kaiser-Bessel interpolation kernel measured in oversampled-grid units.
struct KaiserBessel {
  double width = 4.0;
  double oversampling = 2.0;
  double beta = 0.0;

  KaiserBessel(double width, double oversampling);

  double operator()(double u) const;
  /// Continuous Fourier transform of the kernel at frequency nu (cycles per grid unit).
  double transform(double nu) const;
};

/// Interpolation footprint of one non-uniform sample: kKernelTaps x kKernelTaps
/// grid points starting at (row0, col0), wrapped modulo the grid size.
inline constexpr int kKernelTaps = 4;
struct GriddingTap {
  int row0 = 0;
  int col0 = 0;
  std::array<double, kKernelTaps> wrow{};
  std::array<double, kKernelTaps> wcol{};
};

/// Type-2 NUFFT on a height x width image (and its adjoint) by oversampled FFT
/// plus Kaiser-Bessel gridding. Pixel (r, c) sits at centred position
/// (r - height/2, c - width/2); coordinates are in cycles/pixel, ordered (kx, ky)
/// and must lie in [-0.5, 0.5). Forward evaluates
///   X(k) = sum_{r,c} img(r, c) exp(-2 pi i (kx (c - width/2) + ky (r - height/2))).
/// Instances are immutable after construction; all methods are thread-safe.
class Nufft2d {
public:
  Nufft2d(std::size_t height, std::size_t width, double oversampling = 2.0, int kernel_width = kKernelTaps);
  ~Nufft2d();
  Nufft2d(const Nufft2d&) = delete;
  Nufft2d& operator=(const Nufft2d&) = delete;
  Nufft2d(Nufft2d&&) noexcept;
  Nufft2d& operator=(Nufft2d&&) noexcept;

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }
  std::size_t grid_size() const { return grid_rows_ * grid_cols_; }

  /// coords holds M (kx, ky) pairs.
  CxVector forward(const CxVector& image, std::span<const double> coords) const;
  CxVector adjoint(const CxVector& samples, std::span<const double> coords) const;

  // Building blocks used by the multi-frame acquisition operator.
  std::vector<GriddingTap> taps(std::span<const double> coords) const;
  /// Deapodise, zero-pad and FFT `image` into `grid` (grid_size() entries).
  void image_to_grid(const Complex* image, Complex* grid) const;
  /// Exact adjoint of image_to_grid; overwrites `image`.
  void grid_to_image(const Complex* grid, Complex* image) const;
  Complex interpolate(const Complex* grid, const GriddingTap& tap) const;
  void spread(Complex value, const GriddingTap& tap, Complex* grid) const;

  /// Flat offsets of the tap footprint into a grid.
  std::array<std::size_t, kKernelTaps * kKernelTaps> offsets(const GriddingTap& tap) const;

private:
  std::size_t height_;
  std::size_t width_;
  std::size_t grid_rows_;
  std::size_t grid_cols_;
  KaiserBessel kernel_;
  std::vector<double> deapod_rows_;
  std::vector<double> deapod_cols_;
  struct Plans;
  std::unique_ptr<Plans> plans_;
};

/// Direct O(N M) evaluation of the same transform; test oracle.
CxVector direct_dft(const CxVector& image, std::size_t height, std::size_t width, std::span<const double> coords);
CxVector direct_dft_adjoint(const CxVector& samples, std::size_t height, std::size_t width,
                            std::span<const double> coords);

} // namespace bardip

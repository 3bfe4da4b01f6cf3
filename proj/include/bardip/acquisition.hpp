#pragma once

#include "bardip/dictionary.hpp"
#include "bardip/epg.hpp"
#include "bardip/nufft.hpp"
#include "bardip/tsmi.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace bardip {

/// Per-frame non-Cartesian sampling pattern. coords is frames x samples x 2
/// (kx, ky) in cycles/pixel, dcf is frames x samples.
struct Trajectory {
  std::size_t frames = 0;
  std::size_t samples_per_frame = 0;
  std::vector<double> coords;
  std::vector<double> dcf;

  std::span<const double> frame_coords(std::size_t l) const {
    return {coords.data() + 2 * l * samples_per_frame, 2 * samples_per_frame};
  }
  std::span<const double> frame_dcf(std::size_t l) const {
    return {dcf.data() + l * samples_per_frame, samples_per_frame};
  }
  void validate() const;
};

inline constexpr double kGoldenAngle = 2.399963229728653; // pi * (3 - sqrt(5))

/// One variable-density Archimedean arm, radius 0.5 * s^density_exponent and
/// `rotations` turns over s in [0, 1), rotated by the golden angle from frame
/// to frame. Density compensation is radius times local arc spacing,
/// normalised to unit mean.
Trajectory make_spiral_trajectory(std::size_t height, std::size_t width, std::size_t frames,
                                  std::size_t samples_per_frame, double density_exponent, int rotations);

/// Receive sensitivities, N x c.
struct CoilMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  CxMatrix maps;

  std::size_t coils() const { return static_cast<std::size_t>(maps.cols()); }

  static CoilMaps single(std::size_t height, std::size_t width);
  /// Smooth Gaussian profiles centred around the field of view, normalised to
  /// unit sum of squares at every pixel.
  static CoilMaps gaussian(std::size_t height, std::size_t width, std::size_t coils);
};

/// Measurements y, stored coil-major: index ((coil * frames) + frame) * samples + sample.
struct KSpaceData {
  std::size_t coils = 0;
  std::size_t frames = 0;
  std::size_t samples = 0;
  CxVector values;

  KSpaceData() = default;
  KSpaceData(std::size_t c, std::size_t l, std::size_t m)
      : coils(c), frames(l), samples(m), values(CxVector::Zero(static_cast<Eigen::Index>(c * l * m))) {}

  Complex& at(std::size_t c, std::size_t l, std::size_t m) { return values[index(c, l, m)]; }
  Complex at(std::size_t c, std::size_t l, std::size_t m) const { return values[index(c, l, m)]; }
  Eigen::Index index(std::size_t c, std::size_t l, std::size_t m) const {
    return static_cast<Eigen::Index>((c * frames + l) * samples + m);
  }
  double norm() const { return values.norm(); }
};

/// The acquisition operator A: SVD temporal expansion, coil weighting and
/// per-frame NUFFT, plus its adjoint. Frame l of channel image x is
/// sum_k x_k conj(v[l, k]); linearity lets every frame be interpolated from K
/// oversampled grids per coil.
class AcquisitionOperator {
public:
  AcquisitionOperator(std::size_t height, std::size_t width, Trajectory traj, CoilMaps coils, SvdBasis basis);

  KSpaceData forward(const Tsmi& x) const;
  Tsmi adjoint(const KSpaceData& y) const;

  std::size_t height() const { return nufft_.height(); }
  std::size_t width() const { return nufft_.width(); }
  std::size_t channels() const { return basis_.k(); }
  const Trajectory& trajectory() const { return traj_; }
  const CoilMaps& coils() const { return coils_; }
  const SvdBasis& basis() const { return basis_; }

  /// sqrt(dcf) laid out like KSpaceData::values.
  const CxVector& sqrt_dcf() const { return sqrt_dcf_; }

private:
  Nufft2d nufft_;
  Trajectory traj_;
  CoilMaps coils_;
  SvdBasis basis_;
  std::vector<GriddingTap> taps_;
  CxVector sqrt_dcf_;
};

KSpaceData forward_A(const Tsmi& x, const Trajectory& traj, const CoilMaps& coils, const SvdBasis& basis);
Tsmi adjoint_A(const KSpaceData& y, const Trajectory& traj, const CoilMaps& coils, const SvdBasis& basis);

/// x0 = (||y|| / ||A A^H y||) A^H y. With `precondition` the back-projection
/// uses A^H(dcf * y) instead; the scaling rule is unchanged.
Tsmi scaled_back_projection(const KSpaceData& y, const AcquisitionOperator& op, bool precondition = false);

/// Ground-truth channel images: pixel p is PD_p * epg_fisp(T1_p, T2_p) * v.
/// Pixels with PD == 0 are left at zero.
Tsmi ground_truth_tsmi(const std::vector<TissueParams>& qmaps, std::size_t height, std::size_t width,
                       const SequenceParams& seq, const SvdBasis& basis);

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Forward-simulates k-space from quantitative maps and adds i.i.d. complex
/// Gaussian noise with total variance chosen so that
/// 20 log10(||signal|| / ||noise||) equals snr_db in expectation.
KSpaceData simulate_kspace(const std::vector<TissueParams>& qmaps, std::size_t height, std::size_t width,
                           const SequenceParams& seq, const AcquisitionOperator& op, double snr_db,
                           std::uint64_t seed);

void add_noise(KSpaceData& y, double snr_db, std::uint64_t seed);

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);
void save_kspace(const std::filesystem::path& path, const KSpaceData& y);
KSpaceData load_kspace(const std::filesystem::path& path);

} // namespace bardip

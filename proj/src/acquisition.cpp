#include "bardip/acquisition.hpp"
#include "bardip/io/container.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace bardip {

void Trajectory::validate() const {
  if (coords.size() != 2 * frames * samples_per_frame || dcf.size() != frames * samples_per_frame) {
    throw DimensionError("trajectory arrays do not match frames x samples");
  }
  for (double c : coords) {
    if (!(c >= -0.5 && c < 0.5)) {
      throw std::out_of_range(fmt::format("trajectory coordinate {} outside [-0.5, 0.5)", c));
    }
  }
  for (double w : dcf) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("density compensation weights must be positive and finite");
    }
  }
}

Trajectory make_spiral_trajectory(std::size_t height, std::size_t width, std::size_t frames,
                                  std::size_t samples_per_frame, double density_exponent, int rotations) {
  if (height == 0 || width == 0 || frames == 0 || samples_per_frame == 0) {
    throw std::invalid_argument("trajectory dimensions must be positive");
  }
  if (!(density_exponent >= 1.0)) {
    throw std::invalid_argument("density exponent must be >= 1");
  }
  if (rotations < 1) {
    throw std::invalid_argument("spiral needs at least one turn");
  }
  const std::size_t M = samples_per_frame;
  std::vector<double> radius(M), angle(M);
  for (std::size_t j = 0; j < M; ++j) {
    const double s = static_cast<double>(j) / static_cast<double>(M);
    radius[j] = 0.5 * std::pow(s, density_exponent);
    angle[j] = 2.0 * std::numbers::pi * rotations * s;
  }

  std::vector<double> w(M, 1.0);
  if (M > 1) {
    auto point = [&](std::size_t j) {
      return std::array<double, 2>{radius[j] * std::cos(angle[j]), radius[j] * std::sin(angle[j])};
    };
    auto dist = [&](std::size_t a, std::size_t b) {
      const auto pa = point(a);
      const auto pb = point(b);
      return std::hypot(pa[0] - pb[0], pa[1] - pb[1]);
    };
    const double r_floor = 0.5 * radius[1];
    double mean = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      double spacing = 0.0;
      if (j == 0) {
        spacing = dist(0, 1);
      } else if (j + 1 == M) {
        spacing = dist(j - 1, j);
      } else {
        spacing = 0.5 * (dist(j - 1, j) + dist(j, j + 1));
      }
      w[j] = std::max(radius[j], r_floor) * spacing;
      mean += w[j];
    }
    mean /= static_cast<double>(M);
    for (double& x : w) {
      x /= mean;
    }
  }

  Trajectory traj;
  traj.frames = frames;
  traj.samples_per_frame = M;
  traj.coords.resize(2 * frames * M);
  traj.dcf.resize(frames * M);
  for (std::size_t l = 0; l < frames; ++l) {
    const double rot = kGoldenAngle * static_cast<double>(l);
    for (std::size_t j = 0; j < M; ++j) {
      const double a = angle[j] + rot;
      double kx = radius[j] * std::cos(a);
      double ky = radius[j] * std::sin(a);
      // Radius stays below 0.5, so only rounding can reach the open bound.
      kx = std::clamp(kx, -0.5, std::nextafter(0.5, 0.0));
      ky = std::clamp(ky, -0.5, std::nextafter(0.5, 0.0));
      traj.coords[2 * (l * M + j)] = kx;
      traj.coords[2 * (l * M + j) + 1] = ky;
      traj.dcf[l * M + j] = w[j];
    }
  }
  return traj;
}

CoilMaps CoilMaps::single(std::size_t height, std::size_t width) {
  return {height, width, CxMatrix::Ones(static_cast<Eigen::Index>(height * width), 1)};
}

CoilMaps CoilMaps::gaussian(std::size_t height, std::size_t width, std::size_t coils) {
  if (coils == 0) {
    throw std::invalid_argument("need at least one coil");
  }
  if (coils == 1) {
    return single(height, width);
  }
  const auto N = static_cast<Eigen::Index>(height * width);
  CxMatrix maps(N, static_cast<Eigen::Index>(coils));
  const double cy = 0.5 * static_cast<double>(height);
  const double cx = 0.5 * static_cast<double>(width);
  const double ring = 0.5 * std::min(cy, cx);
  const double sigma = 0.6 * std::min(cy, cx);
  for (std::size_t i = 0; i < coils; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(coils);
    const double py = cy + ring * std::sin(a);
    const double px = cx + ring * std::cos(a);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double d2 = std::pow(static_cast<double>(r) - py, 2) + std::pow(static_cast<double>(c) - px, 2);
        maps(static_cast<Eigen::Index>(r * width + c), static_cast<Eigen::Index>(i)) =
            std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  for (Eigen::Index p = 0; p < N; ++p) {
    maps.row(p) /= maps.row(p).norm();
  }
  return {height, width, maps};
}

AcquisitionOperator::AcquisitionOperator(std::size_t height, std::size_t width, Trajectory traj, CoilMaps coils,
                                         SvdBasis basis)
    : nufft_(height, width), traj_(std::move(traj)), coils_(std::move(coils)), basis_(std::move(basis)) {
  traj_.validate();
  if (coils_.height != height || coils_.width != width ||
      static_cast<std::size_t>(coils_.maps.rows()) != height * width) {
    throw DimensionError("coil maps do not match the image size");
  }
  if (basis_.timeframes() != traj_.frames) {
    throw DimensionError(fmt::format("basis has {} timeframes, trajectory {}", basis_.timeframes(), traj_.frames));
  }
  taps_ = nufft_.taps(traj_.coords);
  const std::size_t c = coils_.coils();
  sqrt_dcf_.resize(static_cast<Eigen::Index>(c * traj_.dcf.size()));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < traj_.dcf.size(); ++j) {
      sqrt_dcf_[static_cast<Eigen::Index>(i * traj_.dcf.size() + j)] = std::sqrt(traj_.dcf[j]);
    }
  }
}

KSpaceData AcquisitionOperator::forward(const Tsmi& x) const {
  const std::size_t K = basis_.k();
  if (x.height != height() || x.width != width() || x.channels() != K) {
    throw DimensionError(fmt::format("TSMI {}x{}x{} does not match operator {}x{}x{}", x.height, x.width,
                                     x.channels(), height(), width(), K));
  }
  const std::size_t L = traj_.frames;
  const std::size_t M = traj_.samples_per_frame;
  const std::size_t G = nufft_.grid_size();
  KSpaceData y(coils_.coils(), L, M);
  std::vector<Complex> grids(K * G);
  CxVector img(static_cast<Eigen::Index>(nufft_.pixels()));
  const CxMatrix vconj = basis_.v.conjugate();
  std::vector<Complex> acc(K);
  for (std::size_t i = 0; i < coils_.coils(); ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      img = coils_.maps.col(static_cast<Eigen::Index>(i)).cwiseProduct(x.data.col(static_cast<Eigen::Index>(k)));
      nufft_.image_to_grid(img.data(), grids.data() + k * G);
    }
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t m = 0; m < M; ++m) {
        const auto& tap = taps_[l * M + m];
        const auto off = nufft_.offsets(tap);
        std::fill(acc.begin(), acc.end(), Complex(0.0));
        for (std::size_t a = 0; a < kKernelTaps; ++a) {
          for (std::size_t b = 0; b < kKernelTaps; ++b) {
            const double w = tap.wrow[a] * tap.wcol[b];
            const std::size_t o = off[a * kKernelTaps + b];
            for (std::size_t k = 0; k < K; ++k) {
              acc[k] += w * grids[k * G + o];
            }
          }
        }
        Complex s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          s += vconj(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) * acc[k];
        }
        y.at(i, l, m) = s;
      }
    }
  }
  return y;
}

Tsmi AcquisitionOperator::adjoint(const KSpaceData& y) const {
  const std::size_t K = basis_.k();
  const std::size_t L = traj_.frames;
  const std::size_t M = traj_.samples_per_frame;
  if (y.coils != coils_.coils() || y.frames != L || y.samples != M) {
    throw DimensionError(fmt::format("k-space {}x{}x{} does not match operator {}x{}x{}", y.coils, y.frames,
                                     y.samples, coils_.coils(), L, M));
  }
  const std::size_t G = nufft_.grid_size();
  Tsmi x(height(), width(), K);
  std::vector<Complex> grids(K * G);
  CxVector img(static_cast<Eigen::Index>(nufft_.pixels()));
  std::vector<Complex> s(K);
  for (std::size_t i = 0; i < coils_.coils(); ++i) {
    std::fill(grids.begin(), grids.end(), Complex(0.0));
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t m = 0; m < M; ++m) {
        const Complex val = y.at(i, l, m);
        if (val == Complex(0.0)) {
          continue;
        }
        for (std::size_t k = 0; k < K; ++k) {
          s[k] = basis_.v(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) * val;
        }
        const auto& tap = taps_[l * M + m];
        const auto off = nufft_.offsets(tap);
        for (std::size_t a = 0; a < kKernelTaps; ++a) {
          for (std::size_t b = 0; b < kKernelTaps; ++b) {
            const double w = tap.wrow[a] * tap.wcol[b];
            const std::size_t o = off[a * kKernelTaps + b];
            for (std::size_t k = 0; k < K; ++k) {
              grids[k * G + o] += w * s[k];
            }
          }
        }
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      nufft_.grid_to_image(grids.data() + k * G, img.data());
      x.data.col(static_cast<Eigen::Index>(k)) +=
          coils_.maps.col(static_cast<Eigen::Index>(i)).conjugate().cwiseProduct(img);
    }
  }
  return x;
}

KSpaceData forward_A(const Tsmi& x, const Trajectory& traj, const CoilMaps& coils, const SvdBasis& basis) {
  return AcquisitionOperator(x.height, x.width, traj, coils, basis).forward(x);
}

Tsmi adjoint_A(const KSpaceData& y, const Trajectory& traj, const CoilMaps& coils, const SvdBasis& basis) {
  return AcquisitionOperator(coils.height, coils.width, traj, coils, basis).adjoint(y);
}

Tsmi scaled_back_projection(const KSpaceData& y, const AcquisitionOperator& op, bool precondition) {
  const double ynorm = y.norm();
  if (ynorm == 0.0) {
    throw std::invalid_argument("cannot back-project all-zero k-space data");
  }
  Tsmi z;
  if (precondition) {
    KSpaceData w = y;
    w.values = w.values.cwiseProduct(op.sqrt_dcf().cwiseAbs2());
    z = op.adjoint(w);
  } else {
    z = op.adjoint(y);
  }
  const double denom = op.forward(z).norm();
  if (denom == 0.0 || !std::isfinite(denom)) {
    throw Error("A A^H y vanishes; the operator is degenerate for this data");
  }
  z.data *= ynorm / denom;
  return z;
}

Tsmi ground_truth_tsmi(const std::vector<TissueParams>& qmaps, std::size_t height, std::size_t width,
                       const SequenceParams& seq, const SvdBasis& basis) {
  if (qmaps.size() != height * width) {
    throw DimensionError("map size does not match image dimensions");
  }
  if (basis.timeframes() != seq.n_timeframes()) {
    throw DimensionError("basis does not match sequence length");
  }
  Tsmi x(height, width, basis.k());
  std::map<std::pair<double, double>, Eigen::RowVectorXcd> cache;
  for (std::size_t p = 0; p < qmaps.size(); ++p) {
    const auto& q = qmaps[p];
    if (q.pd == Complex(0.0)) {
      continue;
    }
    if (!std::isfinite(q.pd.real()) || !std::isfinite(q.pd.imag())) {
      throw std::invalid_argument(fmt::format("non-finite PD at pixel {}", p));
    }
    auto key = std::make_pair(q.t1_ms, q.t2_ms);
    auto it = cache.find(key);
    if (it == cache.end()) {
      const Fingerprint f = epg_fisp(q.t1_ms, q.t2_ms, seq);
      it = cache.emplace(key, f.transpose() * basis.v).first;
    }
    x.data.row(static_cast<Eigen::Index>(p)) = q.pd * it->second;
  }
  return x;
}

void add_noise(KSpaceData& y, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0) {
    return;
  }
  if (!(snr_db > 0.0)) {
    throw std::invalid_argument("SNR must be positive (or infinite for noiseless data)");
  }
  const auto n = static_cast<double>(y.values.size());
  const double sigma = y.norm() / (std::sqrt(n) * std::pow(10.0, snr_db / 20.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma / std::sqrt(2.0));
  for (Eigen::Index i = 0; i < y.values.size(); ++i) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    y.values[i] += Complex(re, im);
  }
}

KSpaceData simulate_kspace(const std::vector<TissueParams>& qmaps, std::size_t height, std::size_t width,
                           const SequenceParams& seq, const AcquisitionOperator& op, double snr_db,
                           std::uint64_t seed) {
  for (const auto& q : qmaps) {
    if (q.pd != Complex(0.0) && (!(q.t1_ms > 0.0) || !(q.t2_ms > 0.0))) {
      throw std::invalid_argument("tissue with non-zero PD needs positive T1 and T2");
    }
  }
  KSpaceData y = op.forward(ground_truth_tsmi(qmaps, height, width, seq, op.basis()));
  add_noise(y, snr_db, seed);
  return y;
}

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  traj.validate();
  io::BinaryWriter w(path, "MRFT");
  w.u64(traj.frames);
  w.u64(traj.samples_per_frame);
  w.f64s(traj.coords);
  w.f64s(traj.dcf);
  w.close();
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  io::BinaryReader r(path, "MRFT");
  Trajectory t;
  t.frames = r.u64();
  t.samples_per_frame = r.u64();
  t.coords.resize(2 * t.frames * t.samples_per_frame);
  t.dcf.resize(t.frames * t.samples_per_frame);
  r.f64s(t.coords);
  r.f64s(t.dcf);
  r.expect_end();
  t.validate();
  return t;
}

void save_kspace(const std::filesystem::path& path, const KSpaceData& y) {
  io::BinaryWriter w(path, "MRFK");
  w.u64(y.coils);
  w.u64(y.frames);
  w.u64(y.samples);
  w.complexes({y.values.data(), static_cast<std::size_t>(y.values.size())});
  w.close();
}

KSpaceData load_kspace(const std::filesystem::path& path) {
  io::BinaryReader r(path, "MRFK");
  const auto c = r.u64();
  const auto l = r.u64();
  const auto m = r.u64();
  KSpaceData y(c, l, m);
  r.complexes({y.values.data(), static_cast<std::size_t>(y.values.size())});
  r.expect_end();
  return y;
}

} // namespace bardip

#pragma once

#include "bardip/acquisition.hpp"
#include "bardip/bdae.hpp"
#include "bardip/phantom.hpp"
#include "bardip/unet.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace bardip {

enum class ReconMode { bardip, dipmrf };

struct ReconConfig {
  ReconMode mode = ReconMode::bardip;
  double lambda = 1e-5;
  double lr = 1e-4;
  std::size_t iterations = 30000;
  std::size_t log_every = 50;
  std::uint64_t seed = 0;
  /// Channel counts are overridden with 2K.
  UnetConfig unet;
  /// Aᴴ(DCF y) instead of Aᴴ y for the back-projection.
  bool precondition_x0 = false;
  /// Rescale y so the back-projection has unit RMS per real component. The
  /// Unet starts near the data scale; results and logged losses are reported
  /// in the original units.
  bool normalize_data = true;
  /// dipmrf: train the encoder alongside the Unet.
  bool train_encoder = true;
  /// bardip ablation: let the TSMI term's gradient flow through the frozen BDAE.
  bool differentiate_bdae = false;
  /// When set, the Unet is checkpointed here at every logged iteration.
  std::filesystem::path checkpoint_dir;
  /// When set, log rows are appended here (and flushed) as they are produced.
  std::filesystem::path log_path;

  void validate() const;
};

inline constexpr double kNoMetric = std::numeric_limits<double>::quiet_NaN();

/// State after `iter` parameter updates. loss_tsmi is ||x - x_B||^2 (not
/// weighted by lambda); loss_total is what the Unet minimises.
struct IterationRecord {
  std::size_t iter = 0;
  double loss_k = 0.0;
  double loss_tsmi = 0.0;
  double loss_total = 0.0;
  double loss_k_normalized = 0.0; // loss_k / ||sqrt(DCF) y||^2
  double mape_t1 = kNoMetric;
  double mape_t2 = kNoMetric;
  double psnr_pd = kNoMetric;
};

struct IterationLog {
  std::vector<IterationRecord> rows;

  static std::string csv_header();
  static std::string csv_row(const IterationRecord& r);
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static IterationLog read_csv(const std::filesystem::path& path);
};

struct ReconResult {
  std::vector<TissueParams> qmaps;
  Tsmi xhat;
  Tsmi x0;
  IterationLog log;
};

// Tsmi <-> [1, 2K, H, W] image tensor; channel c < K holds Re(x[:, c]), channel
// K + c holds Im(x[:, c]).
nn::Tensor tsmi_to_image(const Tsmi& x);
Tsmi image_to_tsmi(const nn::Tensor& image);

/// ||sqrt(DCF) (y - A x)||_2^2 for the TSMI held by `image`.
nn::Tensor kspace_loss(const nn::Tensor& image, const KSpaceData& y, const AcquisitionOperator& op);

/// kspace_loss + lambda ||x - x_B||_2^2 with x_B held constant.
nn::Tensor coupled_loss(const nn::Tensor& image, const Tsmi& xb, const KSpaceData& y, const AcquisitionOperator& op,
                        double lambda);

/// Deep-image-prior reconstruction with the frozen BDAE as Bloch projector.
/// Maps come from bloch_project of the final Unet output.
ReconResult reconstruct_bardip(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& bdae,
                               const ReconConfig& config, const QuantMaps* truth = nullptr);

/// Baseline: Unet on the k-space loss only; a freshly initialised encoder is
/// trained in parallel against ||x_B - x||^2 through the frozen decoder.
ReconResult reconstruct_dipmrf(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& pretrained,
                               const ReconConfig& config, const QuantMaps* truth = nullptr);

ReconResult reconstruct(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& bdae,
                        const ReconConfig& config, const QuantMaps* truth = nullptr);

} // namespace bardip

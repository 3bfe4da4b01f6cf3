#pragma once

#include "bardip/dictionary.hpp"
#include "bardip/nn/layers.hpp"
#include "bardip/tsmi.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace bardip {

/// Networks see T1 / 3000 ms and T2 / 300 ms.
struct LabelScaling {
  double t1_ms = 3000.0;
  double t2_ms = 300.0;
};

struct BdaeArchitecture {
  std::size_t channels = kDefaultSvdChannels; // K; networks use 2K reals
  std::size_t hidden = 300;
  nn::Activation activation = nn::Activation::relu;
  LabelScaling scaling;
};

/// 2K -> hidden -> hidden -> 2: l2-normalised fingerprint to scaled (T1, T2).
class EncoderNet {
public:
  EncoderNet() = default;
  EncoderNet(const BdaeArchitecture& arch, nn::Rng& rng);
  nn::Tensor forward(const nn::Tensor& normalized) const { return mlp_.forward(normalized); }
  nn::ParameterList parameters() const { return mlp_.parameters("encoder"); }

private:
  nn::Mlp mlp_;
};

/// 2 -> hidden -> hidden -> 2K: scaled (T1, T2) to the unit-PD compressed fingerprint.
class DecoderNet {
public:
  DecoderNet() = default;
  DecoderNet(const BdaeArchitecture& arch, nn::Rng& rng);
  nn::Tensor forward(const nn::Tensor& scaled_labels) const { return mlp_.forward(scaled_labels); }
  nn::ParameterList parameters() const { return mlp_.parameters("decoder"); }

private:
  nn::Mlp mlp_;
};

struct Bdae {
  BdaeArchitecture arch;
  EncoderNet encoder;
  DecoderNet decoder;

  Bdae(const BdaeArchitecture& arch, std::uint64_t seed);
  nn::ParameterList parameters() const;
};

struct AugmentationConfig {
  double noise_sigma = 0.01; // per real and imaginary component
  bool random_phasor = true;
};

struct PretrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double lr_final = 1e-5; // cosine-annealed from lr over the epochs
  double lambda_e = 0.1;
  double t2_weight = 10.0;
  AugmentationConfig augmentation;
  std::uint64_t seed = 0;
};

struct PretrainHistory {
  std::vector<double> epoch_loss; // mean batch loss per epoch
};

// Complex K-vectors <-> 2K reals laid out as [Re_0..Re_{K-1}, Im_0..Im_{K-1}].
nn::Buffer to_real_channels(const CxMatrix& rows);
CxMatrix from_real_channels(std::span<const double> values, std::size_t rows, std::size_t k);

/// Training objective per batch, divided by the batch size:
///   |T1 - T1'|_1 + t2_weight |T2 - T2'|_1 + lambda_e ||x - x'||_2^2
/// with labels in network units and x' = decoder(encoder(input)).
nn::Tensor bdae_loss(const Bdae& bdae, const nn::Tensor& normalized_input, const nn::Tensor& labels,
                     const nn::Tensor& clean, double lambda_e, double t2_weight);

/// Supervised pretraining on the compressed dictionary. Every epoch visits each
/// atom once, in a fresh seeded order, with a fresh random phasor and noise draw.
PretrainHistory pretrain_bdae(Bdae& bdae, const CompressedDictionary& cdict, const PretrainConfig& config,
                              const std::function<void(std::size_t, double)>& on_epoch = {});

struct ParameterMaps {
  RealVector t1_ms;
  RealVector t2_ms;
};

/// Pixelwise encoder pass; all-zero pixels map to (0, 0).
ParameterMaps encode(const EncoderNet& encoder, const LabelScaling& scaling, const Tsmi& tsmi);
Tsmi decode(const DecoderNet& decoder, const LabelScaling& scaling, const ParameterMaps& maps, std::size_t height,
            std::size_t width, std::size_t channels);

/// PD_p = <x_p, d_p> / ||d_p||^2 (least-squares scale of d_p onto x_p), 0 where d_p = 0.
CxVector analytic_pd(const Tsmi& xhat, const Tsmi& dhat);

struct BlochProjection {
  Tsmi xb;
  std::vector<TissueParams> qmaps;
};

/// encode -> decode -> analytic PD; xb_p = PD_p * D_p.
BlochProjection bloch_project(const Bdae& bdae, const Tsmi& xhat);
BlochProjection bloch_project(const EncoderNet& encoder, const DecoderNet& decoder, const LabelScaling& scaling,
                              const Tsmi& xhat);

/// sum_p min_c ||x_p - c d_p||^2 over rows of [N, 2K] tensors in the real
/// channel layout, with c the analytic PD of each row. Gradients: 2 r_p for
/// x_p and -2 conj(c_p) r_p for d_p, where r_p = x_p - c_p d_p (c_p is
/// stationary, so its own variation drops out).
nn::Tensor projection_residual_loss(const nn::Tensor& x, const nn::Tensor& d);

void save_bdae(const std::filesystem::path& path, const Bdae& bdae);
void load_bdae(const std::filesystem::path& path, Bdae& bdae);

struct AtomEvaluation {
  double t1_true, t2_true, t1_est, t2_est, decoder_rel_error;
};
/// Encoder applied to each noiseless atom and decoder applied to each grid label.
std::vector<AtomEvaluation> evaluate_bdae(const Bdae& bdae, const CompressedDictionary& cdict);
void write_evaluation_csv(const std::filesystem::path& path, const std::vector<AtomEvaluation>& rows);

} // namespace bardip

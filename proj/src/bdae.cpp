#include "bardip/bdae.hpp"

#include "bardip/nn/adam.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace bardip {

namespace {

std::vector<std::size_t> mlp_sizes(std::size_t in, std::size_t hidden, std::size_t out) { return {in, hidden, hidden, out}; }

// Rows scaled to unit l2 norm; zero rows stay zero.
CxMatrix normalize_rows(const CxMatrix& rows) {
  CxMatrix out = rows;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) {
      out.row(r) /= n;
    }
  }
  return out;
}

} // namespace

EncoderNet::EncoderNet(const BdaeArchitecture& arch, nn::Rng& rng)
    : mlp_(mlp_sizes(2 * arch.channels, arch.hidden, 2), arch.activation, rng) {}

DecoderNet::DecoderNet(const BdaeArchitecture& arch, nn::Rng& rng)
    : mlp_(mlp_sizes(2, arch.hidden, 2 * arch.channels), arch.activation, rng) {}

// Encoder weights are drawn first, then decoder weights, from one stream.
Bdae::Bdae(const BdaeArchitecture& a, std::uint64_t seed) : arch(a) {
  if (a.channels == 0 || a.hidden == 0) {
    throw std::invalid_argument("BDAE needs channels > 0 and hidden > 0");
  }
  nn::Rng rng(seed);
  encoder = EncoderNet(a, rng);
  decoder = DecoderNet(a, rng);
}

nn::ParameterList Bdae::parameters() const {
  auto params = encoder.parameters();
  auto dec = decoder.parameters();
  params.insert(params.end(), dec.begin(), dec.end());
  return params;
}

nn::Buffer to_real_channels(const CxMatrix& rows) {
  const auto n = static_cast<std::size_t>(rows.rows());
  const auto k = static_cast<std::size_t>(rows.cols());
  nn::Buffer out(n * 2 * k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      const Complex z = rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      out[r * 2 * k + c] = z.real();
      out[r * 2 * k + k + c] = z.imag();
    }
  }
  return out;
}

CxMatrix from_real_channels(std::span<const double> values, std::size_t rows, std::size_t k) {
  if (values.size() != rows * 2 * k) {
    throw DimensionError(fmt::format("expected {} x {} real channels, got {} values", rows, 2 * k, values.size()));
  }
  CxMatrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          Complex(values[r * 2 * k + c], values[r * 2 * k + k + c]);
    }
  }
  return out;
}

nn::Tensor bdae_loss(const Bdae& bdae, const nn::Tensor& normalized_input, const nn::Tensor& labels,
                     const nn::Tensor& clean, double lambda_e, double t2_weight) {
  const std::size_t batch = normalized_input.dim(0);
  if (labels.shape() != nn::Shape{batch, 2} || clean.shape() != nn::Shape{batch, 2 * bdae.arch.channels}) {
    throw DimensionError("bdae_loss: inconsistent batch shapes");
  }
  const nn::Tensor q = bdae.encoder.forward(normalized_input);
  const nn::Tensor xhat = bdae.decoder.forward(q);
  const nn::Tensor l_t1 = nn::sae_loss(nn::slice_columns(q, 0, 1), nn::slice_columns(labels, 0, 1));
  const nn::Tensor l_t2 = nn::sae_loss(nn::slice_columns(q, 1, 1), nn::slice_columns(labels, 1, 1));
  const nn::Tensor l_x = nn::sse_loss(xhat, clean);
  const nn::Tensor total = nn::add(nn::add(l_t1, nn::scale(l_t2, t2_weight)), nn::scale(l_x, lambda_e));
  return nn::scale(total, 1.0 / static_cast<double>(batch));
}

PretrainHistory pretrain_bdae(Bdae& bdae, const CompressedDictionary& cdict, const PretrainConfig& config,
                              const std::function<void(std::size_t, double)>& on_epoch) {
  const std::size_t d = cdict.size();
  const std::size_t k = bdae.arch.channels;
  if (d == 0 || static_cast<std::size_t>(cdict.atoms_k.cols()) != k) {
    throw DimensionError(
        fmt::format("dictionary has {} atoms of width {}, BDAE expects width {}", d, cdict.atoms_k.cols(), k));
  }
  if (config.batch_size == 0) {
    throw std::invalid_argument("batch_size must be positive");
  }
  if (!(config.lr_final > 0.0) || !(config.lr_final <= config.lr)) {
    throw std::invalid_argument(fmt::format("need 0 < lr_final <= lr, got {} and {}", config.lr_final, config.lr));
  }

  const nn::Buffer clean_all = to_real_channels(cdict.atoms_k);
  std::vector<double> labels_all(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    labels_all[2 * i] = cdict.grid[i].t1_ms / bdae.arch.scaling.t1_ms;
    labels_all[2 * i + 1] = cdict.grid[i].t2_ms / bdae.arch.scaling.t2_ms;
  }

  nn::Adam adam(nn::tensors(bdae.parameters()), nn::AdamConfig{.lr = config.lr});
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, config.augmentation.noise_sigma);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  PretrainHistory history;
  history.epoch_loss.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double progress = config.epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(config.epochs - 1) : 0.0;
    adam.set_lr(config.lr_final + 0.5 * (config.lr - config.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < d; start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, d - start);
      CxMatrix noisy(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
      nn::Buffer labels(2 * b);
      nn::Buffer clean(b * 2 * k);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t a = order[start + i];
        const Complex phasor = config.augmentation.random_phasor ? std::polar(1.0, phase(rng)) : Complex(1.0, 0.0);
        for (std::size_t c = 0; c < k; ++c) {
          const double re = noise(rng);
          const double im = noise(rng);
          noisy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
              phasor * cdict.atoms_k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) + Complex(re, im);
        }
        labels[2 * i] = labels_all[2 * a];
        labels[2 * i + 1] = labels_all[2 * a + 1];
        std::copy_n(clean_all.begin() + static_cast<std::ptrdiff_t>(a * 2 * k), 2 * k,
                    clean.begin() + static_cast<std::ptrdiff_t>(i * 2 * k));
      }
      const nn::Tensor input({b, 2 * k}, to_real_channels(normalize_rows(noisy)));
      const nn::Tensor label_t({b, 2}, std::move(labels));
      const nn::Tensor clean_t({b, 2 * k}, std::move(clean));

      adam.zero_grad();
      nn::Tensor loss = bdae_loss(bdae, input, label_t, clean_t, config.lambda_e, config.t2_weight);
      if (!std::isfinite(loss.item())) {
        throw TrainingDiverged(fmt::format("BDAE loss is not finite at epoch {}", epoch));
      }
      loss.backward();
      adam.step();
      loss_sum += loss.item();
      ++batches;
    }
    history.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (on_epoch) {
      on_epoch(epoch, history.epoch_loss.back());
    }
  }
  return history;
}

ParameterMaps encode(const EncoderNet& encoder, const LabelScaling& scaling, const Tsmi& tsmi) {
  nn::NoGradGuard no_grad;
  const std::size_t n = tsmi.pixels();
  const std::size_t k = tsmi.channels();
  const nn::Tensor input({n, 2 * k}, to_real_channels(normalize_rows(tsmi.data)));
  const nn::Tensor q = encoder.forward(input);
  ParameterMaps maps{RealVector::Zero(static_cast<Eigen::Index>(n)), RealVector::Zero(static_cast<Eigen::Index>(n))};
  const auto qv = q.values();
  for (std::size_t p = 0; p < n; ++p) {
    if (tsmi.data.row(static_cast<Eigen::Index>(p)).squaredNorm() == 0.0) {
      continue;
    }
    maps.t1_ms(static_cast<Eigen::Index>(p)) = qv[2 * p] * scaling.t1_ms;
    maps.t2_ms(static_cast<Eigen::Index>(p)) = qv[2 * p + 1] * scaling.t2_ms;
  }
  return maps;
}

Tsmi decode(const DecoderNet& decoder, const LabelScaling& scaling, const ParameterMaps& maps, std::size_t height,
            std::size_t width, std::size_t channels) {
  nn::NoGradGuard no_grad;
  const std::size_t n = height * width;
  if (static_cast<std::size_t>(maps.t1_ms.size()) != n || static_cast<std::size_t>(maps.t2_ms.size()) != n) {
    throw DimensionError(fmt::format("parameter maps have {} pixels, expected {}", maps.t1_ms.size(), n));
  }
  nn::Buffer labels(2 * n);
  for (std::size_t p = 0; p < n; ++p) {
    labels[2 * p] = maps.t1_ms(static_cast<Eigen::Index>(p)) / scaling.t1_ms;
    labels[2 * p + 1] = maps.t2_ms(static_cast<Eigen::Index>(p)) / scaling.t2_ms;
  }
  const nn::Tensor out = decoder.forward(nn::Tensor({n, 2}, std::move(labels)));
  Tsmi tsmi(height, width, channels);
  tsmi.data = from_real_channels(out.values(), n, channels);
  return tsmi;
}

CxVector analytic_pd(const Tsmi& xhat, const Tsmi& dhat) {
  if (xhat.data.rows() != dhat.data.rows() || xhat.data.cols() != dhat.data.cols()) {
    throw DimensionError("analytic_pd: TSMI shapes differ");
  }
  CxVector pd(xhat.data.rows());
  for (Eigen::Index p = 0; p < pd.size(); ++p) {
    const double dn = dhat.data.row(p).squaredNorm();
    // Eigen's dot conjugates its left operand: sum conj(d) x.
    pd(p) = dn > 0.0 ? dhat.data.row(p).dot(xhat.data.row(p)) / dn : Complex(0.0, 0.0);
  }
  return pd;
}

BlochProjection bloch_project(const EncoderNet& encoder, const DecoderNet& decoder, const LabelScaling& scaling,
                              const Tsmi& xhat) {
  const ParameterMaps maps = encode(encoder, scaling, xhat);
  const Tsmi dhat = decode(decoder, scaling, maps, xhat.height, xhat.width, xhat.channels());
  const CxVector pd = analytic_pd(xhat, dhat);
  BlochProjection out{Tsmi(xhat.height, xhat.width, xhat.channels()), {}};
  out.qmaps.resize(xhat.pixels());
  for (Eigen::Index p = 0; p < pd.size(); ++p) {
    out.xb.data.row(p) = pd(p) * dhat.data.row(p);
    out.qmaps[static_cast<std::size_t>(p)] = TissueParams{maps.t1_ms(p), maps.t2_ms(p), pd(p)};
  }
  return out;
}

BlochProjection bloch_project(const Bdae& bdae, const Tsmi& xhat) {
  if (xhat.channels() != bdae.arch.channels) {
    throw DimensionError(fmt::format("TSMI has {} channels, BDAE expects {}", xhat.channels(), bdae.arch.channels));
  }
  return bloch_project(bdae.encoder, bdae.decoder, bdae.arch.scaling, xhat);
}

nn::Tensor projection_residual_loss(const nn::Tensor& x, const nn::Tensor& d) {
  if (x.rank() != 2 || x.shape() != d.shape() || x.dim(1) % 2 != 0) {
    throw DimensionError("projection_residual_loss: need equal [N, 2K] shapes");
  }
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1) / 2;
  const auto xv = x.values();
  const auto dv = d.values();
  std::vector<Complex> c(n);
  nn::Buffer r(n * 2 * k);
  double total = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double* xp = xv.data() + p * 2 * k;
    const double* dp = dv.data() + p * 2 * k;
    Complex inner = 0.0;
    double dn = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const Complex xz(xp[j], xp[k + j]);
      const Complex dz(dp[j], dp[k + j]);
      inner += std::conj(dz) * xz;
      dn += std::norm(dz);
    }
    c[p] = dn > 0.0 ? inner / dn : Complex(0.0, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const Complex rz = Complex(xp[j], xp[k + j]) - c[p] * Complex(dp[j], dp[k + j]);
      r[p * 2 * k + j] = rz.real();
      r[p * 2 * k + k + j] = rz.imag();
      total += std::norm(rz);
    }
  }
  return nn::Tensor::make_result({1}, {total}, {x, d}, [n, k, c = std::move(c), r = std::move(r)](nn::Node& o) {
    const double g = o.grad[0];
    if (auto* gx = nn::input_grad(o, 0)) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        (*gx)[i] += 2.0 * g * r[i];
      }
    }
    if (auto* gd = nn::input_grad(o, 1)) {
      for (std::size_t p = 0; p < n; ++p) {
        const Complex cc = std::conj(c[p]);
        for (std::size_t j = 0; j < k; ++j) {
          const Complex v = -2.0 * g * cc * Complex(r[p * 2 * k + j], r[p * 2 * k + k + j]);
          (*gd)[p * 2 * k + j] += v.real();
          (*gd)[p * 2 * k + k + j] += v.imag();
        }
      }
    }
  });
}

void save_bdae(const std::filesystem::path& path, const Bdae& bdae) { nn::save_checkpoint(path, bdae.parameters()); }

void load_bdae(const std::filesystem::path& path, Bdae& bdae) {
  auto params = bdae.parameters();
  nn::load_checkpoint(path, params);
}

std::vector<AtomEvaluation> evaluate_bdae(const Bdae& bdae, const CompressedDictionary& cdict) {
  const std::size_t d = cdict.size();
  Tsmi atoms(1, d, bdae.arch.channels);
  atoms.data = cdict.atoms_k;
  const ParameterMaps est = encode(bdae.encoder, bdae.arch.scaling, atoms);
  ParameterMaps truth{RealVector(static_cast<Eigen::Index>(d)), RealVector(static_cast<Eigen::Index>(d))};
  for (std::size_t i = 0; i < d; ++i) {
    truth.t1_ms(static_cast<Eigen::Index>(i)) = cdict.grid[i].t1_ms;
    truth.t2_ms(static_cast<Eigen::Index>(i)) = cdict.grid[i].t2_ms;
  }
  const Tsmi decoded = decode(bdae.decoder, bdae.arch.scaling, truth, 1, d, bdae.arch.channels);
  std::vector<AtomEvaluation> rows(d);
  for (std::size_t i = 0; i < d; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double ref = cdict.atoms_k.row(r).norm();
    rows[i] = AtomEvaluation{cdict.grid[i].t1_ms, cdict.grid[i].t2_ms, est.t1_ms(r), est.t2_ms(r),
                             ref > 0.0 ? (decoded.data.row(r) - cdict.atoms_k.row(r)).norm() / ref : 0.0};
  }
  return rows;
}

void write_evaluation_csv(const std::filesystem::path& path, const std::vector<AtomEvaluation>& rows) {
  std::ofstream out(path);
  if (!out) {
    throw Error(fmt::format("cannot write {}", path.string()));
  }
  out << "index,t1_true_ms,t2_true_ms,t1_est_ms,t2_est_ms,decoder_rel_error\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g}\n", i, r.t1_true, r.t2_true, r.t1_est, r.t2_est,
                       r.decoder_rel_error);
  }
}

} // namespace bardip

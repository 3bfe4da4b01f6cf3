#include "bardip/reconstruct.hpp"

#include "bardip/metrics.hpp"
#include "bardip/nn/adam.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace bardip {

void ReconConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument(fmt::format("lambda must be finite and >= 0, got {}", lambda));
  }
  if (!(lr > 0.0)) {
    throw std::invalid_argument(fmt::format("learning rate must be positive, got {}", lr));
  }
  if (iterations < 1) {
    throw std::invalid_argument("iterations must be >= 1");
  }
  if (log_every < 1) {
    throw std::invalid_argument("log_every must be >= 1");
  }
  if (unet.levels < 1 || unet.base_channels < 1) {
    throw std::invalid_argument("Unet needs at least one level and one base channel");
  }
}

std::string IterationLog::csv_header() {
  return "iter,loss_k,loss_tsmi,mape_t1,mape_t2,psnr_pd,loss_total,loss_k_normalized\n";
}

std::string IterationLog::csv_row(const IterationRecord& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.iter, r.loss_k, r.loss_tsmi,
                     r.mape_t1, r.mape_t2, r.psnr_pd, r.loss_total, r.loss_k_normalized);
}

std::string IterationLog::csv() const {
  std::string out = csv_header();
  for (const auto& r : rows) {
    out += csv_row(r);
  }
  return out;
}

void IterationLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(fmt::format("cannot write {}", path.string()));
  }
  out << csv();
}

IterationLog IterationLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(fmt::format("cannot read {}", path.string()));
  }
  std::string line;
  std::getline(in, line);
  if (line + "\n" != csv_header()) {
    throw FormatError(fmt::format("{}: unexpected iteration log header", path.string()));
  }
  IterationLog log;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(fields, f, ',')) {
      v.push_back(std::strtod(f.c_str(), nullptr));
    }
    if (v.size() != 8) {
      throw FormatError(fmt::format("{}: malformed log row '{}'", path.string(), line));
    }
    log.rows.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[6], v[7], v[3], v[4], v[5]});
  }
  return log;
}

nn::Tensor tsmi_to_image(const Tsmi& x) {
  const std::size_t n = x.pixels();
  const std::size_t k = x.channels();
  nn::Buffer v(2 * k * n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      const Complex z = x.data(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c));
      v[c * n + p] = z.real();
      v[(k + c) * n + p] = z.imag();
    }
  }
  return nn::Tensor({1, 2 * k, x.height, x.width}, std::move(v));
}

Tsmi image_to_tsmi(const nn::Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) % 2 != 0) {
    throw DimensionError("expected a [1, 2K, H, W] image tensor, got " + nn::shape_string(image.shape()));
  }
  const std::size_t k = image.dim(1) / 2;
  Tsmi x(image.dim(2), image.dim(3), k);
  const std::size_t n = x.pixels();
  const auto v = image.values();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      x.data(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = Complex(v[c * n + p], v[(k + c) * n + p]);
    }
  }
  return x;
}

nn::Tensor kspace_loss(const nn::Tensor& image, const KSpaceData& y, const AcquisitionOperator& op) {
  const Tsmi x = image_to_tsmi(image);
  KSpaceData r = op.forward(x);
  if (r.values.size() != y.values.size()) {
    throw DimensionError("k-space data do not match the operator");
  }
  r.values = op.sqrt_dcf().cwiseProduct(r.values - y.values);
  const double value = r.values.squaredNorm();
  return nn::Tensor::make_result({1}, {value}, {image}, [&op, r = std::move(r)](nn::Node& o) mutable {
    auto* g = nn::input_grad(o, 0);
    if (!g) {
      return;
    }
    // d/dx ||W^(1/2) (A x - y)||^2 = 2 A^H W^(1/2) r, split into real channels.
    r.values = op.sqrt_dcf().cwiseProduct(r.values);
    const Tsmi back = op.adjoint(r);
    const std::size_t n = back.pixels();
    const std::size_t k = back.channels();
    const double s = 2.0 * o.grad[0];
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t p = 0; p < n; ++p) {
        const Complex z = back.data(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c));
        (*g)[c * n + p] += s * z.real();
        (*g)[(k + c) * n + p] += s * z.imag();
      }
    }
  });
}

nn::Tensor coupled_loss(const nn::Tensor& image, const Tsmi& xb, const KSpaceData& y, const AcquisitionOperator& op,
                        double lambda) {
  const nn::Tensor lk = kspace_loss(image, y, op);
  if (lambda == 0.0) {
    return lk;
  }
  return nn::add(lk, nn::scale(nn::sse_loss(image, tsmi_to_image(xb)), lambda));
}

namespace {

// Same weights, no gradient bookkeeping.
Bdae frozen_copy(const Bdae& src) {
  Bdae out(src.arch, 0);
  const auto from = src.parameters();
  auto to = out.parameters();
  for (std::size_t i = 0; i < from.size(); ++i) {
    std::copy(from[i].tensor.values().begin(), from[i].tensor.values().end(), to[i].tensor.values().begin());
    to[i].tensor.set_requires_grad(false);
  }
  return out;
}

// [1, 2K, H, W] -> [H W, 2K] rows in the BDAE channel layout.
nn::Tensor image_rows(const nn::Tensor& image) {
  const std::size_t c = image.dim(1);
  return nn::transpose(nn::reshape(image, {c, image.dim(2) * image.dim(3)}));
}

double weighted_norm2(const KSpaceData& y, const AcquisitionOperator& op) {
  return op.sqrt_dcf().cwiseProduct(y.values).squaredNorm();
}

class LoopIo {
public:
  LoopIo(const ReconConfig& cfg) : cfg_(cfg) {
    if (!cfg.log_path.empty()) {
      if (cfg.log_path.has_parent_path()) {
        std::filesystem::create_directories(cfg.log_path.parent_path());
      }
      log_.open(cfg.log_path, std::ios::binary | std::ios::trunc);
      if (!log_) {
        throw Error(fmt::format("cannot write {}", cfg.log_path.string()));
      }
      log_ << IterationLog::csv_header() << std::flush;
    }
    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
    }
  }

  void record(IterationLog& log, const IterationRecord& r) {
    log.rows.push_back(r);
    if (log_.is_open()) {
      log_ << IterationLog::csv_row(r) << std::flush;
    }
  }

  void checkpoint(std::size_t iter, const nn::ParameterList& unet, const nn::ParameterList* encoder) {
    if (cfg_.checkpoint_dir.empty()) {
      return;
    }
    nn::save_checkpoint(cfg_.checkpoint_dir / "unet.mrfm", unet);
    if (encoder) {
      nn::save_checkpoint(cfg_.checkpoint_dir / "encoder.mrfm", *encoder);
    }
    last_good_ = iter;
  }

  [[noreturn]] void diverged(std::size_t iter, const std::string& what) const {
    const std::string where =
        last_good_ ? fmt::format("last good checkpoint (iteration {}) in {}", *last_good_, cfg_.checkpoint_dir.string())
                   : std::string("no checkpoint written");
    throw TrainingDiverged(fmt::format("reconstruction diverged at iteration {}: {}; {}", iter, what, where));
  }

private:
  const ReconConfig& cfg_;
  std::ofstream log_;
  std::optional<std::size_t> last_good_;
};

void fill_metrics(IterationRecord& r, const std::vector<TissueParams>& qmaps, const QuantMaps* truth) {
  if (!truth) {
    return;
  }
  const MetricsReport m = evaluate_maps(qmaps, *truth);
  r.mape_t1 = m.mape_t1;
  r.mape_t2 = m.mape_t2;
  r.psnr_pd = m.psnr_pd;
}

struct Setup {
  Tsmi x0;          // original units
  KSpaceData y;     // scaled by `scale`
  nn::Tensor input; // scaled x0
  double scale = 1.0;
  double y_norm2 = 0.0;

  // Losses and images in the original units.
  double loss(double scaled) const { return scaled / (scale * scale); }
  void unscale(Tsmi& x) const { x.data /= scale; }
  void unscale(std::vector<TissueParams>& qmaps) const {
    for (auto& q : qmaps) {
      q.pd /= scale;
    }
  }
};

Setup prepare(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& bdae, const ReconConfig& config,
              const QuantMaps* truth) {
  config.validate();
  if (bdae.arch.channels != op.channels()) {
    throw DimensionError(fmt::format("BDAE expects {} channels, operator has {}", bdae.arch.channels, op.channels()));
  }
  if (truth && truth->pixels() != op.height() * op.width()) {
    throw DimensionError("ground-truth maps do not match the image size");
  }
  Setup s;
  s.x0 = scaled_back_projection(y, op, config.precondition_x0);
  if (config.normalize_data) {
    s.scale = std::sqrt(static_cast<double>(2 * s.x0.data.size())) / s.x0.data.norm();
  }
  s.y = y;
  s.y.values *= s.scale;
  Tsmi x0 = s.x0;
  x0.data *= s.scale;
  s.input = tsmi_to_image(x0);
  s.y_norm2 = weighted_norm2(s.y, op);
  return s;
}

UnetConfig unet_config(const ReconConfig& config, std::size_t k) {
  UnetConfig u = config.unet;
  u.in_channels = 2 * k;
  u.out_channels = 2 * k;
  return u;
}

double tsmi_distance2(const Tsmi& a, const Tsmi& b) { return (a.data - b.data).squaredNorm(); }

} // namespace

ReconResult reconstruct_bardip(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& pretrained,
                               const ReconConfig& config, const QuantMaps* truth) {
  const Setup setup = prepare(y, op, pretrained, config, truth);
  const Bdae bdae = frozen_copy(pretrained);
  const std::size_t k = op.channels();
  nn::Rng rng(config.seed);
  const Unet unet(unet_config(config, k), rng);
  const auto unet_params = unet.parameters();
  nn::Adam adam(nn::tensors(unet_params), nn::AdamConfig{.lr = config.lr});
  LoopIo io(config);

  ReconResult result;
  result.x0 = setup.x0;
  for (std::size_t i = 0;; ++i) {
    const nn::Tensor xt = unet.forward(setup.input);
    Tsmi xhat = image_to_tsmi(xt);
    BlochProjection bp = bloch_project(bdae, xhat);
    const nn::Tensor lk = kspace_loss(xt, setup.y, op);
    nn::Tensor lt;
    if (config.differentiate_bdae) {
      const nn::Tensor rows = image_rows(xt);
      const nn::Tensor q = bdae.encoder.forward(nn::l2_normalize_rows(rows));
      lt = projection_residual_loss(rows, bdae.decoder.forward(q));
    } else {
      lt = nn::sse_loss(xt, tsmi_to_image(bp.xb));
    }
    nn::Tensor total = nn::add(lk, nn::scale(lt, config.lambda));
    if (!std::isfinite(total.item())) {
      io.diverged(i, fmt::format("loss is {}", total.item()));
    }

    const bool last = i == config.iterations;
    if (i % config.log_every == 0 || last) {
      setup.unscale(xhat);
      setup.unscale(bp.qmaps);
      IterationRecord r{i, setup.loss(lk.item()), setup.loss(lt.item()), setup.loss(total.item()),
                        lk.item() / setup.y_norm2};
      fill_metrics(r, bp.qmaps, truth);
      io.record(result.log, r);
      io.checkpoint(i, unet_params, nullptr);
    }
    if (last) {
      result.qmaps = std::move(bp.qmaps);
      result.xhat = std::move(xhat);
      return result;
    }
    adam.zero_grad();
    total.backward();
    try {
      adam.step();
    } catch (const TrainingDiverged& e) {
      io.diverged(i, e.what());
    }
  }
}

ReconResult reconstruct_dipmrf(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& pretrained,
                               const ReconConfig& config, const QuantMaps* truth) {
  const Setup setup = prepare(y, op, pretrained, config, truth);
  const Bdae frozen = frozen_copy(pretrained);
  const std::size_t k = op.channels();
  nn::Rng rng(config.seed);
  const Unet unet(unet_config(config, k), rng);
  const EncoderNet encoder(pretrained.arch, rng);
  const auto unet_params = unet.parameters();
  const auto encoder_params = encoder.parameters();
  nn::Adam adam(nn::tensors(unet_params), nn::AdamConfig{.lr = config.lr});
  nn::Adam encoder_adam(nn::tensors(encoder_params), nn::AdamConfig{.lr = config.lr});
  LoopIo io(config);

  ReconResult result;
  result.x0 = setup.x0;
  for (std::size_t i = 0;; ++i) {
    const nn::Tensor xt = unet.forward(setup.input);
    Tsmi xhat = image_to_tsmi(xt);
    nn::Tensor lk = kspace_loss(xt, setup.y, op);
    if (!std::isfinite(lk.item())) {
      io.diverged(i, fmt::format("k-space loss is {}", lk.item()));
    }

    const bool last = i == config.iterations;
    if (i % config.log_every == 0 || last) {
      Tsmi x = xhat;
      BlochProjection bp = bloch_project(encoder, frozen.decoder, frozen.arch.scaling, x);
      setup.unscale(x);
      setup.unscale(bp.xb);
      setup.unscale(bp.qmaps);
      IterationRecord r{i, setup.loss(lk.item()), tsmi_distance2(x, bp.xb), setup.loss(lk.item()),
                        lk.item() / setup.y_norm2};
      fill_metrics(r, bp.qmaps, truth);
      io.record(result.log, r);
      io.checkpoint(i, unet_params, &encoder_params);
      if (last) {
        result.qmaps = std::move(bp.qmaps);
        result.xhat = std::move(x);
        return result;
      }
    }
    adam.zero_grad();
    lk.backward();
    try {
      adam.step();
    } catch (const TrainingDiverged& e) {
      io.diverged(i, e.what());
    }

    if (config.train_encoder) {
      const nn::Tensor rows({xhat.pixels(), 2 * k}, to_real_channels(xhat.data));
      const nn::Tensor q = encoder.forward(nn::l2_normalize_rows(rows));
      nn::Tensor le = projection_residual_loss(rows, frozen.decoder.forward(q));
      encoder_adam.zero_grad();
      le.backward();
      try {
        encoder_adam.step();
      } catch (const TrainingDiverged& e) {
        io.diverged(i, fmt::format("encoder: {}", e.what()));
      }
    }
  }
}

ReconResult reconstruct(const KSpaceData& y, const AcquisitionOperator& op, const Bdae& bdae,
                        const ReconConfig& config, const QuantMaps* truth) {
  return config.mode == ReconMode::bardip ? reconstruct_bardip(y, op, bdae, config, truth)
                                          : reconstruct_dipmrf(y, op, bdae, config, truth);
}

} // namespace bardip

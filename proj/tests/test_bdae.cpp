#include "bardip/bdae.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

using namespace bardip;

namespace {

struct Trained {
  CompressedDictionary cdict;
  Bdae bdae{BdaeArchitecture{}, 1};
};

// Desk-scale pretraining, shared by the quality checks below.
const Trained& trained() {
  static const Trained t = [] {
    const SequenceParams seq = default_fisp_schedule(200);
    const Dictionary dict = build_dictionary(linear_grid(100, 3000, 100), linear_grid(10, 300, 10), seq);
    Trained out{compress(dict, compute_svd_basis(dict, 5))};
    PretrainConfig cfg;
    cfg.seed = 2;
    pretrain_bdae(out.bdae, out.cdict, cfg);
    return out;
  }();
  return t;
}

double mape_of(const std::vector<AtomEvaluation>& rows, bool t1) {
  double total = 0.0;
  for (const auto& r : rows) {
    total += t1 ? std::abs(r.t1_est - r.t1_true) / r.t1_true : std::abs(r.t2_est - r.t2_true) / r.t2_true;
  }
  return 100.0 * total / static_cast<double>(rows.size());
}

Tsmi atoms_as_tsmi(const CompressedDictionary& cd) {
  Tsmi x(1, cd.size(), cd.atoms_k.cols());
  x.data = cd.atoms_k;
  return x;
}

} // namespace

TEST_CASE("architecture") {
  const Bdae b(BdaeArchitecture{}, 3);
  const auto params = b.parameters();
  // Two three-layer MLPs: 10 -> 300 -> 300 -> 2 and 2 -> 300 -> 300 -> 10.
  REQUIRE(params.size() == 12);
  CHECK(params[0].tensor.shape() == nn::Shape{300, 10});
  CHECK(params[4].tensor.shape() == nn::Shape{2, 300});
  CHECK(params[6].tensor.shape() == nn::Shape{300, 2});
  CHECK(params[10].tensor.shape() == nn::Shape{10, 300});
  CHECK(params[0].name == "encoder.0.weight");
  CHECK(params[6].name == "decoder.0.weight");
}

TEST_CASE("real channel layout round trip") {
  std::mt19937_64 rng(1);
  const CxMatrix m = test::random_cx(3, 4, rng);
  const auto v = to_real_channels(m);
  CHECK(v[1] == m(0, 1).real());
  CHECK(v[4 + 1] == m(0, 1).imag());
  CHECK(from_real_channels(v, 3, 4) == m);
  CHECK_THROWS_AS(from_real_channels(v, 2, 4), DimensionError);
}

TEST_CASE("zero epochs leave the networks untouched") {
  const Dictionary dict = build_dictionary({500, 1000}, {50, 100}, default_fisp_schedule(20));
  const CompressedDictionary cd = compress(dict, compute_svd_basis(dict, 2));
  Bdae a(BdaeArchitecture{.channels = 2, .hidden = 8}, 4);
  const Bdae b(BdaeArchitecture{.channels = 2, .hidden = 8}, 4);
  PretrainConfig cfg;
  cfg.epochs = 0;
  CHECK(pretrain_bdae(a, cd, cfg).epoch_loss.empty());
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(), pb[i].tensor.values().begin()));
  }
  Bdae wrong(BdaeArchitecture{.channels = 3, .hidden = 8}, 4);
  CHECK_THROWS_AS(pretrain_bdae(wrong, cd, cfg), DimensionError);
}

TEST_CASE("pretraining is deterministic and reduces the loss") {
  const Dictionary dict = build_dictionary(linear_grid(200, 2000, 300), linear_grid(20, 200, 60), default_fisp_schedule(40));
  const CompressedDictionary cd = compress(dict, compute_svd_basis(dict, 3));
  PretrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.seed = 9;
  Bdae a(BdaeArchitecture{.channels = 3, .hidden = 32}, 1);
  Bdae b(BdaeArchitecture{.channels = 3, .hidden = 32}, 1);
  const auto ha = pretrain_bdae(a, cd, cfg);
  const auto hb = pretrain_bdae(b, cd, cfg);
  CHECK(ha.epoch_loss == hb.epoch_loss);
  CHECK(ha.epoch_loss.back() < ha.epoch_loss.front());
}

TEST_CASE("pretraining loss gradient") {
  std::mt19937_64 rng(3);
  const Bdae b(BdaeArchitecture{.channels = 2, .hidden = 6, .activation = nn::Activation::tanh}, 2);
  const nn::Tensor input = nn::l2_normalize_rows(test::random_tensor({4, 4}, rng, false));
  const nn::Tensor labels = test::random_tensor({4, 2}, rng, false);
  const nn::Tensor clean = test::random_tensor({4, 4}, rng, false);
  const double err = test::gradient_error([&] { return bdae_loss(b, input, labels, clean, 0.1, 10.0); },
                                          nn::tensors(b.parameters()));
  CHECK(err < 1e-4);
}

TEST_CASE("analytic PD") {
  std::mt19937_64 rng(4);
  Tsmi x(1, 100, 5), d(1, 100, 5);
  d.data = test::random_cx(100, 5, rng);
  x.data = test::random_cx(100, 5, rng);
  const CxVector pd = analytic_pd(x, d);
  for (Eigen::Index p = 0; p < 100; ++p) {
    const Complex want = test::least_squares_scale(x.data.row(p).transpose(), d.data.row(p).transpose());
    CHECK(std::abs(pd(p) - want) < 1e-6);
  }

  const Complex c(0.3, -2.0);
  x.data = c * d.data;
  const CxVector exact = analytic_pd(x, d);
  CHECK((exact.array() - c).abs().maxCoeff() < 1e-12);

  d.data.row(7).setZero();
  CHECK(analytic_pd(x, d)(7) == Complex(0.0, 0.0));
  CHECK_THROWS_AS(analytic_pd(Tsmi(1, 3, 5), Tsmi(1, 3, 4)), DimensionError);
}

TEST_CASE("projection residual loss") {
  std::mt19937_64 rng(5);
  nn::Tensor x = test::random_tensor({6, 6}, rng);
  nn::Tensor d = test::random_tensor({6, 6}, rng);
  CHECK(test::gradient_error([&] { return projection_residual_loss(x, d); }, {x, d}) < 1e-4);

  // Equals ||x - PD d||^2 with PD from analytic_pd.
  Tsmi xt(1, 6, 3), dt(1, 6, 3);
  xt.data = from_real_channels(x.values(), 6, 3);
  dt.data = from_real_channels(d.values(), 6, 3);
  const CxVector pd = analytic_pd(xt, dt);
  double want = 0.0;
  for (Eigen::Index p = 0; p < 6; ++p) {
    want += (xt.data.row(p) - pd(p) * dt.data.row(p)).squaredNorm();
  }
  CHECK(projection_residual_loss(x, d).item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("encode handles zero pixels and global scale") {
  const Bdae b(BdaeArchitecture{}, 6);
  std::mt19937_64 rng(6);
  Tsmi x(2, 3, 5);
  x.data = test::random_cx(6, 5, rng);
  x.data.row(4).setZero();
  const ParameterMaps m = encode(b.encoder, b.arch.scaling, x);
  CHECK(m.t1_ms(4) == 0.0);
  CHECK(m.t2_ms(4) == 0.0);
  Tsmi scaled = x;
  scaled.data *= 17.5;
  const ParameterMaps ms = encode(b.encoder, b.arch.scaling, scaled);
  CHECK((m.t1_ms - ms.t1_ms).cwiseAbs().maxCoeff() < 1e-9);

  const BlochProjection zero = bloch_project(b, Tsmi(2, 2, 5));
  CHECK(zero.xb.data.norm() == 0.0);
  for (const auto& q : zero.qmaps) {
    CHECK(q.t1_ms == 0.0);
    CHECK(q.pd == Complex(0.0, 0.0));
  }
  CHECK_THROWS_AS(bloch_project(b, Tsmi(2, 2, 4)), DimensionError);
}

TEST_CASE("decode is pure") {
  const Bdae b(BdaeArchitecture{}, 7);
  ParameterMaps m{RealVector::Constant(3, 900.0), RealVector::Constant(3, 90.0)};
  const Tsmi d = decode(b.decoder, b.arch.scaling, m, 1, 3, 5);
  CHECK(d.data.row(0) == d.data.row(2));
  CHECK(decode(b.decoder, b.arch.scaling, m, 1, 3, 5).data == d.data);
}

TEST_CASE("desk-scale pretrained quality") {
  const Trained& t = trained();
  const auto rows = evaluate_bdae(t.bdae, t.cdict);
  REQUIRE(rows.size() == t.cdict.size());
  CHECK(mape_of(rows, true) < 5.0);
  CHECK(mape_of(rows, false) < 10.0);

  double mean_decoder = 0.0;
  for (const auto& r : rows) {
    mean_decoder += r.decoder_rel_error;
  }
  mean_decoder /= static_cast<double>(rows.size());
  MESSAGE("mean decoder relative error ", mean_decoder);
  CHECK(mean_decoder < 0.05);

  SUBCASE("phase invariance is approximate") {
    Tsmi x = atoms_as_tsmi(t.cdict);
    const ParameterMaps a = encode(t.bdae.encoder, t.bdae.arch.scaling, x);
    x.data *= std::polar(1.0, 1.3);
    const ParameterMaps b = encode(t.bdae.encoder, t.bdae.arch.scaling, x);
    const double drift = 100.0 * ((a.t1_ms - b.t1_ms).cwiseAbs().array() / a.t1_ms.array().abs()).mean();
    MESSAGE("mean T1 change under a global phase: ", drift, "%");
    CHECK(drift < 5.0);
  }

  SUBCASE("Bloch projection of dictionary atoms") {
    const Tsmi x = atoms_as_tsmi(t.cdict);
    const BlochProjection once = bloch_project(t.bdae, x);
    const double residual = (once.xb.data - x.data).norm() / x.data.norm();
    MESSAGE("single-pass relative residual ", residual);
    CHECK(residual < 0.05);
    const BlochProjection twice = bloch_project(t.bdae, once.xb);
    CHECK((twice.xb.data - once.xb.data).norm() < (once.xb.data - x.data).norm());
  }

  SUBCASE("decode after encode beats sigma = 0.01 noise") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 0.01);
    const Tsmi x = atoms_as_tsmi(t.cdict);
    const Tsmi y = decode(t.bdae.decoder, t.bdae.arch.scaling, encode(t.bdae.encoder, t.bdae.arch.scaling, x), 1,
                          x.pixels(), x.channels());
    std::size_t better = 0;
    for (Eigen::Index p = 0; p < x.data.rows(); ++p) {
      double noise = 0.0;
      for (Eigen::Index c = 0; c < x.data.cols(); ++c) {
        noise += std::norm(Complex(g(rng), g(rng)));
      }
      better += (y.data.row(p) - x.data.row(p)).norm() < std::sqrt(noise) ? 1 : 0;
    }
    const double fraction = static_cast<double>(better) / static_cast<double>(x.data.rows());
    MESSAGE("fraction of atoms reconstructed within the noise: ", fraction);
    CHECK(fraction >= 0.9);
  }
}

TEST_CASE("checkpoint and evaluation CSV") {
  const auto dir = std::filesystem::temp_directory_path();
  const Bdae a(BdaeArchitecture{.channels = 2, .hidden = 5}, 1);
  Bdae b(BdaeArchitecture{.channels = 2, .hidden = 5}, 2);
  save_bdae(dir / "bardip_bdae.mrfm", a);
  load_bdae(dir / "bardip_bdae.mrfm", b);
  CHECK(std::equal(a.parameters()[3].tensor.values().begin(), a.parameters()[3].tensor.values().end(),
                   b.parameters()[3].tensor.values().begin()));

  const Dictionary dict = build_dictionary({500, 1000}, {50, 100}, default_fisp_schedule(20));
  const CompressedDictionary cd = compress(dict, compute_svd_basis(dict, 2));
  const auto rows = evaluate_bdae(a, cd);
  write_evaluation_csv(dir / "bardip_eval.csv", rows);
  std::ifstream in(dir / "bardip_eval.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    ++lines;
  }
  CHECK(lines == cd.size() + 1);
  std::filesystem::remove(dir / "bardip_bdae.mrfm");
  std::filesystem::remove(dir / "bardip_eval.csv");
}

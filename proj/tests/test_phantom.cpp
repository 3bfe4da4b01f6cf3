#include "bardip/metrics.hpp"
#include "bardip/phantom.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace bardip;

TEST_CASE("phantom construction") {
  const Phantom a = make_brain_phantom(64, 64, 3);
  const Phantom b = make_brain_phantom(64, 64, 3);
  const Phantom c = make_brain_phantom(64, 64, 4);
  REQUIRE(a.pixels() == 64 * 64);
  std::size_t inside = 0;
  bool same = true, differs = false;
  for (std::size_t p = 0; p < a.pixels(); ++p) {
    same = same && a.qmaps[p].pd == b.qmaps[p].pd && a.qmaps[p].t1_ms == b.qmaps[p].t1_ms;
    differs = differs || a.qmaps[p].pd != c.qmaps[p].pd;
    if (a.mask[p]) {
      ++inside;
      CHECK(a.qmaps[p].t2_ms < a.qmaps[p].t1_ms);
      CHECK(a.qmaps[p].t2_ms > 0.0);
      CHECK(std::abs(a.qmaps[p].pd) > 0.0);
    } else {
      CHECK(a.qmaps[p].pd == Complex(0.0, 0.0));
      CHECK(a.qmaps[p].t1_ms == 0.0);
    }
  }
  CHECK(same);
  CHECK(differs);
  CHECK(inside > 0);
  CHECK_THROWS(make_brain_phantom(16, 64, 1));
}

TEST_CASE("tissue class counts follow ellipse areas") {
  const std::size_t h = 128, w = 128;
  const Phantom ph = make_brain_phantom(h, w, 1);
  const PhantomTissues tissues;
  const PhantomLayout& lay = brain_layout();
  auto area = [&](const Ellipse& e) { return std::numbers::pi * e.ry * static_cast<double>(h) * e.rx * static_cast<double>(w); };
  // Perimeter-sized slack for pixel-centre discretisation.
  auto slack = [&](const Ellipse& e) {
    return 2.0 * std::numbers::pi * std::max(e.ry * static_cast<double>(h), e.rx * static_cast<double>(w));
  };
  std::size_t csf = 0, gray = 0, white = 0;
  for (std::size_t p = 0; p < ph.pixels(); ++p) {
    const TissueParams& q = ph.qmaps[p];
    switch (ph.labels[p]) {
    case Tissue::csf:
      ++csf;
      CHECK(q.t1_ms == tissues.csf.t1_ms);
      CHECK(q.t2_ms == tissues.csf.t2_ms);
      break;
    case Tissue::gray:
      ++gray;
      CHECK(q.t1_ms == tissues.gray.t1_ms);
      CHECK(q.t2_ms == tissues.gray.t2_ms);
      break;
    case Tissue::white:
      ++white;
      CHECK(q.t1_ms == tissues.white.t1_ms);
      CHECK(q.t2_ms == tissues.white.t2_ms);
      break;
    case Tissue::background:
      break;
    }
  }
  const double ventricles = area(lay.ventricle_left) + area(lay.ventricle_right);
  CHECK(std::abs(static_cast<double>(csf) - ventricles) < slack(lay.ventricle_left) + slack(lay.ventricle_right));
  CHECK(std::abs(static_cast<double>(white) - (area(lay.white) - ventricles)) <
        slack(lay.white) + slack(lay.ventricle_left) + slack(lay.ventricle_right));
  CHECK(std::abs(static_cast<double>(gray) - (area(lay.head) - area(lay.white))) < slack(lay.head) + slack(lay.white));
}

TEST_CASE("MAPE") {
  const std::vector<double> truth{100.0, 200.0, 400.0, 800.0};
  const std::vector<std::uint8_t> all{1, 1, 1, 1};
  CHECK(mape(truth, truth, all) == 0.0);
  std::vector<double> scaled(truth);
  for (auto& v : scaled) {
    v *= 1.1;
  }
  CHECK(mape(scaled, truth, all) == doctest::Approx(10.0));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1.0, 10.0);
  std::vector<double> e(50), t(50);
  std::vector<std::uint8_t> m(50);
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    e[i] = u(rng);
    t[i] = u(rng);
    m[i] = i % 3 != 0;
    if (m[i]) {
      total += std::abs(e[i] - t[i]) / t[i];
      ++count;
    }
  }
  CHECK(mape(e, t, m) == doctest::Approx(100.0 * total / count).epsilon(1e-14));

  // Unmasked entries are ignored, even zero truth.
  CHECK(mape(std::vector<double>{5.0, 1.0}, std::vector<double>{0.0, 1.0}, std::vector<std::uint8_t>{0, 1}) == 0.0);
  CHECK_THROWS(mape(std::vector<double>{1.0}, std::vector<double>{0.0}, std::vector<std::uint8_t>{1}));
  CHECK_THROWS(mape(std::vector<double>{1.0}, std::vector<double>{1.0}, std::vector<std::uint8_t>{0}));
}

TEST_CASE("PSNR") {
  const std::vector<Complex> truth{1.0, 2.0, Complex(0.0, 3.0), 2.0};
  const std::vector<std::uint8_t> all{1, 1, 1, 1};
  CHECK(psnr(truth, truth, all) == kPsnrCapDb);

  // Masked mean magnitude 2: normalised truth {0.5, 1, 1.5, 1}, peak 1.5.
  // Magnitudes shifted by +-0.4 with the mean kept give a normalised offset
  // of 0.2 at every pixel, so RMSE = 0.2.
  std::vector<Complex> est{1.4, 1.6, Complex(0.0, 3.4), 1.6};
  CHECK(psnr(est, truth, all) == doctest::Approx(20.0 * std::log10(1.5 / 0.2)));

  std::vector<Complex> half(est);
  for (auto& z : half) {
    z *= Complex(0.0, 0.5);
  }
  CHECK(psnr(half, truth, all) == doctest::Approx(psnr(est, truth, all)));

  const std::vector<Complex> zero(4, 0.0);
  CHECK_THROWS(psnr(truth, zero, all));
  CHECK(std::isfinite(psnr(zero, truth, all)));
}

TEST_CASE("metrics ignore the background") {
  const Phantom ph = make_brain_phantom(32, 32, 2);
  std::vector<TissueParams> est = ph.qmaps;
  for (std::size_t p = 0; p < est.size(); ++p) {
    if (!ph.mask[p]) {
      est[p] = TissueParams{123.0, 45.0, Complex(7.0, 1.0)};
    }
  }
  const MetricsReport r = evaluate_maps(est, ph);
  CHECK(r.mape_t1 == 0.0);
  CHECK(r.mape_t2 == 0.0);
  CHECK(r.psnr_pd == kPsnrCapDb);
  CHECK(r.pixels == static_cast<std::size_t>(std::count(ph.mask.begin(), ph.mask.end(), 1)));
}

TEST_CASE("map container and previews") {
  const auto dir = std::filesystem::temp_directory_path();
  const Phantom ph = make_brain_phantom(40, 36, 7);
  save_maps(dir / "bardip_maps.bin", ph);
  const QuantMaps back = load_maps(dir / "bardip_maps.bin");
  CHECK(back.height == 40);
  CHECK(back.width == 36);
  CHECK(back.mask == ph.mask);
  for (std::size_t p = 0; p < ph.pixels(); ++p) {
    CHECK(back.qmaps[p].t1_ms == ph.qmaps[p].t1_ms);
    CHECK(std::abs(back.qmaps[p].pd - ph.qmaps[p].pd) < 1e-15);
  }

  write_previews(dir / "bardip_prev", ph);
  std::ifstream pgm(dir / "bardip_prev_t1.pgm", std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  pgm >> magic >> w >> h >> maxval;
  CHECK(magic == "P5");
  CHECK(w == 36);
  CHECK(h == 40);
  CHECK(maxval == 255);
  CHECK(std::filesystem::file_size(dir / "bardip_prev_t1.pgm") > 36 * 40);
  for (const char* f : {"bardip_maps.bin", "bardip_prev_t1.pgm", "bardip_prev_t2.pgm", "bardip_prev_pd.pgm"}) {
    std::filesystem::remove(dir / f);
  }
}

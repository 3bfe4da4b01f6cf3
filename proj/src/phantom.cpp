#include "bardip/phantom.hpp"

#include "bardip/io/container.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace bardip {

bool Ellipse::contains(double y, double x) const {
  const double dy = (y - cy) / ry;
  const double dx = (x - cx) / rx;
  return dy * dy + dx * dx <= 1.0;
}

const PhantomLayout& brain_layout() {
  static const PhantomLayout layout{
      {0.5, 0.5, 0.42, 0.34},
      {0.5, 0.5, 0.34, 0.26},
      {0.46, 0.42, 0.12, 0.04},
      {0.46, 0.58, 0.12, 0.04},
  };
  return layout;
}

namespace {

// Sum of a few low-frequency plane waves, normalised to [-1, 1].
class SmoothField {
public:
  explicit SmoothField(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq(-1.5, 1.5);
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    double total = 0.0;
    for (auto& w : waves_) {
      w = {freq(rng), freq(rng), amp(rng), phase(rng)};
      total += w[2];
    }
    for (auto& w : waves_) {
      w[2] /= total;
    }
  }

  double operator()(double y, double x) const {
    double v = 0.0;
    for (const auto& w : waves_) {
      v += w[2] * std::cos(2.0 * std::numbers::pi * (w[0] * y + w[1] * x) + w[3]);
    }
    return v;
  }

private:
  std::array<std::array<double, 4>, 4> waves_{};
};

} // namespace

Phantom make_brain_phantom(std::size_t height, std::size_t width, std::uint64_t seed, const PhantomTissues& tissues) {
  if (height < 32 || width < 32) {
    throw std::invalid_argument(fmt::format("phantom needs at least 32 x 32 pixels, got {} x {}", height, width));
  }
  for (const TissueClass* t : {&tissues.csf, &tissues.gray, &tissues.white}) {
    if (!(t->t1_ms > 0.0 && t->t2_ms > 0.0 && t->t2_ms < t->t1_ms && t->pd > 0.0)) {
      throw std::invalid_argument("tissue classes need 0 < T2 < T1 and PD > 0");
    }
  }
  std::mt19937_64 rng(seed);
  const SmoothField magnitude(rng);
  const SmoothField phase(rng);
  const PhantomLayout& lay = brain_layout();

  Phantom ph;
  ph.height = height;
  ph.width = width;
  ph.qmaps.assign(height * width, TissueParams{});
  ph.mask.assign(height * width, 0);
  ph.labels.assign(height * width, Tissue::background);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
      Tissue label = Tissue::background;
      if (lay.head.contains(y, x)) {
        label = Tissue::gray;
      }
      if (lay.white.contains(y, x)) {
        label = Tissue::white;
      }
      if (lay.ventricle_left.contains(y, x) || lay.ventricle_right.contains(y, x)) {
        label = Tissue::csf;
      }
      const std::size_t p = r * width + c;
      ph.labels[p] = label;
      if (label == Tissue::background) {
        continue;
      }
      const TissueClass& t = label == Tissue::csf ? tissues.csf : label == Tissue::gray ? tissues.gray : tissues.white;
      const double m = t.pd * (1.0 + 0.1 * magnitude(y, x));
      ph.qmaps[p] = TissueParams{t.t1_ms, t.t2_ms, std::polar(m, 0.5 * std::numbers::pi * phase(y, x))};
      ph.mask[p] = 1;
    }
  }
  return ph;
}

void save_maps(const std::filesystem::path& path, const QuantMaps& maps) {
  const std::size_t n = maps.pixels();
  if (maps.qmaps.size() != n || maps.mask.size() != n) {
    throw DimensionError("map arrays do not match height x width");
  }
  std::vector<double> plane(n);
  io::BinaryWriter w(path, "MRFQ");
  w.u64(maps.height);
  w.u64(maps.width);
  auto put = [&](auto&& f) {
    for (std::size_t p = 0; p < n; ++p) {
      plane[p] = f(p);
    }
    w.f64s(plane);
  };
  put([&](std::size_t p) { return maps.qmaps[p].t1_ms; });
  put([&](std::size_t p) { return maps.qmaps[p].t2_ms; });
  put([&](std::size_t p) { return std::abs(maps.qmaps[p].pd); });
  put([&](std::size_t p) { return std::arg(maps.qmaps[p].pd); });
  put([&](std::size_t p) { return maps.mask[p] ? 1.0 : 0.0; });
  w.close();
}

QuantMaps load_maps(const std::filesystem::path& path) {
  io::BinaryReader r(path, "MRFQ");
  QuantMaps maps;
  maps.height = r.u64();
  maps.width = r.u64();
  const std::size_t n = maps.pixels();
  if (n == 0 || n > (std::size_t{1} << 32)) {
    throw FormatError(fmt::format("{}: implausible map size {} x {}", path.string(), maps.height, maps.width));
  }
  std::vector<double> t1(n), t2(n), mag(n), arg(n), mask(n);
  r.f64s(t1);
  r.f64s(t2);
  r.f64s(mag);
  r.f64s(arg);
  r.f64s(mask);
  r.expect_end();
  maps.qmaps.resize(n);
  maps.mask.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    maps.qmaps[p] = TissueParams{t1[p], t2[p], std::polar(mag[p], arg[p])};
    maps.mask[p] = mask[p] != 0.0 ? 1 : 0;
  }
  return maps;
}

void write_pgm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t height,
               std::size_t width, double lo, double hi) {
  if (values.size() != height * width) {
    throw DimensionError("PGM values do not match height x width");
  }
  if (!(hi > lo)) {
    throw std::invalid_argument("PGM window needs hi > lo");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(fmt::format("cannot write {}", path.string()));
  }
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? std::clamp((values[i] - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    bytes[i] = static_cast<unsigned char>(std::lround(255.0 * v));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_previews(const std::filesystem::path& stem, const QuantMaps& maps) {
  const std::size_t n = maps.pixels();
  std::vector<double> t1(n), t2(n), pd(n);
  double pd_max = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    t1[p] = maps.qmaps[p].t1_ms;
    t2[p] = maps.qmaps[p].t2_ms;
    pd[p] = std::abs(maps.qmaps[p].pd);
    pd_max = std::max(pd_max, pd[p]);
  }
  const std::string base = stem.string();
  write_pgm(base + "_t1.pgm", t1, maps.height, maps.width, 0.0, kT1WindowMs);
  write_pgm(base + "_t2.pgm", t2, maps.height, maps.width, 0.0, kT2WindowMs);
  write_pgm(base + "_pd.pgm", pd, maps.height, maps.width, 0.0, pd_max > 0.0 ? pd_max : 1.0);
}

} // namespace bardip

#pragma once

#include "bardip/epg.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bardip {

enum class Tissue : std::uint8_t { background = 0, csf = 1, gray = 2, white = 3 };

struct TissueClass {
  double t1_ms;
  double t2_ms;
  double pd; // mean proton density magnitude
};

struct PhantomTissues {
  TissueClass csf{4000.0, 2000.0, 1.0};
  TissueClass gray{1300.0, 110.0, 0.8};
  TissueClass white{800.0, 70.0, 0.65};
};

/// Quantitative maps on a height x width grid, pixel p = row * width + col.
/// `mask` marks the foreground.
struct QuantMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<TissueParams> qmaps;
  std::vector<std::uint8_t> mask;

  std::size_t pixels() const { return height * width; }
};

struct Phantom : QuantMaps {
  std::vector<Tissue> labels;
};

/// Axis-aligned ellipse in normalised coordinates: centre and semi-axes are
/// fractions of the image height (y) and width (x).
struct Ellipse {
  double cy, cx, ry, rx;
  bool contains(double y, double x) const;
};

/// Brain-like layout: a gray-matter cortical ring inside the head ellipse,
/// white-matter core, two CSF ventricles. T1/T2 are piecewise constant per
/// class; PD magnitude is smoothly modulated and carries a smooth random
/// phase. Outside the mask T1 = T2 = PD = 0.
Phantom make_brain_phantom(std::size_t height, std::size_t width, std::uint64_t seed,
                           const PhantomTissues& tissues = {});

/// Regions of make_brain_phantom, in painting order (later wins).
struct PhantomLayout {
  Ellipse head;
  Ellipse white;
  Ellipse ventricle_left;
  Ellipse ventricle_right;
};
const PhantomLayout& brain_layout();

// MRFQ container: u64 height, u64 width, then N-value float64 planes T1, T2,
// |PD|, arg(PD), mask (0 or 1).
void save_maps(const std::filesystem::path& path, const QuantMaps& maps);
QuantMaps load_maps(const std::filesystem::path& path);

/// 8-bit binary PGM; values are clamped to [lo, hi] and mapped to 0..255.
void write_pgm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t height,
               std::size_t width, double lo, double hi);

inline constexpr double kT1WindowMs = 3000.0;
inline constexpr double kT2WindowMs = 300.0;

/// Writes <stem>_t1.pgm, <stem>_t2.pgm and <stem>_pd.pgm (|PD| scaled by its maximum).
void write_previews(const std::filesystem::path& stem, const QuantMaps& maps);

} // namespace bardip

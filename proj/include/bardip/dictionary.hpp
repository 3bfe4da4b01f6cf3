#pragma once

#include "bardip/epg.hpp"
#include "bardip/tsmi.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace bardip {

/// Simulated fingerprints over a (T1, T2) grid. `atoms` is D x L, row d is
/// epg_fisp(grid[d]). PD is 1 for every grid entry.
struct Dictionary {
  std::vector<TissueParams> grid;
  CxMatrix atoms;
  SequenceParams seq;

  std::size_t size() const { return grid.size(); }
  std::size_t timeframes() const { return static_cast<std::size_t>(atoms.cols()); }
};

/// Temporal subspace: v is L x K with orthonormal columns.
struct SvdBasis {
  CxMatrix v;
  RealVector singular_values;
  // Squared Frobenius norm of the matrix the basis was computed from.
  double total_energy = 0.0;

  std::size_t k() const { return static_cast<std::size_t>(v.cols()); }
  std::size_t timeframes() const { return static_cast<std::size_t>(v.rows()); }
  double captured_energy_fraction() const;
};

struct CompressedDictionary {
  CxMatrix atoms_k; // D x K
  SvdBasis basis;
  std::vector<TissueParams> grid;

  std::size_t size() const { return grid.size(); }
};

inline constexpr std::size_t kDefaultSvdChannels = 5;

/// Inclusive arithmetic range, e.g. linear_grid(100, 3000, 100).
std::vector<double> linear_grid(double first, double last, double step);

/// Cartesian product of the grids filtered to T2 <= T1, ordered T1-major.
Dictionary build_dictionary(const std::vector<double>& t1_grid, const std::vector<double>& t2_grid,
                            const SequenceParams& seq);

/// Top-k right singular vectors of the row-normalised atom matrix. Each
/// column is rotated so its largest-magnitude entry is real and positive.
SvdBasis compute_svd_basis(const Dictionary& dict, std::size_t k = kDefaultSvdChannels);

/// atoms_k = atoms * v.
CompressedDictionary compress(const Dictionary& dict, const SvdBasis& basis);

/// Back to the timeframe domain: coefficients * v^H.
CxMatrix expand(const CxMatrix& coefficients, const SvdBasis& basis);

/// Exhaustive matching by normalised correlation. Ties go to the lowest atom
/// index; an all-zero pixel yields (0, 0, 0).
std::vector<TissueParams> dict_match(const Tsmi& tsmi, const CompressedDictionary& cdict);

// MRFD container: header (D, L, K), sequence timing and angles, grid, atoms,
// then the basis when K > 0.
void save_dictionary(const std::filesystem::path& path, const Dictionary& dict, const SvdBasis* basis);
std::pair<Dictionary, std::optional<SvdBasis>> load_dictionary(const std::filesystem::path& path);

void write_grid_csv(const std::filesystem::path& path, const std::vector<TissueParams>& grid);

} // namespace bardip

#include "bardip/dictionary.hpp"
#include "bardip/io/container.hpp"

#include <Eigen/SVD>
#include <fmt/format.h>

#include <cmath>
#include <fstream>

namespace bardip {

double SvdBasis::captured_energy_fraction() const {
  if (total_energy <= 0.0) {
    return 0.0;
  }
  return singular_values.squaredNorm() / total_energy;
}

std::vector<double> linear_grid(double first, double last, double step) {
  if (!(step > 0.0) || last < first) {
    throw std::invalid_argument("linear_grid needs step > 0 and last >= first");
  }
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((last - first) / step + 1e-9)) + 1;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(first + step * static_cast<double>(i));
  }
  return out;
}

namespace {

void check_grid(const std::vector<double>& g, const char* name) {
  if (g.empty()) {
    throw std::invalid_argument(fmt::format("{} grid is empty", name));
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(g[i] > 0.0) || (i > 0 && !(g[i] > g[i - 1]))) {
      throw std::invalid_argument(fmt::format("{} grid must be positive and strictly increasing", name));
    }
  }
}

} // namespace

Dictionary build_dictionary(const std::vector<double>& t1_grid, const std::vector<double>& t2_grid,
                            const SequenceParams& seq) {
  check_grid(t1_grid, "T1");
  check_grid(t2_grid, "T2");
  seq.validate();

  Dictionary dict;
  dict.seq = seq;
  for (double t1 : t1_grid) {
    for (double t2 : t2_grid) {
      if (t2 <= t1) {
        dict.grid.push_back({t1, t2, Complex(1.0, 0.0)});
      }
    }
  }
  if (dict.grid.empty()) {
    throw std::invalid_argument("no (T1, T2) pair satisfies T2 <= T1");
  }
  const auto D = static_cast<Eigen::Index>(dict.grid.size());
  const auto L = static_cast<Eigen::Index>(seq.n_timeframes());
  dict.atoms.resize(D, L);
  for (Eigen::Index d = 0; d < D; ++d) {
    const auto& g = dict.grid[static_cast<std::size_t>(d)];
    dict.atoms.row(d) = epg_fisp(g.t1_ms, g.t2_ms, seq).transpose();
  }
  return dict;
}

SvdBasis compute_svd_basis(const Dictionary& dict, std::size_t k) {
  const std::size_t D = dict.size();
  const std::size_t L = dict.timeframes();
  if (k < 1 || k > std::min(D, L)) {
    throw std::invalid_argument(fmt::format("SVD rank {} outside [1, {}]", k, std::min(D, L)));
  }
  CxMatrix normalized = dict.atoms;
  for (Eigen::Index d = 0; d < normalized.rows(); ++d) {
    const double n = normalized.row(d).norm();
    if (n > 0.0) {
      normalized.row(d) /= n;
    }
  }
  Eigen::BDCSVD<CxMatrix> svd(normalized, Eigen::ComputeThinV);

  SvdBasis basis;
  const auto K = static_cast<Eigen::Index>(k);
  basis.v = svd.matrixV().leftCols(K);
  basis.singular_values = svd.singularValues().head(K);
  basis.total_energy = normalized.squaredNorm();
  for (Eigen::Index j = 0; j < K; ++j) {
    Eigen::Index arg = 0;
    basis.v.col(j).cwiseAbs().maxCoeff(&arg);
    const Complex peak = basis.v(arg, j);
    if (std::abs(peak) > 0.0) {
      basis.v.col(j) *= std::conj(peak) / std::abs(peak);
      basis.v(arg, j) = Complex(basis.v(arg, j).real(), 0.0);
    }
  }
  return basis;
}

CompressedDictionary compress(const Dictionary& dict, const SvdBasis& basis) {
  if (basis.timeframes() != dict.timeframes()) {
    throw DimensionError(fmt::format("basis has {} timeframes, dictionary {}", basis.timeframes(), dict.timeframes()));
  }
  return {dict.atoms * basis.v, basis, dict.grid};
}

CxMatrix expand(const CxMatrix& coefficients, const SvdBasis& basis) {
  if (static_cast<std::size_t>(coefficients.cols()) != basis.k()) {
    throw DimensionError("coefficient count does not match basis rank");
  }
  return coefficients * basis.v.adjoint();
}

std::vector<TissueParams> dict_match(const Tsmi& tsmi, const CompressedDictionary& cdict) {
  if (tsmi.channels() != static_cast<std::size_t>(cdict.atoms_k.cols())) {
    throw DimensionError(fmt::format("TSMI has {} channels, dictionary {}", tsmi.channels(), cdict.atoms_k.cols()));
  }
  const Eigen::Index D = cdict.atoms_k.rows();
  const RealVector norms = cdict.atoms_k.rowwise().norm();
  // corr(p, d) = atom_d^H x_p
  const CxMatrix corr = tsmi.data * cdict.atoms_k.adjoint();

  std::vector<TissueParams> out(tsmi.pixels());
  for (Eigen::Index p = 0; p < corr.rows(); ++p) {
    if (tsmi.data.row(p).squaredNorm() == 0.0) {
      continue;
    }
    Eigen::Index best = -1;
    double best_score = -1.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      if (norms[d] == 0.0) {
        continue;
      }
      const double score = std::abs(corr(p, d)) / norms[d];
      if (score > best_score) {
        best_score = score;
        best = d;
      }
    }
    if (best < 0) {
      continue;
    }
    const auto& g = cdict.grid[static_cast<std::size_t>(best)];
    out[static_cast<std::size_t>(p)] = {g.t1_ms, g.t2_ms, corr(p, best) / (norms[best] * norms[best])};
  }
  return out;
}

void save_dictionary(const std::filesystem::path& path, const Dictionary& dict, const SvdBasis* basis) {
  const std::size_t D = dict.size();
  const std::size_t L = dict.timeframes();
  const std::size_t K = basis ? basis->k() : 0;
  if (basis && basis->timeframes() != L) {
    throw DimensionError("basis does not match dictionary length");
  }
  io::BinaryWriter w(path, "MRFD");
  w.u64(D);
  w.u64(L);
  w.u64(K);
  w.f64(dict.seq.tr_ms);
  w.f64(dict.seq.te_ms);
  w.f64(dict.seq.ti_ms);
  w.f64s(dict.seq.flip_angles_deg);
  for (const auto& g : dict.grid) {
    w.f64(g.t1_ms);
    w.f64(g.t2_ms);
  }
  const CxRowMatrix atoms = dict.atoms;
  w.complexes({atoms.data(), static_cast<std::size_t>(atoms.size())});
  if (basis) {
    const CxRowMatrix v = basis->v;
    w.complexes({v.data(), static_cast<std::size_t>(v.size())});
    w.f64s({basis->singular_values.data(), K});
    w.f64(basis->total_energy);
  }
  w.close();
}

std::pair<Dictionary, std::optional<SvdBasis>> load_dictionary(const std::filesystem::path& path) {
  io::BinaryReader r(path, "MRFD");
  const auto D = static_cast<Eigen::Index>(r.u64());
  const auto L = static_cast<Eigen::Index>(r.u64());
  const auto K = static_cast<Eigen::Index>(r.u64());
  Dictionary dict;
  dict.seq.tr_ms = r.f64();
  dict.seq.te_ms = r.f64();
  dict.seq.ti_ms = r.f64();
  dict.seq.flip_angles_deg.resize(static_cast<std::size_t>(L));
  r.f64s(dict.seq.flip_angles_deg);
  dict.grid.resize(static_cast<std::size_t>(D));
  for (auto& g : dict.grid) {
    g.t1_ms = r.f64();
    g.t2_ms = r.f64();
    g.pd = 1.0;
  }
  CxRowMatrix atoms(D, L);
  r.complexes({atoms.data(), static_cast<std::size_t>(atoms.size())});
  dict.atoms = atoms;
  std::optional<SvdBasis> basis;
  if (K > 0) {
    SvdBasis b;
    CxRowMatrix v(L, K);
    r.complexes({v.data(), static_cast<std::size_t>(v.size())});
    b.v = v;
    b.singular_values.resize(K);
    r.f64s({b.singular_values.data(), static_cast<std::size_t>(K)});
    b.total_energy = r.f64();
    basis = std::move(b);
  }
  r.expect_end();
  return {std::move(dict), std::move(basis)};
}

void write_grid_csv(const std::filesystem::path& path, const std::vector<TissueParams>& grid) {
  std::ofstream out(path);
  if (!out) {
    throw FormatError("cannot write " + path.string());
  }
  out << "index,t1_ms,t2_ms\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out << fmt::format("{},{:.17g},{:.17g}\n", i, grid[i].t1_ms, grid[i].t2_ms);
  }
}

} // namespace bardip

#include "bardip/dictionary.hpp"

#include "support.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>
#include <limits>

using namespace bardip;

namespace {

const SequenceParams& seq200() {
  static const SequenceParams seq = default_fisp_schedule(200);
  return seq;
}

const Dictionary& desk_dictionary() {
  static const Dictionary dict =
      build_dictionary(linear_grid(100, 3000, 100), linear_grid(10, 300, 10), seq200());
  return dict;
}

// Eigenvalues of the Gram matrix of the row-normalised atoms, descending.
RealVector gram_spectrum(const Dictionary& dict) {
  CxMatrix a = dict.atoms;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    a.row(r).normalize();
  }
  const CxMatrix gram = a.adjoint() * a;
  Eigen::SelfAdjointEigenSolver<CxMatrix> eig(gram);
  return eig.eigenvalues().reverse().cwiseMax(0.0);
}

} // namespace

TEST_CASE("grid construction") {
  CHECK(linear_grid(100, 3000, 100).size() == 30);
  CHECK(linear_grid(10, 300, 10).back() == 300.0);

  const Dictionary one = build_dictionary({1000}, {100}, seq200());
  REQUIRE(one.size() == 1);
  CHECK((one.atoms.row(0).transpose() - epg_fisp(1000, 100, seq200())).norm() == 0.0);

  const Dictionary filtered = build_dictionary({100}, {100, 200}, seq200());
  REQUIRE(filtered.size() == 1);
  CHECK(filtered.grid[0].t2_ms == 100.0);

  CHECK_THROWS(build_dictionary({100}, {200}, seq200()));
  CHECK_THROWS(build_dictionary({}, {10}, seq200()));
  CHECK_THROWS(build_dictionary({200, 100}, {10}, seq200()));
}

TEST_CASE("desk-scale dictionary size matches a brute-force count") {
  std::size_t count = 0;
  for (int t1 = 100; t1 <= 3000; t1 += 100) {
    for (int t2 = 10; t2 <= 300; t2 += 10) {
      count += t2 <= t1 ? 1 : 0;
    }
  }
  CHECK(desk_dictionary().size() == count);
  // T1-major ordering.
  CHECK(desk_dictionary().grid[0].t1_ms == 100.0);
  CHECK(desk_dictionary().grid[1].t2_ms == 20.0);
}

TEST_CASE("SVD basis is orthonormal with the phase convention") {
  const SvdBasis basis = compute_svd_basis(desk_dictionary(), 5);
  CHECK(basis.k() == 5);
  const CxMatrix gram = basis.v.adjoint() * basis.v;
  CHECK((gram - CxMatrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index k = 0; k < 5; ++k) {
    Eigen::Index idx = 0;
    basis.v.col(k).cwiseAbs().maxCoeff(&idx);
    CHECK(basis.v(idx, k).imag() == 0.0);
    CHECK(basis.v(idx, k).real() > 0.0);
  }
  for (Eigen::Index k = 1; k < 5; ++k) {
    CHECK(basis.singular_values(k) <= basis.singular_values(k - 1));
  }
  CHECK_THROWS(compute_svd_basis(desk_dictionary(), 0));
  CHECK_THROWS(compute_svd_basis(desk_dictionary(), 201));
}

TEST_CASE("captured energy matches a Gram eigendecomposition") {
  const RealVector eig = gram_spectrum(desk_dictionary());
  const SvdBasis basis = compute_svd_basis(desk_dictionary(), 5);
  const double want = eig.head(5).sum() / eig.sum();
  CHECK(std::abs(basis.captured_energy_fraction() - want) < 1e-8);
}

TEST_CASE("rank-1 dictionary is captured exactly by one channel") {
  Dictionary dict = build_dictionary({1000, 2000}, {100}, seq200());
  dict.atoms.row(1) = Complex(2.0, -1.0) * dict.atoms.row(0);
  const SvdBasis basis = compute_svd_basis(dict, 1);
  CHECK(std::abs(basis.captured_energy_fraction() - 1.0) < 1e-10);
  const CompressedDictionary cd = compress(dict, basis);
  CHECK((expand(cd.atoms_k, basis) - dict.atoms).norm() / dict.atoms.norm() < 1e-10);
}

TEST_CASE("compression error equals the discarded singular values") {
  // Raw atoms: the residual of projecting onto v follows the spectrum of the
  // matrix the basis came from only when the rows are the normalised atoms.
  Dictionary dict = desk_dictionary();
  for (Eigen::Index r = 0; r < dict.atoms.rows(); ++r) {
    dict.atoms.row(r).normalize();
  }
  const RealVector eig = gram_spectrum(dict);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t k : {1, 3, 5, 8}) {
    const SvdBasis basis = compute_svd_basis(dict, k);
    const CompressedDictionary cd = compress(dict, basis);
    const double residual = (dict.atoms - expand(cd.atoms_k, basis)).norm();
    const double want = std::sqrt(eig.tail(eig.size() - static_cast<Eigen::Index>(k)).sum());
    CHECK(std::abs(residual - want) < 1e-8);
    CHECK(residual <= previous);
    previous = residual;
  }
}

TEST_CASE("compress checks dimensions and maps zero to zero") {
  const SvdBasis basis = compute_svd_basis(desk_dictionary(), 5);
  Dictionary zero = build_dictionary({1000}, {100}, seq200());
  zero.atoms.setZero();
  CHECK(compress(zero, basis).atoms_k.norm() == 0.0);
  const Dictionary short_dict = build_dictionary({1000}, {100}, default_fisp_schedule(20));
  CHECK_THROWS_AS(compress(short_dict, basis), DimensionError);
}

TEST_CASE("dictionary matching") {
  const SvdBasis basis = compute_svd_basis(desk_dictionary(), 5);
  const CompressedDictionary cd = compress(desk_dictionary(), basis);
  const std::size_t d = cd.size();

  SUBCASE("every atom matches itself under any complex scale") {
    Tsmi x(1, d, 5);
    const Complex pd(3.0, 4.0);
    x.data = pd * cd.atoms_k;
    const auto q = dict_match(x, cd);
    std::size_t exact = 0;
    for (std::size_t i = 0; i < d; ++i) {
      exact += q[i].t1_ms == cd.grid[i].t1_ms && q[i].t2_ms == cd.grid[i].t2_ms ? 1 : 0;
    }
    CHECK(exact == d);
    CHECK(std::abs(q[17].pd - pd) < 1e-10);
    x.data = cd.atoms_k;
    CHECK(std::abs(dict_match(x, cd)[5].pd - Complex(1.0, 0.0)) < 1e-10);
  }

  SUBCASE("noisy atoms match the brute-force argmax") {
    std::mt19937_64 rng(11);
    Tsmi x(1, 50, 5);
    for (Eigen::Index p = 0; p < 50; ++p) {
      x.data.row(p) = cd.atoms_k.row(p * 17 % static_cast<Eigen::Index>(d)) +
                      0.01 * test::random_cx(5, rng).transpose();
    }
    const auto q = dict_match(x, cd);
    for (Eigen::Index p = 0; p < 50; ++p) {
      Eigen::Index best = 0;
      double best_score = -1.0;
      for (Eigen::Index a = 0; a < cd.atoms_k.rows(); ++a) {
        Complex c = 0.0;
        for (Eigen::Index k = 0; k < 5; ++k) {
          c += x.data(p, k) * std::conj(cd.atoms_k(a, k));
        }
        const double score = std::abs(c) / cd.atoms_k.row(a).norm();
        if (score > best_score) {
          best_score = score;
          best = a;
        }
      }
      CHECK(q[static_cast<std::size_t>(p)].t1_ms == cd.grid[static_cast<std::size_t>(best)].t1_ms);
      CHECK(q[static_cast<std::size_t>(p)].t2_ms == cd.grid[static_cast<std::size_t>(best)].t2_ms);
    }
  }

  SUBCASE("zero pixel returns the sentinel") {
    const auto q = dict_match(Tsmi(1, 1, 5), cd);
    CHECK(q[0].t1_ms == 0.0);
    CHECK(q[0].t2_ms == 0.0);
    CHECK(q[0].pd == Complex(0.0, 0.0));
  }

  SUBCASE("ties go to the lowest index") {
    CompressedDictionary dup = cd;
    dup.atoms_k.row(1) = dup.atoms_k.row(0);
    Tsmi x(1, 1, 5);
    x.data.row(0) = dup.atoms_k.row(0);
    CHECK(dict_match(x, dup)[0].t2_ms == dup.grid[0].t2_ms);
  }

  CHECK_THROWS_AS(dict_match(Tsmi(1, 1, 4), cd), DimensionError);
}

TEST_CASE("dictionary container round trip") {
  const auto dir = std::filesystem::temp_directory_path();
  const Dictionary dict = build_dictionary({500, 1000}, {50, 100}, default_fisp_schedule(30));
  const SvdBasis basis = compute_svd_basis(dict, 2);
  save_dictionary(dir / "bardip_dict.bin", dict, &basis);
  const auto [back, back_basis] = load_dictionary(dir / "bardip_dict.bin");
  CHECK(back.atoms == dict.atoms);
  CHECK(back.grid.size() == dict.grid.size());
  CHECK(back.seq.flip_angles_deg == dict.seq.flip_angles_deg);
  REQUIRE(back_basis.has_value());
  CHECK(back_basis->v == basis.v);

  save_dictionary(dir / "bardip_dict_nobasis.bin", dict, nullptr);
  CHECK_FALSE(load_dictionary(dir / "bardip_dict_nobasis.bin").second.has_value());

  {
    std::ofstream bad(dir / "bardip_bad.bin", std::ios::binary);
    bad << "XXXX";
  }
  CHECK_THROWS_AS(load_dictionary(dir / "bardip_bad.bin"), FormatError);
  for (const char* f : {"bardip_dict.bin", "bardip_dict_nobasis.bin", "bardip_bad.bin"}) {
    std::filesystem::remove(dir / f);
  }
}

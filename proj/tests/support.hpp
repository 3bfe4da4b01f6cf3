#pragma once

#include "bardip/common.hpp"

#include <random>

namespace bardip::test {

inline CxVector random_cx(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  CxVector v(n);
  for (auto& z : v) {
    z = Complex(g(rng), g(rng));
  }
  return v;
}

inline CxMatrix random_cx(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  CxMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = Complex(g(rng), g(rng));
  }
  return m;
}

template <class A, class B>
double rel_error(const A& got, const B& want) {
  return (got - want).norm() / want.norm();
}

} // namespace bardip::test

#pragma once

#include "bardip/common.hpp"

namespace bardip::test {

/// argmin over complex c of ||x - c d||^2 by direct search: a 21 x 21 grid
/// over (Re c, Im c), re-centred on the best point and shrunk 5x per round.
inline Complex least_squares_scale(const CxVector& x, const CxVector& d) {
  auto cost = [&](Complex c) { return (x - c * d).squaredNorm(); };
  // The minimiser satisfies |c| <= ||x|| / ||d||.
  double half = d.norm() > 0.0 ? x.norm() / d.norm() + 1.0 : 1.0;
  Complex centre = 0.0;
  for (int round = 0; round < 30; ++round) {
    Complex best = centre;
    double best_cost = cost(centre);
    for (int i = -10; i <= 10; ++i) {
      for (int j = -10; j <= 10; ++j) {
        const Complex c = centre + Complex(half * i / 10.0, half * j / 10.0);
        const double v = cost(c);
        if (v < best_cost) {
          best_cost = v;
          best = c;
        }
      }
    }
    centre = best;
    half /= 5.0;
  }
  return centre;
}

} // namespace bardip::test

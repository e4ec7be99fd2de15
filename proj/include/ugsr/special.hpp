#pragma once

#include <cmath>
#include <limits>

namespace ugsr {

// Digamma for x > 0: shift upward with psi(x) = psi(x + 1) - 1/x until
// x >= 10, then the Bernoulli asymptotic series. Absolute error < 1e-12.
inline double digamma(double x) {
  if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * 691.0 / 32760)))));
  return shift + std::log(x) - 0.5 * inv - series;
}

// Trigamma for x > 0, same shift-then-series scheme.
inline double trigamma(double x) {
  if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double shift = 0.0;
  while (x < 10.0) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 -
                                       inv2 * (1.0 / 30 -
                                               inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * 5.0 / 66))))));
  return shift + series;
}

}  // namespace ugsr

// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by tests. Everything here
// is written the dumb, obviously-correct way (adjugate inverses, sequential
// sums, naive loops) so library results can be checked against a second
// derivation rather than against themselves.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

// generic 3x3 inverse via adjugate / determinant
inline void inv3(const double a[9], double out[9]) {
  double c00 = a[4] * a[8] - a[5] * a[7];
  double c01 = a[5] * a[6] - a[3] * a[8];
  double c02 = a[3] * a[7] - a[4] * a[6];
  double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
  double inv_det = 1.0 / det;
  out[0] = c00 * inv_det;
  out[1] = (a[2] * a[7] - a[1] * a[8]) * inv_det;
  out[2] = (a[1] * a[5] - a[2] * a[4]) * inv_det;
  out[3] = c01 * inv_det;
  out[4] = (a[0] * a[8] - a[2] * a[6]) * inv_det;
  out[5] = (a[2] * a[3] - a[0] * a[5]) * inv_det;
  out[6] = c02 * inv_det;
  out[7] = (a[1] * a[6] - a[0] * a[7]) * inv_det;
  out[8] = (a[0] * a[4] - a[1] * a[3]) * inv_det;
}

// central finite difference through a parameter slot
inline double central_diff(const std::function<double()>& f, double& slot,
                           double h) {
  double orig = slot;
  slot = orig + h;
  double fp = f();
  slot = orig - h;
  double fm = f();
  slot = orig;
  return (fp - fm) / (2.0 * h);
}

inline double fd_step(double value) { return 1e-5 * std::max(1.0, std::fabs(value)); }

// relative error with an absolute floor so near-zero gradient pairs compare
// on FD-noise-tolerant footing
inline double rel_err(double a, double b, double floor_ = 1e-4) {
  double denom = std::max({std::fabs(a), std::fabs(b), floor_});
  return std::fabs(a - b) / denom;
}

// plain-loop MLP forward for one row: layers given as (in, out, W, b, act),
// act: 0 = identity, 1 = relu, 2 = tanh
struct NaiveLayer {
  size_t in, out;
  const double* W;  // out x in row-major
  const double* b;
  int act;
};

inline std::vector<double> naive_mlp(const std::vector<NaiveLayer>& layers,
                                     std::vector<double> x) {
  for (const auto& l : layers) {
    std::vector<double> y(l.out);
    for (size_t o = 0; o < l.out; ++o) {
      double s = l.b ? l.b[o] : 0.0;
      for (size_t k = 0; k < l.in; ++k) s += l.W[o * l.in + k] * x[k];
      if (l.act == 1 && s < 0.0) s = 0.0;
      if (l.act == 2) s = std::tanh(s);
      y[o] = s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace oracle

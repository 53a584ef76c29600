// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared machinery for the projection/compositing renderer variants:
// spherical mapping of a 3D offset onto the fractional antenna grid, the
// exact Jacobian of that mapping, 2D covariance propagation, and the
// Mahalanobis influence kernel. All pieces carry analytic adjoints.

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ngrf/common.hpp"
#include "ngrf/math.hpp"

namespace ngrf {

// Antenna layout shared by the variant renderers: transmit grid rows x cols,
// receive line of rx_n elements, spacings in wavelengths.
struct ArrayDesc {
  size_t tx_rows = 1, tx_cols = 1;
  double tx_spacing = 0.5;
  size_t rx_n = 1;
  double rx_spacing = 0.5;
};

struct SplatConfig {
  size_t n_gaussians = 1000;
  double carrier_hz = 2.4e9;
  Vec3 bounds_lo{0.0, 0.0, 0.0};
  Vec3 bounds_hi{1.0, 1.0, 1.0};
  ArrayDesc arrays;
};

inline nlohmann::json splat_config_to_json(const SplatConfig& c) {
  nlohmann::json j;
  j["n_gaussians"] = c.n_gaussians;
  j["carrier_hz"] = c.carrier_hz;
  j["bounds_lo"] = {c.bounds_lo.x, c.bounds_lo.y, c.bounds_lo.z};
  j["bounds_hi"] = {c.bounds_hi.x, c.bounds_hi.y, c.bounds_hi.z};
  j["arrays"]["tx_rows"] = c.arrays.tx_rows;
  j["arrays"]["tx_cols"] = c.arrays.tx_cols;
  j["arrays"]["tx_spacing"] = c.arrays.tx_spacing;
  j["arrays"]["rx_n"] = c.arrays.rx_n;
  j["arrays"]["rx_spacing"] = c.arrays.rx_spacing;
  return j;
}

inline SplatConfig splat_config_from_json(const nlohmann::json& j) {
  SplatConfig c;
  c.n_gaussians = j.value("n_gaussians", size_t{1000});
  c.carrier_hz = j.value("carrier_hz", 2.4e9);
  if (j.contains("bounds_lo")) {
    auto lo = j.at("bounds_lo");
    auto hi = j.at("bounds_hi");
    c.bounds_lo = {lo[0], lo[1], lo[2]};
    c.bounds_hi = {hi[0], hi[1], hi[2]};
  }
  if (j.contains("arrays")) {
    const auto& a = j.at("arrays");
    c.arrays.tx_rows = a.value("tx_rows", size_t{1});
    c.arrays.tx_cols = a.value("tx_cols", size_t{1});
    c.arrays.tx_spacing = a.value("tx_spacing", 0.5);
    c.arrays.rx_n = a.value("rx_n", size_t{1});
    c.arrays.rx_spacing = a.value("rx_spacing", 0.5);
  }
  if (c.arrays.tx_rows == 0 || c.arrays.tx_cols == 0 || c.arrays.rx_n == 0)
    throw contract_error("array desc: zero element count");
  return c;
}

constexpr double kSplatJitter = 1e-6;  // keeps the 2D covariance invertible
constexpr double kPoleRho2 = 1e-18;    // below this the longitude is undefined
constexpr double kDefaultSplatScale = 0.137;  // linear scale at init

struct UvPoint {
  double u = 0.0, v = 0.0;
  double r = 0.0;                          // offset length
  double J[6] = {0, 0, 0, 0, 0, 0};        // row-major 2x3, d(u,v)/d(offset)
  bool pole = false;                       // offset parallel to z
};

// Fractional grid coordinates of an offset vector on the (n_t, n_r) channel
// grid: longitude spans the transmit axis, latitude the receive axis. The
// Jacobian is the exact derivative of this map; at the poles the longitude
// is undefined and callers skip the contribution entirely.
inline UvPoint project_uv(const Vec3& d, size_t n_t, size_t n_r) {
  UvPoint p;
  double rho2 = d.x * d.x + d.y * d.y;
  double r2 = rho2 + d.z * d.z;
  p.r = std::sqrt(r2);
  if (p.r < 1e-12) throw contract_error("project_uv: zero displacement");
  double lon = std::atan2(d.y, d.x);
  double lat = std::asin(std::clamp(d.z / p.r, -1.0, 1.0));
  p.u = (lon / kPi + 0.5) * static_cast<double>(n_t - 1) + 0.5;
  p.v = (2.0 * lat / kPi + 0.5) * static_cast<double>(n_r - 1) + 0.5;
  if (rho2 < kPoleRho2) {
    p.pole = true;
    return p;
  }
  double t1 = static_cast<double>(n_t - 1) / kPi;
  double t2 = 2.0 * static_cast<double>(n_r - 1) / kPi;
  double rho = std::sqrt(rho2);
  p.J[0] = -t1 * d.y / rho2;
  p.J[1] = t1 * d.x / rho2;
  p.J[2] = 0.0;
  p.J[3] = -t2 * d.z * d.x / (rho * r2);
  p.J[4] = -t2 * d.z * d.y / (rho * r2);
  p.J[5] = t2 * rho / r2;
  return p;
}

// Accumulates sum(G .* dJ/d(offset)) into g_d, the term the Jacobian itself
// contributes to the position gradient. G is row-major 2x3 like UvPoint::J.
inline void project_jacobian_backward(const Vec3& d, size_t n_t, size_t n_r,
                                      const double* G, Vec3* g_d) {
  double x = d.x, y = d.y, z = d.z;
  double rho2 = x * x + y * y;
  if (rho2 < kPoleRho2) return;
  double r2 = rho2 + z * z;
  double rho = std::sqrt(rho2);
  double rho4 = rho2 * rho2;
  double r4 = r2 * r2;
  double t1 = static_cast<double>(n_t - 1) / kPi;
  double t2 = 2.0 * static_cast<double>(n_r - 1) / kPi;

  double g = 1.0 / (rho * r2);
  double q = (r2 + 2.0 * rho2) / (rho2 * rho * r4);
  double h = 2.0 * z * z / (rho * r4);

  double dJ00_dx = 2.0 * t1 * x * y / rho4;
  double dJ00_dy = t1 * (y * y - x * x) / rho4;
  double dJ01_dx = t1 * (y * y - x * x) / rho4;
  double dJ01_dy = -2.0 * t1 * x * y / rho4;

  double dJ10_dx = -t2 * z * (g - x * x * q);
  double dJ10_dy = t2 * z * x * y * q;
  double dJ10_dz = -t2 * x * (g - h);
  double dJ11_dx = t2 * z * x * y * q;
  double dJ11_dy = -t2 * z * (g - y * y * q);
  double dJ11_dz = -t2 * y * (g - h);
  double dJ12_dx = t2 * x * (r2 - 2.0 * rho2) / (rho * r4);
  double dJ12_dy = t2 * y * (r2 - 2.0 * rho2) / (rho * r4);
  double dJ12_dz = -2.0 * t2 * rho * z / r4;

  g_d->x += G[0] * dJ00_dx + G[1] * dJ01_dx + G[3] * dJ10_dx +
            G[4] * dJ11_dx + G[5] * dJ12_dx;
  g_d->y += G[0] * dJ00_dy + G[1] * dJ01_dy + G[3] * dJ10_dy +
            G[4] * dJ11_dy + G[5] * dJ12_dy;
  g_d->z += G[3] * dJ10_dz + G[4] * dJ11_dz + G[5] * dJ12_dz;
}

// Projected covariance M = J Sigma J^T + jitter*I and its inverse.
struct Cov2d {
  double m00 = 0, m01 = 0, m11 = 0;
  double i00 = 0, i01 = 0, i11 = 0;
};

inline Cov2d cov2d_from(const double* J, const Mat3& sigma) {
  double A[6];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += J[r * 3 + k] * sigma(k, c);
      A[r * 3 + c] = acc;
    }
  Cov2d o;
  o.m00 = A[0] * J[0] + A[1] * J[1] + A[2] * J[2] + kSplatJitter;
  o.m01 = A[0] * J[3] + A[1] * J[4] + A[2] * J[5];
  o.m11 = A[3] * J[3] + A[4] * J[4] + A[5] * J[5] + kSplatJitter;
  double det = o.m00 * o.m11 - o.m01 * o.m01;
  o.i00 = o.m11 / det;
  o.i01 = -o.m01 / det;
  o.i11 = o.m00 / det;
  return o;
}

// sigma = exp(-1/2 delta^T M^{-1} delta), in (0,1]
inline double splat_weight(const Cov2d& c, double du, double dv) {
  double quad = du * du * c.i00 + 2.0 * du * dv * c.i01 + dv * dv * c.i11;
  return std::exp(-0.5 * quad);
}

// Adjoint of splat_weight: accumulates d(loss)/d(uv) into g_uv[2] and the
// full-matrix d(loss)/dM into g_M packed as (g00, g01, g11).
inline void splat_weight_backward(const Cov2d& c, double du, double dv,
                                  double sigma, double g_sigma, double* g_uv,
                                  double* g_M) {
  double w0 = c.i00 * du + c.i01 * dv;
  double w1 = c.i01 * du + c.i11 * dv;
  g_uv[0] -= sigma * g_sigma * w0;
  g_uv[1] -= sigma * g_sigma * w1;
  double s = 0.5 * sigma * g_sigma;
  g_M[0] += s * w0 * w0;
  g_M[1] += s * w0 * w1;
  g_M[2] += s * w1 * w1;
}

// Chains a packed 2x2 covariance gradient through M = J Sigma J^T:
// accumulates J^T G J into g_sigma3 and (G + G^T) J Sigma into g_J.
inline void cov2d_backward(const double* J, const Mat3& sigma,
                           const double* g_M, Mat3* g_sigma3, double* g_J) {
  double G[4] = {g_M[0], g_M[1], g_M[1], g_M[2]};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double acc = 0.0;
      for (int r = 0; r < 2; ++r)
        for (int s = 0; s < 2; ++s)
          acc += J[r * 3 + a] * G[r * 2 + s] * J[s * 3 + b];
      (*g_sigma3)(a, b) += acc;
    }
  // (G + G^T) J Sigma with symmetric G collapses to 2 G (J Sigma)
  double JS[6];
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += J[r * 3 + k] * sigma(k, c);
      JS[r * 3 + c] = acc;
    }
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      g_J[r * 3 + c] +=
          2.0 * (G[r * 2 + 0] * JS[0 * 3 + c] + G[r * 2 + 1] * JS[1 * 3 + c]);
}

// Sigma = (R diag(s)) (R diag(s))^T for softplus-positive scales.
inline Mat3 covariance_from(const Mat3& R, const Vec3& s) {
  Mat3 B = R * Mat3::diag(s.x, s.y, s.z);
  return B * B.transposed();
}

// Chains a (symmetric) covariance gradient back to the rotation and the
// linear scales: dB = 2 G B, dR = dB diag(s), ds_i = (R^T dB)_ii.
inline void covariance_backward(const Mat3& R, const Vec3& s, const Mat3& G,
                                Mat3* g_R, Vec3* g_s) {
  Mat3 B = R * Mat3::diag(s.x, s.y, s.z);
  Mat3 dB = (G + G.transposed()) * B;
  for (int a = 0; a < 3; ++a)
    for (int c = 0; c < 3; ++c) (*g_R)(a, c) += dB(a, c) * s[c];
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) acc += R(a, i) * dB(a, i);
    (*g_s)[i] += acc;
  }
}

}  // namespace ngrf

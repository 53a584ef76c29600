// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "ngrf/common.hpp"

namespace ngrf {

using Complex = std::complex<double>;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// w-first quaternion
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return (&w)[i]; }
  double operator[](int i) const { return (&w)[i]; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  // Hamilton product; (a*b) rotates by b first, then a
  Quat operator*(const Quat& b) const {
    return {w * b.w - x * b.x - y * b.y - z * b.z,
            w * b.x + x * b.w + y * b.z - z * b.y,
            w * b.y - x * b.z + y * b.w + z * b.x,
            w * b.z + x * b.y - y * b.x + z * b.w};
  }
};

// row-major 3x3
struct Mat3 {
  std::array<double, 9> m{};

  double& operator()(int r, int c) { return m[r * 3 + c]; }
  double operator()(int r, int c) const { return m[r * 3 + c]; }

  static Mat3 identity() {
    Mat3 I;
    I.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return I;
  }
  static Mat3 diag(double a, double b, double c) {
    Mat3 D;
    D.m = {a, 0, 0, 0, b, 0, 0, 0, c};
    return D;
  }

  Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 p;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(r, k) * o(k, c);
        p(r, c) = s;
      }
    return p;
  }

  Mat3 operator+(const Mat3& o) const {
    Mat3 s;
    for (int i = 0; i < 9; ++i) s.m[i] = m[i] + o.m[i];
    return s;
  }

  Mat3 operator*(double s) const {
    Mat3 p;
    for (int i = 0; i < 9; ++i) p.m[i] = m[i] * s;
    return p;
  }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
};

constexpr double kQuatNormEps = 1e-12;
constexpr double kScaleEps = 1e-6;

// Unit-quaternion rotation matrix. Normalizes the input; below the epsilon
// the rotation is undefined.
inline Mat3 build_rotation(const Quat& q) {
  double n = q.norm();
  if (n < kQuatNormEps)
    throw numeric_error("build_rotation: degenerate quaternion (|q| < 1e-12)");
  double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
  Mat3 R;
  R(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  R(0, 1) = 2.0 * (x * y - w * z);
  R(0, 2) = 2.0 * (x * z + w * y);
  R(1, 0) = 2.0 * (x * y + w * z);
  R(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  R(1, 2) = 2.0 * (y * z - w * x);
  R(2, 0) = 2.0 * (x * z - w * y);
  R(2, 1) = 2.0 * (y * z + w * x);
  R(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return R;
}

// dL/dq (raw, unnormalized) from dL/dR. Contracts G with dR/dq_hat at the
// normalized quaternion, then pulls back through the normalization.
inline Quat build_rotation_backward(const Quat& q, const Mat3& G) {
  double n = q.norm();
  if (n < kQuatNormEps)
    throw numeric_error("build_rotation_backward: degenerate quaternion");
  double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;

  double gw = G(0, 1) * (-2 * z) + G(0, 2) * (2 * y) + G(1, 0) * (2 * z) +
              G(1, 2) * (-2 * x) + G(2, 0) * (-2 * y) + G(2, 1) * (2 * x);
  double gx = G(0, 1) * (2 * y) + G(0, 2) * (2 * z) + G(1, 0) * (2 * y) +
              G(1, 1) * (-4 * x) + G(1, 2) * (-2 * w) + G(2, 0) * (2 * z) +
              G(2, 1) * (2 * w) + G(2, 2) * (-4 * x);
  double gy = G(0, 0) * (-4 * y) + G(0, 1) * (2 * x) + G(0, 2) * (2 * w) +
              G(1, 0) * (2 * x) + G(1, 2) * (2 * z) + G(2, 0) * (-2 * w) +
              G(2, 1) * (2 * z) + G(2, 2) * (-4 * y);
  double gz = G(0, 0) * (-4 * z) + G(0, 1) * (-2 * w) + G(0, 2) * (2 * x) +
              G(1, 0) * (2 * w) + G(1, 1) * (-4 * z) + G(1, 2) * (2 * y) +
              G(2, 0) * (2 * x) + G(2, 1) * (2 * y);

  // d(q/|q|)/dq = (I - q_hat q_hat^T) / |q|
  double dotp = gw * w + gx * x + gy * y + gz * z;
  return {(gw - dotp * w) / n, (gx - dotp * x) / n, (gy - dotp * y) / n,
          (gz - dotp * z) / n};
}

// Sigma^{-1} = R diag(1/max(s,eps)^2) R^T, built directly so no 3x3 solve is
// ever needed. s holds the per-axis standard deviations.
inline Mat3 build_covariance_inverse(const Mat3& R, const Vec3& s,
                                     double eps = kScaleEps) {
  Vec3 inv2;
  for (int i = 0; i < 3; ++i) {
    double si = s[i] < eps ? eps : s[i];
    inv2[i] = 1.0 / (si * si);
  }
  Mat3 P;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += R(r, k) * inv2[k] * R(c, k);
      P(r, c) = acc;
    }
  return P;
}

// Adjoints of Sigma^{-1} = R D R^T with D = diag(1/max(s,eps)^2).
// G is dL/dSigma^{-1} (need not be symmetric). dL_ds is zero on clamped axes.
inline void covariance_inverse_backward(const Mat3& R, const Vec3& s,
                                        const Mat3& G, Mat3* dL_dR,
                                        Vec3* dL_ds, double eps = kScaleEps) {
  Vec3 d;
  for (int i = 0; i < 3; ++i) {
    double si = s[i] < eps ? eps : s[i];
    d[i] = 1.0 / (si * si);
  }
  // dL/dR = (G + G^T) R D
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k)
        acc += (G(r, k) + G(k, r)) * R(k, c);
      (*dL_dR)(r, c) = acc * d[c];
    }
  // dL/dd_j = (R^T G R)_jj, then d = s^{-2}
  for (int j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) acc += R(a, j) * G(a, b) * R(b, j);
    (*dL_ds)[j] = s[j] < eps ? 0.0 : acc * (-2.0 / (s[j] * s[j] * s[j]));
  }
}

// gamma_L(x): [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x),
// cos(2^{L-1} pi x)] applied elementwise; out must hold dim*(1+2L).
inline void positional_encode(const double* x, size_t dim, int levels,
                              double* out) {
  for (size_t d = 0; d < dim; ++d) out[d] = x[d];
  size_t off = dim;
  for (int l = 0; l < levels; ++l) {
    double freq = std::ldexp(kPi, l);  // 2^l * pi
    for (size_t d = 0; d < dim; ++d) {
      double a = freq * x[d];
      out[off + d] = std::sin(a);
      out[off + dim + d] = std::cos(a);
    }
    off += 2 * dim;
  }
}

inline size_t encoded_size(size_t dim, int levels) {
  return dim * (1 + 2 * static_cast<size_t>(levels));
}

// accumulates dL/dx from dL/d(encoding)
inline void positional_encode_backward(const double* x, size_t dim, int levels,
                                       const double* dL_denc, double* dL_dx) {
  for (size_t d = 0; d < dim; ++d) dL_dx[d] += dL_denc[d];
  size_t off = dim;
  for (int l = 0; l < levels; ++l) {
    double freq = std::ldexp(kPi, l);
    for (size_t d = 0; d < dim; ++d) {
      double a = freq * x[d];
      dL_dx[d] += freq * (std::cos(a) * dL_denc[off + d] -
                          std::sin(a) * dL_denc[off + dim + d]);
    }
    off += 2 * dim;
  }
}

}  // namespace ngrf

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ngrf {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

// Contract violations: caller passed inconsistent shapes/state. Programming
// errors, not recoverable data problems.
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

// Bad bytes/values coming from outside (files, CLI input).
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerics left the defined domain (degenerate rotation, NaN loss, ...).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kSpeedOfLight = 299792458.0;  // m/s
constexpr double kPi = 3.141592653589793238462643383279502884;

inline double sigmoid(double x) {
  // split to avoid overflow in exp for large |x|
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  // log1p(exp(x)) with the large-x branch exact
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// inverse of softplus, for initializing raw parameters to a target value
inline double softplus_inv(double y) {
  if (y <= 0.0) throw contract_error("softplus_inv: target must be positive");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

}  // namespace ngrf

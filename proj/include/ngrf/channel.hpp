// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "ngrf/common.hpp"
#include "ngrf/math.hpp"

namespace ngrf {

// MIMO channel, H[t][r] row-major over transmit elements.
struct ChannelMatrix {
  size_t nt = 0, nr = 0;
  std::vector<Complex> h;

  ChannelMatrix() = default;
  ChannelMatrix(size_t t, size_t r) : nt(t), nr(r), h(t * r) {}

  Complex& at(size_t t, size_t r) { return h[t * nr + r]; }
  Complex at(size_t t, size_t r) const { return h[t * nr + r]; }

  size_t entries() const { return nt * nr; }
};

inline double frob_norm2(const ChannelMatrix& m) {
  double acc = 0.0;
  for (const auto& c : m.h) acc += std::norm(c);
  return acc;
}

inline double frob_dist2(const ChannelMatrix& a, const ChannelMatrix& b) {
  if (a.nt != b.nt || a.nr != b.nr)
    throw contract_error("frob_dist2: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.h.size(); ++i) acc += std::norm(a.h[i] - b.h[i]);
  return acc;
}

}  // namespace ngrf

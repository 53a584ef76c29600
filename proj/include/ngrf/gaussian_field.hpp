// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "ngrf/math.hpp"
#include "ngrf/parallel.hpp"
#include "ngrf/rng.hpp"

namespace ngrf {

// Mahalanobis clamp: beyond this the exponent saturates and its gradient is
// cut (the alpha path still flows).
constexpr double kM2Clamp = 50.0;
constexpr double kDefaultScaleInit = 0.137;

struct Bounds {
  Vec3 lo, hi;

  Vec3 center() const { return (lo + hi) * 0.5; }
  double diagonal() const { return (hi - lo).norm(); }
};

// Explicit Gaussian primitives: position, orientation (w-first quaternion),
// log of per-axis scale. One struct-of-arrays so optimizer groups map to
// contiguous spans.
struct GaussianSet {
  size_t n = 0;
  std::vector<double> mu;         // n*3
  std::vector<double> quat;      // n*4
  std::vector<double> log_scale;  // n*3

  Vec3 mu_at(size_t i) const { return {mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]}; }
  Quat quat_at(size_t i) const {
    return {quat[i * 4], quat[i * 4 + 1], quat[i * 4 + 2], quat[i * 4 + 3]};
  }
  Vec3 scale_at(size_t i) const {
    return {std::exp(log_scale[i * 3]), std::exp(log_scale[i * 3 + 1]),
            std::exp(log_scale[i * 3 + 2])};
  }
};

inline GaussianSet init_gaussians(size_t n, const Bounds& bounds, Rng& rng,
                                  double scale_init = kDefaultScaleInit) {
  GaussianSet gs;
  gs.n = n;
  gs.mu.resize(n * 3);
  gs.quat.resize(n * 4);
  gs.log_scale.assign(n * 3, std::log(scale_init));
  for (size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d)
      gs.mu[i * 3 + d] = rng.uniform(bounds.lo[d], bounds.hi[d]);
    gs.quat[i * 4] = 1.0;
    gs.quat[i * 4 + 1] = 0.0;
    gs.quat[i * 4 + 2] = 0.0;
    gs.quat[i * 4 + 3] = 0.0;
  }
  return gs;
}

// per-Gaussian factors reused between forward and backward
struct FieldCache {
  std::vector<Mat3> R;  // rotation
  std::vector<Mat3> P;  // Sigma^{-1}
  std::vector<Vec3> s;  // effective scales
};

struct SpatialWeights {
  size_t batch = 0, n = 0;
  std::vector<double> w;   // batch x n
  std::vector<double> m2;  // batch x n, unclamped Mahalanobis^2
};

inline void refresh_field_cache(const GaussianSet& gs, FieldCache* cache) {
  cache->R.resize(gs.n);
  cache->P.resize(gs.n);
  cache->s.resize(gs.n);
  parallel_chunks(gs.n, 64, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      cache->R[i] = build_rotation(gs.quat_at(i));
      cache->s[i] = gs.scale_at(i);
      cache->P[i] = build_covariance_inverse(cache->R[i], cache->s[i]);
    }
  });
}

// w[b][i] = alpha_i * exp(-0.5 * min(d^T Sigma_i^{-1} d, clamp)), d = rx_b - mu_i
inline void spatial_weights(const GaussianSet& gs, const double* alphas,
                            const Vec3* rx, size_t batch, SpatialWeights* out,
                            FieldCache* cache) {
  refresh_field_cache(gs, cache);
  out->batch = batch;
  out->n = gs.n;
  out->w.resize(batch * gs.n);
  out->m2.resize(batch * gs.n);
  parallel_chunks(batch, 4, [&](size_t bb, size_t be) {
    for (size_t b = bb; b < be; ++b) {
      double* wrow = out->w.data() + b * gs.n;
      double* mrow = out->m2.data() + b * gs.n;
      for (size_t i = 0; i < gs.n; ++i) {
        Vec3 d = rx[b] - gs.mu_at(i);
        Vec3 pd = cache->P[i] * d;
        double m2 = d.dot(pd);
        mrow[i] = m2;
        double m2c = m2 > kM2Clamp ? kM2Clamp : m2;
        wrow[i] = alphas[i] * std::exp(-0.5 * m2c);
      }
    }
  });
}

// Accumulates gradients into the d_* spans (callers zero them). d_alpha gets
// the exp factor even for clamped samples; the exponent path is cut there.
inline void spatial_weights_backward(const GaussianSet& gs,
                                     const double* alphas, const Vec3* rx,
                                     size_t batch, const SpatialWeights& sw,
                                     const FieldCache& cache,
                                     const double* dL_dw, double* d_mu,
                                     double* d_quat, double* d_logs,
                                     double* d_alpha) {
  parallel_chunks(gs.n, 16, [&](size_t ib, size_t ie) {
    for (size_t i = ib; i < ie; ++i) {
      Vec3 mu = gs.mu_at(i);
      Mat3 GP{};  // dL/dSigma^{-1}, accumulated over the batch
      Vec3 dmu{};
      double dalpha = 0.0;
      bool any_exponent = false;
      for (size_t b = 0; b < batch; ++b) {
        double g = dL_dw[b * gs.n + i];
        if (g == 0.0) continue;
        double m2 = sw.m2[b * gs.n + i];
        double m2c = m2 > kM2Clamp ? kM2Clamp : m2;
        double e = std::exp(-0.5 * m2c);
        dalpha += g * e;
        if (m2 > kM2Clamp) continue;  // clamped: no gradient through exp
        any_exponent = true;
        double dm2 = g * alphas[i] * e * -0.5;
        Vec3 d = rx[b] - mu;
        Vec3 pd = cache.P[i] * d;
        // dL/dd = dm2 * 2 Sigma^{-1} d ; dL/dmu = -dL/dd
        dmu += pd * (-2.0 * dm2);
        // dL/dSigma^{-1} += dm2 * d d^T
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) GP(r, c) += dm2 * d[r] * d[c];
      }
      d_alpha[i] += dalpha;
      for (int k = 0; k < 3; ++k) d_mu[i * 3 + k] += dmu[k];
      if (any_exponent) {
        Mat3 dR;
        Vec3 ds;
        covariance_inverse_backward(cache.R[i], cache.s[i], GP, &dR, &ds);
        Quat dq = build_rotation_backward(gs.quat_at(i), dR);
        for (int k = 0; k < 4; ++k) d_quat[i * 4 + k] += dq[k];
        for (int k = 0; k < 3; ++k)
          d_logs[i * 3 + k] += ds[k] * cache.s[i][k];  // s = exp(log_scale)
      }
    }
  });
}

}  // namespace ngrf

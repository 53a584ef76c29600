// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>

#include "ngrf/parallel.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define NGRF_KERNELS_AVX2 1
#endif

// Dense f64 kernels for the batched MLP passes. All matrices are row-major
// with the contraction axis contiguous in both operands, so the hot loops are
// straight-line FMA streams. Every output element is produced by exactly one
// chunk with a fixed in-chunk summation order, which keeps results bitwise
// reproducible for any worker count.

namespace ngrf {

namespace detail {

// Y[r][0..out) = bias + X[r][:] . W[o][:]  for r in [r_begin, r_end)
inline void matmul_xt_rows(const double* __restrict X,
                           const double* __restrict W,
                           const double* __restrict bias, double* __restrict Y,
                           size_t r_begin, size_t r_end, size_t in,
                           size_t out) {
#ifdef NGRF_KERNELS_AVX2
  size_t r = r_begin;
  for (; r + 2 <= r_end; r += 2) {
    const double* x0 = X + r * in;
    const double* x1 = x0 + in;
    size_t o = 0;
    for (; o + 4 <= out; o += 4) {
      const double* w0 = W + o * in;
      const double* w1 = w0 + in;
      const double* w2 = w1 + in;
      const double* w3 = w2 + in;
      __m256d a00 = _mm256_setzero_pd(), a01 = _mm256_setzero_pd();
      __m256d a02 = _mm256_setzero_pd(), a03 = _mm256_setzero_pd();
      __m256d a10 = _mm256_setzero_pd(), a11 = _mm256_setzero_pd();
      __m256d a12 = _mm256_setzero_pd(), a13 = _mm256_setzero_pd();
      size_t k = 0;
      for (; k + 4 <= in; k += 4) {
        __m256d xv0 = _mm256_loadu_pd(x0 + k);
        __m256d xv1 = _mm256_loadu_pd(x1 + k);
        __m256d wv0 = _mm256_loadu_pd(w0 + k);
        __m256d wv1 = _mm256_loadu_pd(w1 + k);
        __m256d wv2 = _mm256_loadu_pd(w2 + k);
        __m256d wv3 = _mm256_loadu_pd(w3 + k);
        a00 = _mm256_fmadd_pd(xv0, wv0, a00);
        a01 = _mm256_fmadd_pd(xv0, wv1, a01);
        a02 = _mm256_fmadd_pd(xv0, wv2, a02);
        a03 = _mm256_fmadd_pd(xv0, wv3, a03);
        a10 = _mm256_fmadd_pd(xv1, wv0, a10);
        a11 = _mm256_fmadd_pd(xv1, wv1, a11);
        a12 = _mm256_fmadd_pd(xv1, wv2, a12);
        a13 = _mm256_fmadd_pd(xv1, wv3, a13);
      }
      auto hsum = [](const __m256d v) {
        double lane[4];
        _mm256_storeu_pd(lane, v);
        return (lane[0] + lane[1]) + (lane[2] + lane[3]);
      };
      double s[2][4] = {{hsum(a00), hsum(a01), hsum(a02), hsum(a03)},
                        {hsum(a10), hsum(a11), hsum(a12), hsum(a13)}};
      for (size_t kk = k; kk < in; ++kk) {
        const double xv[2] = {x0[kk], x1[kk]};
        const double wv[4] = {w0[kk], w1[kk], w2[kk], w3[kk]};
        for (int rr = 0; rr < 2; ++rr)
          for (int oo = 0; oo < 4; ++oo) s[rr][oo] += xv[rr] * wv[oo];
      }
      for (int rr = 0; rr < 2; ++rr)
        for (int oo = 0; oo < 4; ++oo)
          Y[(r + rr) * out + o + oo] =
              (bias ? bias[o + oo] : 0.0) + s[rr][oo];
    }
    for (; o < out; ++o) {
      const double* wo = W + o * in;
      double s0 = 0.0, s1 = 0.0;
      for (size_t k = 0; k < in; ++k) {
        s0 += x0[k] * wo[k];
        s1 += x1[k] * wo[k];
      }
      double b = bias ? bias[o] : 0.0;
      Y[r * out + o] = b + s0;
      Y[(r + 1) * out + o] = b + s1;
    }
  }
  for (; r < r_end; ++r) {
    const double* xr = X + r * in;
    for (size_t o = 0; o < out; ++o) {
      const double* wo = W + o * in;
      double s = 0.0;
      for (size_t k = 0; k < in; ++k) s += xr[k] * wo[k];
      Y[r * out + o] = (bias ? bias[o] : 0.0) + s;
    }
  }
#else
  for (size_t r = r_begin; r < r_end; ++r) {
    const double* xr = X + r * in;
    for (size_t o = 0; o < out; ++o) {
      const double* wo = W + o * in;
      double lane[4] = {0.0, 0.0, 0.0, 0.0};
      size_t k = 0;
      for (; k + 4 <= in; k += 4)
        for (int l = 0; l < 4; ++l) lane[l] += xr[k + l] * wo[k + l];
      double s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
      for (; k < in; ++k) s += xr[k] * wo[k];
      Y[r * out + o] = (bias ? bias[o] : 0.0) + s;
    }
  }
#endif
}

}  // namespace detail

// Y = X . W^T (+ bias), X: rows x in, W: out x in, Y: rows x out
inline void matmul_xt(const double* X, const double* W, const double* bias,
                      double* Y, size_t rows, size_t in, size_t out) {
  const size_t grain = std::max<size_t>(1, 16384 / (in ? in : 1));
  parallel_chunks(rows, grain, [&](size_t b, size_t e) {
    detail::matmul_xt_rows(X, W, bias, Y, b, e, in, out);
  });
}

// dX = dY . W, dY: rows x out, W: out x in, dX: rows x in (overwritten).
// axpy form over contiguous W rows; 4-row blocking amortizes the W stream.
inline void matmul_grad_x(const double* dY, const double* W, double* dX,
                          size_t rows, size_t in, size_t out) {
  const size_t grain = 4;
  parallel_chunks(rows, grain, [&](size_t r_begin, size_t r_end) {
    for (size_t r0 = r_begin; r0 < r_end; r0 += 4) {
      size_t rl = std::min<size_t>(4, r_end - r0);
      for (size_t r = r0; r < r0 + rl; ++r)
        std::fill(dX + r * in, dX + (r + 1) * in, 0.0);
      for (size_t o = 0; o < out; ++o) {
        const double* wo = W + o * in;
        for (size_t r = r0; r < r0 + rl; ++r) {
          const double g = dY[r * out + o];
          if (g == 0.0) continue;
          double* dxr = dX + r * in;
          for (size_t k = 0; k < in; ++k) dxr[k] += g * wo[k];
        }
      }
    }
  });
}

// dW += dY^T . X, accumulating over rows: dW[o][k] += sum_r dY[r][o]*X[r][k].
// Parallel over output rows so each dW row has a single writer; the row sum
// runs in ascending r for determinism.
inline void matmul_grad_w(const double* dY, const double* X, double* dW,
                          size_t rows, size_t in, size_t out) {
  const size_t grain = 8;
  parallel_chunks(out, grain, [&](size_t o_begin, size_t o_end) {
    for (size_t r = 0; r < rows; ++r) {
      const double* xr = X + r * in;
      const double* gr = dY + r * out;
      for (size_t o = o_begin; o < o_end; ++o) {
        const double g = gr[o];
        if (g == 0.0) continue;
        double* dwo = dW + o * in;
        for (size_t k = 0; k < in; ++k) dwo[k] += g * xr[k];
      }
    }
  });
}

}  // namespace ngrf

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ngrf/common.hpp"
#include "ngrf/kernels.hpp"
#include "ngrf/rng.hpp"

namespace ngrf {

enum class Act { Identity, ReLU, Tanh };

struct Layer {
  size_t in = 0, out = 0;
  std::vector<double> W;  // out x in, row-major
  std::vector<double> b;  // out
  Act act = Act::Identity;
};

struct Mlp {
  std::vector<Layer> layers;

  size_t in_dim() const { return layers.empty() ? 0 : layers.front().in; }
  size_t out_dim() const { return layers.empty() ? 0 : layers.back().out; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.W.size() + l.b.size();
    return n;
  }
};

// Hidden layers all `hidden` wide with ReLU; linear output. Xavier-uniform
// weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
inline Mlp make_mlp(size_t in, size_t hidden, size_t depth, size_t out,
                    Act out_act, Rng& rng) {
  Mlp m;
  size_t prev = in;
  for (size_t i = 0; i < depth; ++i) {
    Layer l;
    l.in = prev;
    l.out = hidden;
    l.act = Act::ReLU;
    double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    l.W.resize(l.in * l.out);
    for (auto& w : l.W) w = rng.uniform(-bound, bound);
    l.b.assign(l.out, 0.0);
    m.layers.push_back(std::move(l));
    prev = hidden;
  }
  Layer o;
  o.in = prev;
  o.out = out;
  o.act = out_act;
  double bound = std::sqrt(6.0 / static_cast<double>(o.in + o.out));
  o.W.resize(o.in * o.out);
  for (auto& w : o.W) w = rng.uniform(-bound, bound);
  o.b.assign(o.out, 0.0);
  m.layers.push_back(std::move(o));
  return m;
}

// acts[0] is the input batch; acts[l+1] the post-activation output of layer l
struct MlpCache {
  size_t rows = 0;
  std::vector<std::vector<double>> acts;
};

inline const std::vector<double>& mlp_forward(const Mlp& mlp,
                                              const double* X, size_t rows,
                                              MlpCache* cache) {
  cache->rows = rows;
  cache->acts.resize(mlp.layers.size() + 1);
  cache->acts[0].assign(X, X + rows * mlp.in_dim());
  for (size_t li = 0; li < mlp.layers.size(); ++li) {
    const Layer& l = mlp.layers[li];
    auto& y = cache->acts[li + 1];
    y.resize(rows * l.out);
    matmul_xt(cache->acts[li].data(), l.W.data(), l.b.data(), y.data(), rows,
              l.in, l.out);
    switch (l.act) {
      case Act::Identity:
        break;
      case Act::ReLU:
        for (auto& v : y)
          if (v < 0.0) v = 0.0;
        break;
      case Act::Tanh:
        for (auto& v : y) v = std::tanh(v);
        break;
    }
  }
  return cache->acts.back();
}

struct MlpGrads {
  std::vector<std::vector<double>> dW, db;

  void init_like(const Mlp& mlp) {
    dW.resize(mlp.layers.size());
    db.resize(mlp.layers.size());
    for (size_t i = 0; i < mlp.layers.size(); ++i) {
      dW[i].assign(mlp.layers[i].W.size(), 0.0);
      db[i].assign(mlp.layers[i].b.size(), 0.0);
    }
  }

  void zero() {
    for (auto& g : dW) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : db) std::fill(g.begin(), g.end(), 0.0);
  }
};

// Accumulates parameter grads into `grads`; writes input grads to dX when
// non-null (rows x in_dim, overwritten). dY is rows x out_dim and is the
// gradient wrt the post-activation output.
inline void mlp_backward(const Mlp& mlp, const MlpCache& cache,
                         const double* dY, MlpGrads* grads, double* dX) {
  size_t rows = cache.rows;
  std::vector<double> dcur(dY, dY + rows * mlp.out_dim());
  std::vector<double> dprev;
  for (size_t li = mlp.layers.size(); li-- > 0;) {
    const Layer& l = mlp.layers[li];
    const auto& y = cache.acts[li + 1];
    // through the activation: post-activation values determine the local slope
    switch (l.act) {
      case Act::Identity:
        break;
      case Act::ReLU:
        for (size_t i = 0; i < dcur.size(); ++i)
          if (y[i] <= 0.0) dcur[i] = 0.0;
        break;
      case Act::Tanh:
        for (size_t i = 0; i < dcur.size(); ++i)
          dcur[i] *= 1.0 - y[i] * y[i];
        break;
    }
    matmul_grad_w(dcur.data(), cache.acts[li].data(), (*grads).dW[li].data(),
                  rows, l.in, l.out);
    auto& db = (*grads).db[li];
    for (size_t r = 0; r < rows; ++r)
      for (size_t o = 0; o < l.out; ++o) db[o] += dcur[r * l.out + o];
    if (li == 0) {
      if (dX) matmul_grad_x(dcur.data(), l.W.data(), dX, rows, l.in, l.out);
    } else {
      dprev.resize(rows * l.in);
      matmul_grad_x(dcur.data(), l.W.data(), dprev.data(), rows, l.in, l.out);
      dcur.swap(dprev);
    }
  }
}

}  // namespace ngrf

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Comparison models: a k-nearest-neighbor interpolator over stored
// measurements, and a plain MLP regressor that plugs into the shared
// trainer through the Renderer interface.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/dataset.hpp"
#include "ngrf/math.hpp"
#include "ngrf/mlp.hpp"
#include "ngrf/model.hpp"

namespace ngrf {

constexpr double kKnnEps = 1e-9;       // inverse-distance regularizer
constexpr double kKnnExactHit = 1e-12;  // below this the stored H is returned

struct KnnModel {
  std::vector<Vec3> pos;
  std::vector<ChannelMatrix> chan;
  size_t k = 5;
  bool uniform = false;  // plain average instead of inverse-distance
  size_t nt = 0, nr = 0;
};

inline KnnModel knn_fit(const Dataset& ds, const std::vector<size_t>& idx,
                        size_t k = 5) {
  if (idx.empty()) throw contract_error("knn_fit: empty training set");
  if (k < 1 || k > idx.size())
    throw contract_error("knn_fit: k must be in [1, train size]");
  KnnModel m;
  m.k = k;
  m.nt = ds.nt;
  m.nr = ds.nr;
  m.pos.reserve(idx.size());
  m.chan.reserve(idx.size());
  for (size_t i : idx) {
    m.pos.push_back(ds.samples[i].p_rx);
    m.chan.push_back(ds.samples[i].H);
  }
  return m;
}

inline ChannelMatrix knn_predict(const KnnModel& m, const Vec3& p_rx) {
  size_t n = m.pos.size();
  if (n == 0) throw contract_error("knn_predict: model not fitted");

  std::vector<double> dist(n);
  for (size_t i = 0; i < n; ++i) dist[i] = (m.pos[i] - p_rx).norm();

  // distance ties broken by position so the result does not depend on the
  // order the training set was stored in
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  auto before = [&](size_t a, size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    const Vec3 &pa = m.pos[a], &pb = m.pos[b];
    if (pa.x != pb.x) return pa.x < pb.x;
    if (pa.y != pb.y) return pa.y < pb.y;
    return pa.z < pb.z;
  };
  size_t k = std::min(m.k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), before);

  if (dist[order[0]] < kKnnExactHit) return m.chan[order[0]];

  ChannelMatrix H(m.nt, m.nr);
  double wsum = 0.0;
  for (size_t j = 0; j < k; ++j) {
    size_t i = order[j];
    double w = m.uniform ? 1.0 : 1.0 / (dist[i] + kKnnEps);
    wsum += w;
    for (size_t e = 0; e < H.h.size(); ++e) H.h[e] += w * m.chan[i].h[e];
  }
  for (auto& c : H.h) c /= wsum;
  return H;
}

// Direct position-to-channel regressor: concat(gamma(p_rx), gamma(p_tx))
// through a ReLU stack onto 2*Nt*Nr tanh planes times a learnable gain,
// mirroring the decoder head so the comparison is architecture-fair.
struct MlpBaselineConfig {
  size_t enc_levels = 16;
  size_t hidden = 256;
  size_t depth = 4;
  size_t nt = 1;
  size_t nr = 1;
};

class MlpBaselineRenderer : public Renderer {
 public:
  MlpBaselineConfig cfg;
  Mlp net;
  MlpGrads net_grads;
  double gain = 1.0;
  double d_gain = 0.0;

  MlpBaselineRenderer(const MlpBaselineConfig& c, Rng& rng) : cfg(c) {
    size_t enc = encoded_size(3, static_cast<int>(c.enc_levels));
    net = make_mlp(2 * enc, c.hidden, c.depth, 2 * c.nt * c.nr, Act::Tanh, rng);
    // same near-zero head as the field model's decoder, for the same reason
    for (auto& w : net.layers.back().W) w *= kDecHeadInit;
    net_grads.init_like(net);
  }

  explicit MlpBaselineRenderer(const nlohmann::json& j)
      : MlpBaselineRenderer(config_from_json(j), dummy_rng()) {}

  std::string tag() const override { return "mlp"; }
  size_t nt() const override { return cfg.nt; }
  size_t nr() const override { return cfg.nr; }
  size_t primitive_count() const override { return 0; }

  nlohmann::json describe() const override {
    return {{"enc_levels", cfg.enc_levels},
            {"hidden", cfg.hidden},
            {"depth", cfg.depth},
            {"nt", cfg.nt},
            {"nr", cfg.nr}};
  }

  std::vector<ParamGroup> param_groups() override {
    std::vector<ParamGroup> out;
    ParamGroup grp{"net", false, {}};
    for (size_t l = 0; l < net.layers.size(); ++l) {
      grp.spans.push_back({net.layers[l].W.data(), net_grads.dW[l].data(),
                           net.layers[l].W.size()});
      grp.spans.push_back({net.layers[l].b.data(), net_grads.db[l].data(),
                           net.layers[l].b.size()});
    }
    out.push_back(std::move(grp));
    out.push_back({"gain", false, {{&gain, &d_gain, 1}}});
    return out;
  }

  void zero_grads() override {
    net_grads.zero();
    d_gain = 0.0;
  }

  std::vector<ChannelMatrix> forward(const Vec3& p_tx, const Vec3* rx,
                                     size_t batch) override {
    if (batch == 0) throw contract_error("mlp forward: empty batch");
    size_t enc = encoded_size(3, static_cast<int>(cfg.enc_levels));
    size_t ent = cfg.nt * cfg.nr;

    std::vector<double> tx_enc(enc);
    double txv[3] = {p_tx.x, p_tx.y, p_tx.z};
    positional_encode(txv, 3, static_cast<int>(cfg.enc_levels), tx_enc.data());

    std::vector<double> X(batch * 2 * enc);
    for (size_t b = 0; b < batch; ++b) {
      double rv[3] = {rx[b].x, rx[b].y, rx[b].z};
      double* row = X.data() + b * 2 * enc;
      positional_encode(rv, 3, static_cast<int>(cfg.enc_levels), row);
      std::copy(tx_enc.begin(), tx_enc.end(), row + enc);
    }

    const auto& y = mlp_forward(net, X.data(), batch, &cache_);
    std::vector<ChannelMatrix> out(batch);
    for (size_t b = 0; b < batch; ++b) {
      ChannelMatrix& H = out[b];
      H.nt = cfg.nt;
      H.nr = cfg.nr;
      H.h.resize(ent);
      const double* row = y.data() + b * 2 * ent;
      for (size_t k = 0; k < ent; ++k)
        H.h[k] = Complex(gain * row[k], gain * row[ent + k]);
    }
    return out;
  }

  void backward(const std::vector<ChannelMatrix>& grad_H,
                const double* /*extra_alpha_grad*/) override {
    size_t batch = cache_.rows;
    if (grad_H.size() != batch)
      throw contract_error("mlp backward: batch mismatch with last forward");
    size_t ent = cfg.nt * cfg.nr;
    const auto& y = cache_.acts.back();
    std::vector<double> dY(batch * 2 * ent);
    for (size_t b = 0; b < batch; ++b) {
      const ChannelMatrix& G = grad_H[b];
      if (G.nt != cfg.nt || G.nr != cfg.nr)
        throw contract_error("mlp backward: grad shape mismatch");
      const double* pre = y.data() + b * 2 * ent;
      double* row = dY.data() + b * 2 * ent;
      for (size_t k = 0; k < ent; ++k) {
        double gr = G.h[k].real(), gi = G.h[k].imag();
        row[k] = gain * gr;
        row[ent + k] = gain * gi;
        d_gain += gr * pre[k] + gi * pre[ent + k];
      }
    }
    mlp_backward(net, cache_, dY.data(), &net_grads, nullptr);
  }

  const std::vector<double>& alphas() const override { return no_alphas_; }
  void scales(std::vector<double>* out) const override { out->clear(); }
  void add_scale_grad(const double* /*d_scale*/) override {}
  void clamp_scales(double /*lo*/, double /*hi*/) override {}

  static MlpBaselineConfig config_from_json(const nlohmann::json& j) {
    MlpBaselineConfig c;
    c.enc_levels = j.at("enc_levels").get<size_t>();
    c.hidden = j.at("hidden").get<size_t>();
    c.depth = j.at("depth").get<size_t>();
    c.nt = j.at("nt").get<size_t>();
    c.nr = j.at("nr").get<size_t>();
    return c;
  }

 private:
  MlpCache cache_;
  std::vector<double> no_alphas_;

  static Rng& dummy_rng() {
    static thread_local Rng r(0);
    r = Rng(0);
    return r;
  }
};

}  // namespace ngrf

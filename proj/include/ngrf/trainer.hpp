// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minibatch training over any Renderer: channel-error loss with activation
// and scale regularizers, Adam (or plain SGD) per parameter group, a decayed
// position learning rate with a hard freeze at the cutoff, receiver-position
// noise during training, and best-validation-SNR checkpointing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/dataset.hpp"
#include "ngrf/model.hpp"

namespace ngrf {

constexpr double kSnrCapDb = 300.0;

struct TrainConfig {
  size_t iterations = 5000;
  size_t batch_size = 32;
  double lr_position = 0.005;
  // factor the position rate decays to across the cutoff window; it then
  // holds at lr_position * lr_position_decay until the freeze
  double lr_position_decay = 0.01;
  double lr_other = 1e-3;
  double lambda_act = 0.1;
  double lambda_reg = 1.0;
  double s_min = 0.05;
  double s_max = 0.2;
  double position_cutoff = 0.625;  // fraction of iterations with live centers
  double noise_sigma = 0.00387;    // meters, rx positions, training only
  uint64_t seed = 42;
  size_t eval_every = 100;
  std::string optimizer = "adam";  // "adam" | "sgd"
  bool early_stop = true;
  double train_fraction = 0.8;
};

// overwrites only the keys present in j, so configs layer
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_position = j.value("lr_position", c.lr_position);
  c.lr_position_decay = j.value("lr_position_decay", c.lr_position_decay);
  c.lr_other = j.value("lr_other", c.lr_other);
  c.lambda_act = j.value("lambda_act", c.lambda_act);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.s_min = j.value("s_min", c.s_min);
  c.s_max = j.value("s_max", c.s_max);
  c.position_cutoff = j.value("position_cutoff", c.position_cutoff);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.early_stop = j.value("early_stop", c.early_stop);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"lr_position", c.lr_position},
       {"lr_position_decay", c.lr_position_decay},
       {"lr_other", c.lr_other},
       {"lambda_act", c.lambda_act},
       {"lambda_reg", c.lambda_reg},
       {"s_min", c.s_min},
       {"s_max", c.s_max},
       {"position_cutoff", c.position_cutoff},
       {"noise_sigma", c.noise_sigma},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"optimizer", c.optimizer},
       {"early_stop", c.early_stop},
       {"train_fraction", c.train_fraction}};
}

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw contract_error("batch_size must be >= 1");
  if (c.lr_position <= 0 || c.lr_other <= 0 || c.lr_position_decay <= 0)
    throw contract_error("learning rates must be positive");
  if (!(c.position_cutoff > 0.0) || c.position_cutoff > 1.0)
    throw contract_error("position_cutoff must lie in (0,1]");
  if (c.noise_sigma < 0) throw contract_error("noise_sigma must be >= 0");
  if (c.s_min <= 0 || c.s_max < c.s_min)
    throw contract_error("scale bounds need 0 < s_min <= s_max");
  if (c.eval_every < 1) throw contract_error("eval_every must be >= 1");
  if (c.optimizer != "adam" && c.optimizer != "sgd")
    throw contract_error("optimizer must be 'adam' or 'sgd'");
  if (!(c.train_fraction > 0.0) || c.train_fraction > 1.0)
    throw contract_error("train_fraction must lie in (0,1]");
}

struct LossParts {
  double total = 0.0, est = 0.0, act = 0.0, reg = 0.0;
};

// (1/B) sum of squared Frobenius distances; optionally emits (2/B)(pred-gt)
inline double est_loss(const std::vector<ChannelMatrix>& pred,
                       const std::vector<ChannelMatrix>& gt, size_t norm_batch,
                       std::vector<ChannelMatrix>* grad = nullptr) {
  if (pred.size() != gt.size())
    throw contract_error("est_loss: batch size mismatch");
  double acc = 0.0;
  if (grad) grad->resize(pred.size());
  for (size_t b = 0; b < pred.size(); ++b) {
    acc += frob_dist2(pred[b], gt[b]);
    if (grad) {
      ChannelMatrix& g = (*grad)[b];
      g = ChannelMatrix(pred[b].nt, pred[b].nr);
      double scale = 2.0 / static_cast<double>(norm_batch);
      for (size_t k = 0; k < g.h.size(); ++k)
        g.h[k] = scale * (pred[b].h[k] - gt[b].h[k]);
    }
  }
  return acc / static_cast<double>(norm_batch);
}

// activation sparsity: mean |alpha| per primitive, alpha batch-averaged
inline double act_loss(const std::vector<double>& alpha_bar) {
  if (alpha_bar.empty()) return 0.0;
  double acc = 0.0;
  for (double a : alpha_bar) acc += std::abs(a);
  return acc / static_cast<double>(alpha_bar.size());
}

// two-sided hinge on linear scales; optionally emits d(reg)/d(scale)
inline double reg_loss(const std::vector<double>& scales, double s_min,
                       double s_max, std::vector<double>* grad = nullptr) {
  if (scales.empty()) return 0.0;
  size_t n = scales.size() / 3;
  if (grad) grad->assign(scales.size(), 0.0);
  double acc = 0.0;
  for (size_t i = 0; i < scales.size(); ++i) {
    double s = scales[i];
    if (s < s_min) {
      acc += s_min - s;
      if (grad) (*grad)[i] = -1.0 / static_cast<double>(n);
    } else if (s > s_max) {
      acc += s - s_max;
      if (grad) (*grad)[i] = 1.0 / static_cast<double>(n);
    }
  }
  return acc / static_cast<double>(n);
}

inline LossParts compute_loss(const std::vector<ChannelMatrix>& pred,
                              const std::vector<ChannelMatrix>& gt,
                              const std::vector<double>& alpha_bar,
                              const std::vector<double>& scales,
                              const TrainConfig& cfg) {
  LossParts p;
  p.est = est_loss(pred, gt, pred.size());
  p.act = act_loss(alpha_bar);
  p.reg = reg_loss(scales, cfg.s_min, cfg.s_max);
  p.total = p.est + cfg.lambda_act * p.act + cfg.lambda_reg * p.reg;
  return p;
}

// Streaming SNR accumulator so evaluation can walk tx groups.
struct SnrAccum {
  double signal = 0.0, error = 0.0;

  void add(const ChannelMatrix& pred, const ChannelMatrix& gt) {
    signal += frob_norm2(gt);
    error += frob_dist2(pred, gt);
  }

  double db() const {
    if (signal <= 0.0)
      throw numeric_error("snr undefined: ground-truth energy is zero");
    if (error <= 0.0) return kSnrCapDb;
    return std::min(10.0 * std::log10(signal / error), kSnrCapDb);
  }
};

inline double snr_db(const std::vector<ChannelMatrix>& pred,
                     const std::vector<ChannelMatrix>& gt) {
  if (pred.size() != gt.size()) throw contract_error("snr: batch mismatch");
  SnrAccum acc;
  for (size_t b = 0; b < pred.size(); ++b) acc.add(pred[b], gt[b]);
  return acc.db();
}

// Groups sample indices by bit-identical transmitter position, preserving
// first-seen order. Batches usually hold a single group.
struct TxGroup {
  Vec3 tx;
  std::vector<size_t> idx;
};

inline std::vector<TxGroup> group_by_tx(const std::vector<Sample>& samples,
                                        const std::vector<size_t>& idx) {
  std::vector<TxGroup> groups;
  for (size_t i : idx) {
    const Vec3& t = samples[i].p_tx;
    TxGroup* hit = nullptr;
    for (auto& g : groups)
      if (g.tx.x == t.x && g.tx.y == t.y && g.tx.z == t.z) {
        hit = &g;
        break;
      }
    if (!hit) {
      groups.push_back({t, {}});
      hit = &groups.back();
    }
    hit->idx.push_back(i);
  }
  return groups;
}

struct EvalResult {
  double snr = 0.0;
  double est = 0.0, act = 0.0, reg = 0.0;
};

// Clean-position forward over the given samples: SNR plus raw loss parts.
inline EvalResult evaluate(Renderer& r, const Dataset& ds,
                           const std::vector<size_t>& idx, double s_min,
                           double s_max) {
  if (idx.empty()) throw contract_error("evaluate: no samples");
  size_t n = r.primitive_count();
  std::vector<double> alpha_bar(n, 0.0);
  SnrAccum snr;
  double est_acc = 0.0;
  for (const auto& g : group_by_tx(ds.samples, idx)) {
    std::vector<Vec3> rx(g.idx.size());
    for (size_t k = 0; k < g.idx.size(); ++k) rx[k] = ds.samples[g.idx[k]].p_rx;
    auto pred = r.forward(g.tx, rx.data(), rx.size());
    const std::vector<double>& a = r.alphas();
    for (size_t i = 0; i < n; ++i)
      alpha_bar[i] += a[i] * static_cast<double>(g.idx.size());
    for (size_t k = 0; k < g.idx.size(); ++k) {
      snr.add(pred[k], ds.samples[g.idx[k]].H);
      est_acc += frob_dist2(pred[k], ds.samples[g.idx[k]].H);
    }
  }
  for (double& a : alpha_bar) a /= static_cast<double>(idx.size());
  std::vector<double> scales;
  r.scales(&scales);
  EvalResult out;
  out.snr = snr.db();
  out.est = est_acc / static_cast<double>(idx.size());
  out.act = act_loss(alpha_bar);
  out.reg = reg_loss(scales, s_min, s_max);
  return out;
}

struct MetricRow {
  size_t iter = 0;
  double loss = 0.0, est = 0.0, act = 0.0, reg = 0.0;
  double train_snr = 0.0, test_snr = 0.0;
};

struct TrainResult {
  std::vector<MetricRow> trace;
  double best_test_snr = -std::numeric_limits<double>::infinity();
  size_t best_iter = 0;
  size_t iterations_run = 0;
  bool converged = false;
};

inline void write_metrics_csv(std::ostream& os,
                              const std::vector<MetricRow>& trace) {
  os << "iter,loss,est,act,reg,train_snr,test_snr\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.iter, r.loss, r.est, r.act, r.reg, r.train_snr, r.test_snr);
    os << buf;
  }
}

// Per-group Adam with bias correction; a frozen group keeps its step count.
class GroupOptimizer {
 public:
  GroupOptimizer(std::vector<ParamGroup> groups, bool adam)
      : groups_(std::move(groups)), adam_(adam) {
    if (adam_) {
      m_.resize(groups_.size());
      v_.resize(groups_.size());
      t_.assign(groups_.size(), 0);
      for (size_t g = 0; g < groups_.size(); ++g) {
        m_[g].assign(groups_[g].size(), 0.0);
        v_[g].assign(groups_[g].size(), 0.0);
      }
    }
  }

  void step(double lr_position, double lr_other, bool update_positions) {
    for (size_t g = 0; g < groups_.size(); ++g) {
      ParamGroup& grp = groups_[g];
      if (grp.position && !update_positions) continue;
      double lr = grp.position ? lr_position : lr_other;
      if (!adam_) {
        for (const auto& sp : grp.spans)
          for (size_t i = 0; i < sp.n; ++i) sp.p[i] -= lr * sp.g[i];
        continue;
      }
      size_t t = ++t_[g];
      double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      size_t off = 0;
      for (const auto& sp : grp.spans) {
        for (size_t i = 0; i < sp.n; ++i) {
          double grad = sp.g[i];
          double& m = m_[g][off + i];
          double& v = v_[g][off + i];
          m = kBeta1 * m + (1.0 - kBeta1) * grad;
          v = kBeta2 * v + (1.0 - kBeta2) * grad * grad;
          sp.p[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + kEps);
        }
        off += sp.n;
      }
    }
  }

  const std::vector<ParamGroup>& groups() const { return groups_; }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<ParamGroup> groups_;
  bool adam_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<size_t> t_;
};

class Trainer {
 public:
  Trainer(Renderer& r, const Dataset& ds, const TrainConfig& cfg)
      : r_(r),
        ds_(ds),
        cfg_(cfg),
        opt_(r.param_groups(), cfg.optimizer == "adam") {
    validate(cfg_);
    if (ds_.samples.empty()) throw data_error("empty dataset");
    SplitIndices split = split_dataset(ds_.samples.size(), cfg_.train_fraction,
                                       cfg_.seed);
    train_idx_ = std::move(split.train);
    // tiny datasets may leave no held-out samples; validate on train then
    test_idx_ = split.test.empty() ? train_idx_ : std::move(split.test);

    cutoff_iter_ = static_cast<size_t>(
        std::llround(cfg_.position_cutoff * static_cast<double>(cfg_.iterations)));
    scale_hi_ = scene_diagonal();

    noisy_rx_.resize(train_idx_.size());
    begin_epoch();
    record_eval();  // iteration 0: metrics of the initialized model
  }

  size_t iteration() const { return iter_; }
  const std::vector<MetricRow>& trace() const { return trace_; }
  size_t cutoff_iteration() const { return cutoff_iter_; }

  // One optimizer step. False once the iteration budget or the convergence
  // rule (best validation SNR holds within 1 dB for 500 iterations) is hit.
  bool step() {
    if (done_) return false;
    if (iter_ >= cfg_.iterations) {
      done_ = true;
      return false;
    }
    ++iter_;

    // resolve dataset indices and noisy positions at assembly time; an
    // epoch boundary mid-batch reshuffles perm_ and refreshes the noise
    std::vector<const Sample*> samp(cfg_.batch_size);
    std::vector<Vec3> batch_rx(cfg_.batch_size);
    for (size_t k = 0; k < cfg_.batch_size; ++k) {
      if (cursor_ == train_idx_.size()) begin_epoch();
      samp[k] = &ds_.samples[train_idx_[perm_[cursor_]]];
      batch_rx[k] = noisy_rx_[perm_[cursor_]];
      ++cursor_;
    }

    r_.zero_grads();
    size_t n = r_.primitive_count();
    size_t B = cfg_.batch_size;
    double est_acc = 0.0, act_acc = 0.0;

    // group the batch by transmitter; alphas are positive by contract, so
    // the L1 activation gradient per group is lambda/(N*B) * group size
    std::vector<char> used(B, 0);
    for (size_t k0 = 0; k0 < B; ++k0) {
      if (used[k0]) continue;
      const Vec3& tx = samp[k0]->p_tx;
      std::vector<size_t> members;
      for (size_t k = k0; k < B; ++k)
        if (!used[k] && samp[k]->p_tx.x == tx.x && samp[k]->p_tx.y == tx.y &&
            samp[k]->p_tx.z == tx.z) {
          members.push_back(k);
          used[k] = 1;
        }

      std::vector<Vec3> rx(members.size());
      std::vector<ChannelMatrix> gt(members.size());
      for (size_t j = 0; j < members.size(); ++j) {
        rx[j] = batch_rx[members[j]];
        gt[j] = samp[members[j]]->H;
      }
      auto pred = r_.forward(tx, rx.data(), rx.size());

      std::vector<ChannelMatrix> grad_H;
      est_acc += est_loss(pred, gt, B, &grad_H) * static_cast<double>(B);

      const std::vector<double>& a = r_.alphas();
      double w = static_cast<double>(members.size()) / static_cast<double>(B);
      for (size_t i = 0; i < n; ++i) act_acc += std::abs(a[i]) * w;
      std::vector<double> extra(n, cfg_.lambda_act * static_cast<double>(members.size()) /
                                       (static_cast<double>(n) * static_cast<double>(B)));
      r_.backward(grad_H, extra.data());
    }
    est_acc /= static_cast<double>(B);
    if (n > 0) act_acc /= static_cast<double>(n);

    std::vector<double> scales, dscales;
    r_.scales(&scales);
    double reg = reg_loss(scales, cfg_.s_min, cfg_.s_max, &dscales);
    if (!scales.empty()) {
      for (double& d : dscales) d *= cfg_.lambda_reg;
      r_.add_scale_grad(dscales.data());
    }

    double total = est_acc + cfg_.lambda_act * act_acc + cfg_.lambda_reg * reg;
    if (!std::isfinite(total))
      throw numeric_error("non-finite loss at iteration " +
                          std::to_string(iter_) + " (group: " +
                          offending_group() + ")");

    bool live_positions = iter_ <= cutoff_iter_;
    opt_.step(position_lr(), cfg_.lr_other, live_positions);
    r_.clamp_scales(kScaleEps, scale_hi_);

    if (iter_ % cfg_.eval_every == 0 || iter_ == cfg_.iterations) {
      record_eval();
      if (converged()) {
        done_ = true;
        converged_flag_ = true;
      }
    }
    if (iter_ >= cfg_.iterations) done_ = true;
    return !done_;
  }

  TrainResult run() {
    while (step()) {
    }
    return finish();
  }

  // restores the best-validation parameters and packages the result
  TrainResult finish() {
    done_ = true;
    if (!best_params_.empty()) restore_params(best_params_);
    TrainResult out;
    out.trace = trace_;
    out.best_test_snr = best_snr_;
    out.best_iter = best_iter_;
    out.iterations_run = iter_;
    out.converged = converged_flag_;
    return out;
  }

 private:
  double position_lr() const {
    if (cutoff_iter_ == 0) return cfg_.lr_position;
    double frac = std::min(1.0, static_cast<double>(iter_) /
                                    static_cast<double>(cutoff_iter_));
    return cfg_.lr_position * std::pow(cfg_.lr_position_decay, frac);
  }

  void begin_epoch() {
    perm_.resize(train_idx_.size());
    for (size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
    Rng shuffle_rng = Rng::stream(cfg_.seed, (2ull << 48) + epoch_);
    shuffle_rng.shuffle(perm_.data(), perm_.size());
    // receiver positions are re-noised once per pass over the data
    for (size_t i = 0; i < train_idx_.size(); ++i) {
      Vec3 p = ds_.samples[train_idx_[i]].p_rx;
      if (cfg_.noise_sigma > 0.0) {
        Rng g = Rng::stream(cfg_.seed,
                            (1ull << 48) + epoch_ * train_idx_.size() + i);
        p.x += g.normal(0.0, cfg_.noise_sigma);
        p.y += g.normal(0.0, cfg_.noise_sigma);
        p.z += g.normal(0.0, cfg_.noise_sigma);
      }
      noisy_rx_[i] = p;
    }
    ++epoch_;
    cursor_ = 0;
  }

  void record_eval() {
    EvalResult train_ev = evaluate(r_, ds_, train_idx_, cfg_.s_min, cfg_.s_max);
    EvalResult test_ev = evaluate(r_, ds_, test_idx_, cfg_.s_min, cfg_.s_max);
    MetricRow row;
    row.iter = iter_;
    row.est = train_ev.est;
    row.act = train_ev.act;
    row.reg = train_ev.reg;
    row.loss = train_ev.est + cfg_.lambda_act * train_ev.act +
               cfg_.lambda_reg * train_ev.reg;
    row.train_snr = train_ev.snr;
    row.test_snr = test_ev.snr;
    trace_.push_back(row);

    if (row.test_snr > best_snr_) {
      best_snr_ = row.test_snr;
      best_iter_ = iter_;
      window_ok_ = true;
      snapshot_params(&best_params_);
    } else if (row.test_snr < best_snr_ - 1.0) {
      window_ok_ = false;
    }
  }

  bool converged() const {
    return cfg_.early_stop && window_ok_ && iter_ >= best_iter_ + 500;
  }

  // params first: a bad parameter poisons gradients everywhere downstream,
  // so the gradient scan alone would blame the wrong group
  std::string offending_group() const {
    for (const auto& g : opt_.groups())
      for (const auto& sp : g.spans)
        for (size_t i = 0; i < sp.n; ++i)
          if (!std::isfinite(sp.p[i])) return g.name;
    for (const auto& g : opt_.groups())
      for (const auto& sp : g.spans)
        for (size_t i = 0; i < sp.n; ++i)
          if (!std::isfinite(sp.g[i])) return g.name;
    return "unknown";
  }

  void snapshot_params(std::vector<double>* out) const {
    out->clear();
    for (const auto& g : opt_.groups())
      for (const auto& sp : g.spans) out->insert(out->end(), sp.p, sp.p + sp.n);
  }

  void restore_params(const std::vector<double>& flat) {
    size_t off = 0;
    for (const auto& g : opt_.groups())
      for (const auto& sp : g.spans) {
        std::copy(flat.begin() + off, flat.begin() + off + sp.n, sp.p);
        off += sp.n;
      }
  }

  double scene_diagonal() const {
    Vec3 lo = ds_.samples[0].p_rx, hi = lo;
    auto fold = [&](const Vec3& p) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    };
    for (const auto& s : ds_.samples) {
      fold(s.p_rx);
      fold(s.p_tx);
    }
    double d = (hi - lo).norm();
    return d > 1e-3 ? d : 1e-3;
  }

  Renderer& r_;
  const Dataset& ds_;
  TrainConfig cfg_;
  GroupOptimizer opt_;
  std::vector<size_t> train_idx_, test_idx_;
  std::vector<size_t> perm_;
  std::vector<Vec3> noisy_rx_;
  size_t cursor_ = 0;
  uint64_t epoch_ = 0;
  size_t iter_ = 0;
  size_t cutoff_iter_ = 0;
  double scale_hi_ = 1.0;
  std::vector<MetricRow> trace_;
  std::vector<double> best_params_;
  double best_snr_ = -std::numeric_limits<double>::infinity();
  size_t best_iter_ = 0;
  bool window_ok_ = true;
  bool converged_flag_ = false;
  bool done_ = false;
};

inline TrainResult train(Renderer& r, const Dataset& ds,
                         const TrainConfig& cfg) {
  Trainer t(r, ds, cfg);
  return t.run();
}

}  // namespace ngrf

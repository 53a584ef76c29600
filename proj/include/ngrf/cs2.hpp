// SPDX-License-Identifier: Apache-2.0
#pragma once

// Alpha-compositing channel variant. Each primitive carries a learned
// amplitude, phase offset, and opacity; its free-space contribution to an
// antenna pair is weighted by the splatted footprint and composited
// front-to-back in depth order (distance to the receive element). There is
// no separate line-of-sight term; everything the channel contains must be
// represented by the composited field.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/channel.hpp"
#include "ngrf/common.hpp"
#include "ngrf/math.hpp"
#include "ngrf/model.hpp"
#include "ngrf/parallel.hpp"
#include "ngrf/rng.hpp"
#include "ngrf/splat.hpp"

namespace ngrf {

class Cs2Renderer : public Renderer {
 public:
  Cs2Renderer(const SplatConfig& cfg, Rng& rng) : cfg_(cfg) { init(rng); }

  explicit Cs2Renderer(const nlohmann::json& config)
      : cfg_(splat_config_from_json(config)) {
    Rng dummy(0);
    init(dummy);
  }

  std::string tag() const override { return "cs2"; }
  size_t nt() const override { return cfg_.arrays.tx_rows * cfg_.arrays.tx_cols; }
  size_t nr() const override { return cfg_.arrays.rx_n; }
  size_t primitive_count() const override { return cfg_.n_gaussians; }
  nlohmann::json describe() const override { return splat_config_to_json(cfg_); }

  std::vector<ParamGroup> param_groups() override {
    size_t n = cfg_.n_gaussians;
    std::vector<ParamGroup> g;
    g.push_back({"positions", true, {{pos_.data(), g_pos_.data(), 3 * n}}});
    g.push_back({"rotations", false, {{rot_.data(), g_rot_.data(), 4 * n}}});
    g.push_back({"scales", false, {{scl_.data(), g_scl_.data(), 3 * n}}});
    g.push_back({"amplitudes", false, {{amp_.data(), g_amp_.data(), n}}});
    g.push_back({"phases", false, {{psi_.data(), g_psi_.data(), n}}});
    g.push_back({"opacities", false, {{opa_.data(), g_opa_.data(), n}}});
    return g;
  }

  void zero_grads() override {
    std::fill(g_pos_.begin(), g_pos_.end(), 0.0);
    std::fill(g_rot_.begin(), g_rot_.end(), 0.0);
    std::fill(g_scl_.begin(), g_scl_.end(), 0.0);
    std::fill(g_amp_.begin(), g_amp_.end(), 0.0);
    std::fill(g_psi_.begin(), g_psi_.end(), 0.0);
    std::fill(g_opa_.begin(), g_opa_.end(), 0.0);
  }

  std::vector<ChannelMatrix> forward(const Vec3& p_tx, const Vec3* rx,
                                     size_t batch) override;
  void backward(const std::vector<ChannelMatrix>& grad_H,
                const double* extra_alpha_grad) override;

  const std::vector<double>& alphas() const override { return alpha_; }

  void scales(std::vector<double>* out) const override {
    out->resize(scl_.size());
    for (size_t i = 0; i < scl_.size(); ++i) (*out)[i] = softplus(scl_[i]);
  }

  void add_scale_grad(const double* d_scale) override {
    for (size_t i = 0; i < scl_.size(); ++i)
      g_scl_[i] += d_scale[i] * sigmoid(scl_[i]);
  }

  void clamp_scales(double lo, double hi) override {
    double rlo = softplus_inv(lo), rhi = softplus_inv(hi);
    for (double& r : scl_) r = std::clamp(r, rlo, rhi);
  }

  double wavelength() const { return kSpeedOfLight / cfg_.carrier_hz; }
  const SplatConfig& config() const { return cfg_; }

 private:
  void init(Rng& rng) {
    size_t n = cfg_.n_gaussians;
    pos_.resize(3 * n);
    rot_.assign(4 * n, 0.0);
    scl_.assign(3 * n, softplus_inv(kDefaultSplatScale));
    amp_.assign(n, softplus_inv(0.01));
    psi_.resize(n);
    opa_.assign(n, 0.0);
    g_pos_.assign(3 * n, 0.0);
    g_rot_.assign(4 * n, 0.0);
    g_scl_.assign(3 * n, 0.0);
    g_amp_.assign(n, 0.0);
    g_psi_.assign(n, 0.0);
    g_opa_.assign(n, 0.0);
    alpha_.assign(n, 0.5);
    for (size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a)
        pos_[3 * i + a] = rng.uniform(cfg_.bounds_lo[a], cfg_.bounds_hi[a]);
      rot_[4 * i] = 1.0;
      psi_[i] = rng.uniform(-kPi, kPi);
    }
    double lam = wavelength();
    rx_off_.clear();
    for (size_t i = 0; i < cfg_.arrays.rx_n; ++i)
      rx_off_.push_back(
          {static_cast<double>(i) * cfg_.arrays.rx_spacing * lam, 0.0, 0.0});
  }

  struct SplatRow {
    double u = 0, v = 0;
    double r = 0;
    double J[6] = {0, 0, 0, 0, 0, 0};
    Cov2d cov;
    Complex C{0, 0};
    uint8_t pole = 0;
  };

  size_t row_idx(size_t b, size_t k, size_t j) const {
    return (b * cfg_.n_gaussians + k) * cfg_.arrays.rx_n + j;
  }
  size_t sig_idx(size_t b, size_t k, size_t i, size_t j) const {
    return ((b * cfg_.n_gaussians + k) * nt() + i) * cfg_.arrays.rx_n + j;
  }

  SplatConfig cfg_;
  std::vector<double> pos_, rot_, scl_, amp_, psi_, opa_;
  std::vector<double> g_pos_, g_rot_, g_scl_, g_amp_, g_psi_, g_opa_;
  std::vector<double> alpha_;
  std::vector<Vec3> rx_off_;

  // forward caches consumed by backward
  std::vector<Vec3> rx_;
  std::vector<Mat3> sigma3_, rot_mat_;     // per k
  std::vector<SplatRow> rows_;             // (b, k, j)
  std::vector<double> sig_;                // (b, k, i, j)
  std::vector<uint32_t> order_;            // (b, j) -> n sorted indices
};

inline std::vector<ChannelMatrix> Cs2Renderer::forward(const Vec3& /*p_tx*/,
                                                       const Vec3* rx,
                                                       size_t batch) {
  size_t n = cfg_.n_gaussians, ent_t = nt(), ent_r = nr();
  double lam = wavelength();
  rx_.assign(rx, rx + batch);
  rows_.resize(batch * n * ent_r);
  sig_.assign(batch * n * ent_t * ent_r, 0.0);
  order_.resize(batch * ent_r * n);

  rot_mat_.resize(n);
  sigma3_.resize(n);
  for (size_t k = 0; k < n; ++k) {
    Quat q{rot_[4 * k], rot_[4 * k + 1], rot_[4 * k + 2], rot_[4 * k + 3]};
    rot_mat_[k] = build_rotation(q);
    Vec3 s{softplus(scl_[3 * k]), softplus(scl_[3 * k + 1]),
           softplus(scl_[3 * k + 2])};
    sigma3_[k] = covariance_from(rot_mat_[k], s);
    alpha_[k] = sigmoid(opa_[k]);
  }

  std::vector<ChannelMatrix> out(batch, ChannelMatrix(ent_t, ent_r));
  parallel_chunks(batch, 1, [&](size_t bb, size_t be) {
    std::vector<uint32_t> idx(n);
    for (size_t b = bb; b < be; ++b) {
      for (size_t k = 0; k < n; ++k) {
        Vec3 mu{pos_[3 * k], pos_[3 * k + 1], pos_[3 * k + 2]};
        double A = softplus(amp_[k]);
        for (size_t j = 0; j < ent_r; ++j) {
          SplatRow& row = rows_[row_idx(b, k, j)];
          Vec3 off = mu - (rx_[b] + rx_off_[j]);
          double n2 = off.dot(off);
          if (n2 < 1e-24) {
            row.pole = 1;
            row.r = 0.0;
            row.C = Complex(0, 0);
            continue;
          }
          UvPoint p = project_uv(off, ent_t, ent_r);
          row.r = p.r;
          double base = lam / (4.0 * kPi * p.r);
          double chi = psi_[k] - 2.0 * kPi * p.r / lam;
          row.C = Complex(A * base * std::cos(chi), A * base * std::sin(chi));
          if (p.pole) {
            row.pole = 1;
            continue;
          }
          row.pole = 0;
          row.u = p.u;
          row.v = p.v;
          for (int a = 0; a < 6; ++a) row.J[a] = p.J[a];
          row.cov = cov2d_from(row.J, sigma3_[k]);
          for (size_t i = 0; i < ent_t; ++i) {
            double du = row.u - (static_cast<double>(i) + 0.5);
            double dv = row.v - (static_cast<double>(j) + 0.5);
            sig_[sig_idx(b, k, i, j)] = splat_weight(row.cov, du, dv);
          }
        }
      }
      ChannelMatrix& H = out[b];
      for (size_t j = 0; j < ent_r; ++j) {
        std::iota(idx.begin(), idx.end(), 0u);
        std::sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t c) {
          double ra = rows_[row_idx(b, a, j)].r;
          double rc = rows_[row_idx(b, c, j)].r;
          if (ra != rc) return ra < rc;
          return a < c;
        });
        std::copy(idx.begin(), idx.end(), order_.begin() + (b * ent_r + j) * n);
        for (size_t i = 0; i < ent_t; ++i) {
          double T = 1.0;
          Complex acc(0, 0);
          for (size_t p = 0; p < n; ++p) {
            uint32_t k = idx[p];
            const SplatRow& row = rows_[row_idx(b, k, j)];
            if (row.pole) continue;
            double e = alpha_[k] * sig_[sig_idx(b, k, i, j)];
            acc += (e * T) * row.C;
            T *= 1.0 - e;
          }
          H.at(i, j) = acc;
        }
      }
    }
  });
  return out;
}

inline void Cs2Renderer::backward(const std::vector<ChannelMatrix>& grad_H,
                                  const double* extra_alpha_grad) {
  size_t n = cfg_.n_gaussians, ent_t = nt(), ent_r = nr();
  size_t batch = rx_.size();
  if (grad_H.size() != batch)
    throw contract_error("cs2 backward: batch mismatch");
  double lam = wavelength();

  // Pass 1 walks each antenna pair in depth order, pushing gradients onto
  // per-row (g_C, g_uv, g_M) and per-primitive opacity accumulators. The
  // transmittance suffix S_q = sum_{p>q} <g_H, e_p C_p T_p> obeys
  // S_q/(1-e_q) = T_q * D_{q+1} for the running value D below, which turns
  // the quadratic dependency into one reverse sweep.
  std::vector<Complex> g_rowC(batch * n * ent_r, Complex(0, 0));
  std::vector<double> g_row_uv(batch * n * ent_r * 2, 0.0);
  std::vector<double> g_row_M(batch * n * ent_r * 3, 0.0);
  std::vector<double> g_alpha_acc(n, 0.0);
  std::vector<double> tbuf(n);
  for (size_t b = 0; b < batch; ++b) {
    const ChannelMatrix& G = grad_H[b];
    for (size_t j = 0; j < ent_r; ++j) {
      const uint32_t* ord = order_.data() + (b * ent_r + j) * n;
      for (size_t i = 0; i < ent_t; ++i) {
        Complex gH = G.at(i, j);
        double T = 1.0;
        for (size_t p = 0; p < n; ++p) {
          tbuf[p] = T;
          const SplatRow& row = rows_[row_idx(b, ord[p], j)];
          if (row.pole) continue;
          T *= 1.0 - alpha_[ord[p]] * sig_[sig_idx(b, ord[p], i, j)];
        }
        double D = 0.0;
        for (size_t p = n; p-- > 0;) {
          uint32_t k = ord[p];
          const SplatRow& row = rows_[row_idx(b, k, j)];
          if (row.pole) continue;
          double sg = sig_[sig_idx(b, k, i, j)];
          double al = alpha_[k];
          double e = al * sg;
          double dotC = gH.real() * row.C.real() + gH.imag() * row.C.imag();
          g_rowC[row_idx(b, k, j)] += (e * tbuf[p]) * gH;
          double g_e = tbuf[p] * dotC - tbuf[p] * D;
          g_alpha_acc[k] += g_e * sg;
          double g_sg = g_e * al;
          double du = row.u - (static_cast<double>(i) + 0.5);
          double dv = row.v - (static_cast<double>(j) + 0.5);
          splat_weight_backward(row.cov, du, dv, sg, g_sg,
                                &g_row_uv[row_idx(b, k, j) * 2],
                                &g_row_M[row_idx(b, k, j) * 3]);
          D = e * dotC + D * (1.0 - e);
        }
      }
    }
  }

  // Pass 2 chains the row accumulators back to the primitive parameters.
  parallel_chunks(n, 16, [&](size_t kb, size_t ke) {
    for (size_t k = kb; k < ke; ++k) {
      Vec3 g_mu{0, 0, 0};
      Mat3 G3;
      double gA = 0.0, g_psi = 0.0;
      double A = softplus(amp_[k]);
      Vec3 mu{pos_[3 * k], pos_[3 * k + 1], pos_[3 * k + 2]};
      for (size_t b = 0; b < batch; ++b) {
        for (size_t j = 0; j < ent_r; ++j) {
          const SplatRow& row = rows_[row_idx(b, k, j)];
          if (row.pole) continue;
          const Complex& gC = g_rowC[row_idx(b, k, j)];
          double base = lam / (4.0 * kPi * row.r);
          double chi = psi_[k] - 2.0 * kPi * row.r / lam;
          double cc = std::cos(chi), sc = std::sin(chi);
          gA += gC.real() * base * cc + gC.imag() * base * sc;
          g_psi += A * base * (-gC.real() * sc + gC.imag() * cc);
          double dRe_dr = -A * base / row.r * cc + A * base * 2.0 * kPi / lam * sc;
          double dIm_dr = -A * base / row.r * sc - A * base * 2.0 * kPi / lam * cc;
          double g_r = gC.real() * dRe_dr + gC.imag() * dIm_dr;
          const double* g_uv = &g_row_uv[row_idx(b, k, j) * 2];
          Vec3 g_off{row.J[0] * g_uv[0] + row.J[3] * g_uv[1],
                     row.J[1] * g_uv[0] + row.J[4] * g_uv[1],
                     row.J[2] * g_uv[0] + row.J[5] * g_uv[1]};
          double g_J[6] = {0, 0, 0, 0, 0, 0};
          cov2d_backward(row.J, sigma3_[k], &g_row_M[row_idx(b, k, j) * 3],
                         &G3, g_J);
          Vec3 off = mu - (rx_[b] + rx_off_[j]);
          project_jacobian_backward(off, ent_t, ent_r, g_J, &g_off);
          g_off += off * (g_r / row.r);
          g_mu += g_off;
        }
      }
      Vec3 s{softplus(scl_[3 * k]), softplus(scl_[3 * k + 1]),
             softplus(scl_[3 * k + 2])};
      Mat3 g_R;
      Vec3 g_s{0, 0, 0};
      covariance_backward(rot_mat_[k], s, G3, &g_R, &g_s);
      Quat q{rot_[4 * k], rot_[4 * k + 1], rot_[4 * k + 2], rot_[4 * k + 3]};
      Quat g_q = build_rotation_backward(q, g_R);
      for (int a = 0; a < 4; ++a) g_rot_[4 * k + a] += g_q[a];
      for (int a = 0; a < 3; ++a)
        g_scl_[3 * k + a] += g_s[a] * sigmoid(scl_[3 * k + a]);
      g_pos_[3 * k] += g_mu.x;
      g_pos_[3 * k + 1] += g_mu.y;
      g_pos_[3 * k + 2] += g_mu.z;
      g_amp_[k] += gA * sigmoid(amp_[k]);
      double g_al = g_alpha_acc[k];
      if (extra_alpha_grad) g_al += extra_alpha_grad[k];
      double al = alpha_[k];
      g_opa_[k] += g_al * al * (1.0 - al);
      g_psi_[k] += g_psi;
    }
  });
}

}  // namespace ngrf

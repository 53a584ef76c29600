// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scatterer-field channel variant. Each primitive is an explicit point
// scatterer with a complex gain, an anisotropic angular footprint splatted
// onto the antenna grid, and an opacity. The rendered channel is the
// line-of-sight term plus the opacity- and footprint-weighted sum of
// single-scatter plane-wave contributions. The line-of-sight term is held
// constant in the backward pass.

#include <cmath>
#include <cstdint>
#include <stdexcept>
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

// Planar-array steering phases. Element m of the transmit array sits at
// (row*d, col*d, 0) in array coordinates, the receive line along x. The
// entries are exp(-j xi_m); adjoints run through xi back to the angles.
inline double steer_phase_ura(double k_wn, const Vec3& el, double cphi,
                              double sphi, double cth) {
  return k_wn * cth * (el.x * cphi + el.y * sphi);
}

inline double steer_phase_ula(double k_wn, double x, double cphi, double cth) {
  return k_wn * x * cth * cphi;
}

class Cs1Renderer : public Renderer {
 public:
  Cs1Renderer(const SplatConfig& cfg, Rng& rng) : cfg_(cfg) { init(rng); }

  explicit Cs1Renderer(const nlohmann::json& config)
      : cfg_(splat_config_from_json(config)) {
    Rng dummy(0);
    init(dummy);
  }

  std::string tag() const override { return "cs1"; }
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
    g.push_back({"gammas", false, {{gam_.data(), g_gam_.data(), 2 * n}}});
    g.push_back({"opacities", false, {{opa_.data(), g_opa_.data(), n}}});
    return g;
  }

  void zero_grads() override {
    std::fill(g_pos_.begin(), g_pos_.end(), 0.0);
    std::fill(g_rot_.begin(), g_rot_.end(), 0.0);
    std::fill(g_scl_.begin(), g_scl_.end(), 0.0);
    std::fill(g_gam_.begin(), g_gam_.end(), 0.0);
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
    gam_.resize(2 * n);
    opa_.assign(n, 0.0);
    g_pos_.assign(3 * n, 0.0);
    g_rot_.assign(4 * n, 0.0);
    g_scl_.assign(3 * n, 0.0);
    g_gam_.assign(2 * n, 0.0);
    g_opa_.assign(n, 0.0);
    alpha_.assign(n, 0.5);
    for (size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a)
        pos_[3 * i + a] = rng.uniform(cfg_.bounds_lo[a], cfg_.bounds_hi[a]);
      rot_[4 * i] = 1.0;  // identity orientation
      gam_[2 * i] = rng.normal(0.0, 0.1);
      gam_[2 * i + 1] = rng.normal(0.0, 0.1);
    }
    double lam = wavelength();
    tx_off_.clear();
    for (size_t r = 0; r < cfg_.arrays.tx_rows; ++r)
      for (size_t c = 0; c < cfg_.arrays.tx_cols; ++c)
        tx_off_.push_back(
            {static_cast<double>(r) * cfg_.arrays.tx_spacing * lam,
             static_cast<double>(c) * cfg_.arrays.tx_spacing * lam, 0.0});
    rx_off_.clear();
    for (size_t i = 0; i < cfg_.arrays.rx_n; ++i)
      rx_off_.push_back(
          {static_cast<double>(i) * cfg_.arrays.rx_spacing * lam, 0.0, 0.0});
  }

  // angular geometry of one propagation leg
  struct LegGeom {
    Vec3 v{0, 0, 0};
    double d = 0, rho = 0;
    double cphi = 1, sphi = 0, cth = 1, sth = 0;
  };

  static LegGeom leg_geom(const Vec3& v) {
    LegGeom g;
    g.v = v;
    g.rho = std::sqrt(v.x * v.x + v.y * v.y);
    g.d = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    double phi = std::atan2(v.y, v.x);
    double th = std::asin(std::clamp(v.z / g.d, -1.0, 1.0));
    g.cphi = std::cos(phi);
    g.sphi = std::sin(phi);
    g.cth = std::cos(th);
    g.sth = std::sin(th);
    return g;
  }

  // chain (g_phi, g_th) of an angle pair back to the primitive position;
  // sign = +1 when the leg vector is (mu - fixed), -1 for (fixed - mu)
  static void angle_grads_to_mu(const LegGeom& g, double g_phi, double g_th,
                                double sign, Vec3* g_mu) {
    if (g.cth < 1e-9) return;  // azimuth undefined near the poles
    double rho2 = g.rho * g.rho;
    Vec3 dphi{-g.v.y / rho2, g.v.x / rho2, 0.0};
    double d3c = g.d * g.d * g.d * g.cth;
    Vec3 dth{-g.v.x * g.v.z / d3c, -g.v.y * g.v.z / d3c, rho2 / d3c};
    *g_mu += sign * (g_phi * dphi + g_th * dth);
  }

  struct RxGeom {
    LegGeom aoa;
    Complex beta{0, 0};
    double a_amp = 0, phase = 0;
    uint8_t skip = 0;
  };

  struct SplatRow {
    double u = 0, v = 0;
    double J[6] = {0, 0, 0, 0, 0, 0};
    Cov2d cov;
    uint8_t pole = 0;
  };

  SplatConfig cfg_;
  std::vector<double> pos_, rot_, scl_, gam_, opa_;
  std::vector<double> g_pos_, g_rot_, g_scl_, g_gam_, g_opa_;
  std::vector<double> alpha_;
  std::vector<Vec3> tx_off_, rx_off_;

  // forward caches consumed by backward
  Vec3 tx_{0, 0, 0};
  std::vector<Vec3> rx_;
  std::vector<LegGeom> aod_;       // per k
  std::vector<Mat3> sigma3_;       // per k
  std::vector<Mat3> rot_mat_;      // per k
  std::vector<Complex> sv_tx_;     // k * nt
  std::vector<RxGeom> rx_geom_;    // b * n + k
  std::vector<Complex> sv_rx_;     // (b * n + k) * nr + j
  std::vector<SplatRow> rows_;     // (b * n + k) * nr + j
  std::vector<double> sig_;        // ((b * n + k) * nt + i) * nr + j
};

inline std::vector<ChannelMatrix> Cs1Renderer::forward(const Vec3& p_tx,
                                                       const Vec3* rx,
                                                       size_t batch) {
  size_t n = cfg_.n_gaussians, ent_t = nt(), ent_r = nr();
  double lam = wavelength();
  double k_wn = 2.0 * kPi / lam;
  tx_ = p_tx;
  rx_.assign(rx, rx + batch);
  aod_.resize(n);
  sigma3_.resize(n);
  rot_mat_.resize(n);
  sv_tx_.resize(n * ent_t);
  rx_geom_.resize(batch * n);
  sv_rx_.resize(batch * n * ent_r);
  rows_.resize(batch * n * ent_r);
  sig_.assign(batch * n * ent_t * ent_r, 0.0);

  // per-primitive transmit-side geometry, shared by the whole batch
  for (size_t k = 0; k < n; ++k) {
    Quat q{rot_[4 * k], rot_[4 * k + 1], rot_[4 * k + 2], rot_[4 * k + 3]};
    rot_mat_[k] = build_rotation(q);
    Vec3 s{softplus(scl_[3 * k]), softplus(scl_[3 * k + 1]),
           softplus(scl_[3 * k + 2])};
    sigma3_[k] = covariance_from(rot_mat_[k], s);
    alpha_[k] = sigmoid(opa_[k]);
    Vec3 mu{pos_[3 * k], pos_[3 * k + 1], pos_[3 * k + 2]};
    aod_[k] = leg_geom(mu - p_tx);
    const LegGeom& g = aod_[k];
    for (size_t i = 0; i < ent_t; ++i) {
      double xi = steer_phase_ura(k_wn, tx_off_[i], g.cphi, g.sphi, g.cth);
      sv_tx_[k * ent_t + i] = Complex(std::cos(xi), -std::sin(xi));
    }
  }

  std::vector<ChannelMatrix> out(batch, ChannelMatrix(ent_t, ent_r));
  parallel_chunks(batch, 1, [&](size_t bb, size_t be) {
    for (size_t b = bb; b < be; ++b) {
      ChannelMatrix& H = out[b];
      // line of sight, constant in the backward pass
      Vec3 v_los = rx_[b] - p_tx;
      LegGeom gl = leg_geom(v_los);
      if (gl.d < 1e-9) throw contract_error("cs1: coincident arrays");
      Complex rho_los = std::polar(lam / (4.0 * kPi * gl.d),
                                   -2.0 * kPi * gl.d / lam);
      for (size_t i = 0; i < ent_t; ++i) {
        double xi_t = steer_phase_ura(k_wn, tx_off_[i], gl.cphi, gl.sphi, gl.cth);
        Complex at(std::cos(xi_t), -std::sin(xi_t));
        for (size_t j = 0; j < ent_r; ++j) {
          double xi_r = steer_phase_ula(k_wn, rx_off_[j].x, gl.cphi, gl.cth);
          Complex ar(std::cos(xi_r), -std::sin(xi_r));
          H.at(i, j) += rho_los * std::conj(at) * ar;
        }
      }
      for (size_t k = 0; k < n; ++k) {
        RxGeom& rg = rx_geom_[b * n + k];
        Vec3 mu{pos_[3 * k], pos_[3 * k + 1], pos_[3 * k + 2]};
        rg.aoa = leg_geom(rx_[b] - mu);
        const LegGeom& gt = aod_[k];
        if (gt.d < 1e-9 || rg.aoa.d < 1e-9) {
          rg.skip = 1;
          continue;
        }
        rg.skip = 0;
        double d_path = gt.d + rg.aoa.d;
        rg.a_amp = lam / (4.0 * kPi * d_path);
        rg.phase = -2.0 * kPi * d_path / lam;
        Complex gamma(gam_[2 * k], gam_[2 * k + 1]);
        rg.beta = gamma * std::polar(rg.a_amp, rg.phase);
        for (size_t j = 0; j < ent_r; ++j) {
          double xi = steer_phase_ula(k_wn, rx_off_[j].x, rg.aoa.cphi, rg.aoa.cth);
          sv_rx_[(b * n + k) * ent_r + j] = Complex(std::cos(xi), -std::sin(xi));
        }
        double o = alpha_[k];
        for (size_t j = 0; j < ent_r; ++j) {
          SplatRow& row = rows_[(b * n + k) * ent_r + j];
          Vec3 off = mu - (rx_[b] + rx_off_[j]);
          double n2 = off.dot(off);
          if (n2 < 1e-24) {
            row.pole = 1;
            continue;
          }
          UvPoint p = project_uv(off, ent_t, ent_r);
          if (p.pole) {
            row.pole = 1;
            continue;
          }
          row.pole = 0;
          row.u = p.u;
          row.v = p.v;
          for (int a = 0; a < 6; ++a) row.J[a] = p.J[a];
          row.cov = cov2d_from(row.J, sigma3_[k]);
          Complex br = rg.beta * sv_rx_[(b * n + k) * ent_r + j];
          for (size_t i = 0; i < ent_t; ++i) {
            double du = row.u - (static_cast<double>(i) + 0.5);
            double dv = row.v - (static_cast<double>(j) + 0.5);
            double sg = splat_weight(row.cov, du, dv);
            sig_[((b * n + k) * ent_t + i) * ent_r + j] = sg;
            H.at(i, j) += o * sg * std::conj(sv_tx_[k * ent_t + i]) * br;
          }
        }
      }
    }
  });
  return out;
}

inline void Cs1Renderer::backward(const std::vector<ChannelMatrix>& grad_H,
                                  const double* extra_alpha_grad) {
  size_t n = cfg_.n_gaussians, ent_t = nt(), ent_r = nr();
  size_t batch = rx_.size();
  if (grad_H.size() != batch)
    throw contract_error("cs1 backward: batch mismatch");
  double lam = wavelength();
  double k_wn = 2.0 * kPi / lam;

  parallel_chunks(n, 16, [&](size_t kb, size_t ke) {
    std::vector<Complex> g_atx(ent_t);
    std::vector<Complex> g_arx(ent_r);
    for (size_t k = kb; k < ke; ++k) {
      Vec3 g_mu{0, 0, 0};
      Mat3 G3;  // zero
      Complex g_gamma(0, 0);
      double g_o = 0.0;
      std::fill(g_atx.begin(), g_atx.end(), Complex(0, 0));
      double o = alpha_[k];
      Complex gamma(gam_[2 * k], gam_[2 * k + 1]);
      const LegGeom& gt = aod_[k];
      Vec3 mu{pos_[3 * k], pos_[3 * k + 1], pos_[3 * k + 2]};

      for (size_t b = 0; b < batch; ++b) {
        const RxGeom& rg = rx_geom_[b * n + k];
        if (rg.skip) continue;
        const ChannelMatrix& G = grad_H[b];
        Complex g_beta(0, 0);
        std::fill(g_arx.begin(), g_arx.end(), Complex(0, 0));
        for (size_t j = 0; j < ent_r; ++j) {
          const SplatRow& row = rows_[(b * n + k) * ent_r + j];
          if (row.pole) continue;
          Complex ar = sv_rx_[(b * n + k) * ent_r + j];
          double g_uv[2] = {0, 0}, g_M[3] = {0, 0, 0};
          for (size_t i = 0; i < ent_t; ++i) {
            Complex at = sv_tx_[k * ent_t + i];
            Complex m = std::conj(at) * ar;
            Complex c = rg.beta * m;
            Complex g = G.at(i, j);
            double sg = sig_[((b * n + k) * ent_t + i) * ent_r + j];
            double g_w = g.real() * c.real() + g.imag() * c.imag();
            g_o += g_w * sg;
            double g_sg = g_w * o;
            double du = row.u - (static_cast<double>(i) + 0.5);
            double dv = row.v - (static_cast<double>(j) + 0.5);
            splat_weight_backward(row.cov, du, dv, sg, g_sg, g_uv, g_M);
            Complex g_c = (o * sg) * g;
            g_beta += g_c * std::conj(m);
            Complex g_m = g_c * std::conj(rg.beta);
            g_atx[i] += std::conj(g_m) * ar;
            g_arx[j] += g_m * at;
          }
          Vec3 g_off{row.J[0] * g_uv[0] + row.J[3] * g_uv[1],
                     row.J[1] * g_uv[0] + row.J[4] * g_uv[1],
                     row.J[2] * g_uv[0] + row.J[5] * g_uv[1]};
          double g_J[6] = {0, 0, 0, 0, 0, 0};
          cov2d_backward(row.J, sigma3_[k], g_M, &G3, g_J);
          Vec3 off = mu - (rx_[b] + rx_off_[j]);
          project_jacobian_backward(off, ent_t, ent_r, g_J, &g_off);
          g_mu += g_off;
        }
        // receive steering back to the arrival angles, then the position
        double g_phi = 0, g_th = 0;
        for (size_t j = 0; j < ent_r; ++j) {
          Complex a = sv_rx_[(b * n + k) * ent_r + j];
          double g_xi = g_arx[j].real() * a.imag() - g_arx[j].imag() * a.real();
          double x = rx_off_[j].x;
          g_phi += g_xi * (-k_wn * x * rg.aoa.cth * rg.aoa.sphi);
          g_th += g_xi * (-k_wn * x * rg.aoa.sth * rg.aoa.cphi);
        }
        angle_grads_to_mu(rg.aoa, g_phi, g_th, -1.0, &g_mu);
        // complex path gain: amplitude and phase both ride on d_tx + d_rx
        Complex alpha_c = std::polar(rg.a_amp, rg.phase);
        g_gamma += g_beta * std::conj(alpha_c);
        Complex g_ac = g_beta * std::conj(gamma);
        double cph = std::cos(rg.phase), sph = std::sin(rg.phase);
        double g_amp = g_ac.real() * cph + g_ac.imag() * sph;
        double g_phase = rg.a_amp * (-g_ac.real() * sph + g_ac.imag() * cph);
        double g_dpath =
            -g_amp * rg.a_amp / (gt.d + rg.aoa.d) - g_phase * 2.0 * kPi / lam;
        g_mu += g_dpath * (gt.v * (1.0 / gt.d) - rg.aoa.v * (1.0 / rg.aoa.d));
      }
      // transmit steering accumulated across the batch; skipped when the
      // primitive sits on the transmit array (its trig is undefined there
      // and every batch entry was skipped anyway)
      if (gt.d >= 1e-9) {
        double g_phi = 0, g_th = 0;
        for (size_t i = 0; i < ent_t; ++i) {
          Complex a = sv_tx_[k * ent_t + i];
          double g_xi = g_atx[i].real() * a.imag() - g_atx[i].imag() * a.real();
          const Vec3& el = tx_off_[i];
          double proj = el.x * gt.cphi + el.y * gt.sphi;
          g_phi += g_xi * k_wn * gt.cth * (-el.x * gt.sphi + el.y * gt.cphi);
          g_th += g_xi * (-k_wn * gt.sth * proj);
        }
        angle_grads_to_mu(gt, g_phi, g_th, 1.0, &g_mu);
      }

      // covariance chain: Sigma = (R diag(s)) (R diag(s))^T
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
      g_gam_[2 * k] += g_gamma.real();
      g_gam_[2 * k + 1] += g_gamma.imag();
      if (extra_alpha_grad) g_o += extra_alpha_grad[k];
      g_opa_[k] += g_o * o * (1.0 - o);
    }
  });
}

}  // namespace ngrf

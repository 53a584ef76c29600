// SPDX-License-Identifier: Apache-2.0
#pragma once

// Renderer-agnostic parameter and forward/backward surface. The trainer,
// checkpoint code, and the CLI talk to models only through this interface,
// so the gaussian-field renderer and the projection/compositing variants
// are interchangeable underneath.

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/renderer.hpp"

namespace ngrf {

// Contiguous run of parameters with its gradient shadow.
struct ParamSpan {
  double* p = nullptr;
  double* g = nullptr;
  size_t n = 0;
};

// Optimizer unit. Groups flagged `position` get the position learning-rate
// schedule and are frozen past the cutoff; everything else shares lr_other.
struct ParamGroup {
  std::string name;
  bool position = false;
  std::vector<ParamSpan> spans;

  size_t size() const {
    size_t t = 0;
    for (const auto& s : spans) t += s.n;
    return t;
  }
};

class Renderer {
 public:
  virtual ~Renderer() = default;

  virtual std::string tag() const = 0;
  virtual size_t nt() const = 0;
  virtual size_t nr() const = 0;
  virtual size_t primitive_count() const = 0;

  // structural config, enough to rebuild the same shapes before a load
  virtual nlohmann::json describe() const = 0;

  // views stay valid while the renderer is alive; span layout is stable,
  // which is what checkpoint serialization relies on
  virtual std::vector<ParamGroup> param_groups() = 0;
  virtual void zero_grads() = 0;

  // one transmitter per call; caches intermediates for backward
  virtual std::vector<ChannelMatrix> forward(const Vec3& p_tx, const Vec3* rx,
                                             size_t batch) = 0;

  // consumes the cache of the last forward; accumulates into the grads
  // exposed via param_groups. extra_alpha_grad (optional, per primitive)
  // joins the activation path, which is where the sparsity penalty enters.
  virtual void backward(const std::vector<ChannelMatrix>& grad_H,
                        const double* extra_alpha_grad) = 0;

  // per-primitive activations from the last forward, each in (0,1)
  virtual const std::vector<double>& alphas() const = 0;

  // linear spatial scales, 3 per primitive; cleared if the model has none
  virtual void scales(std::vector<double>* out) const = 0;
  // chain d(loss)/d(linear scale) into the raw scale parameters
  virtual void add_scale_grad(const double* d_scale) = 0;
  // hard safety clamp applied after an optimizer step
  virtual void clamp_scales(double lo, double hi) = 0;
};

class NgrfRenderer : public Renderer {
 public:
  NgrfModel model;
  ModelGrads grads;
  RenderCache cache;

  NgrfRenderer(const ModelConfig& cfg, const Bounds& bounds, Rng& rng)
      : model(make_model(cfg, bounds, rng)) {
    grads.init_like(model);
  }

  explicit NgrfRenderer(const nlohmann::json& j)
      : NgrfRenderer(config_from_json(j), bounds_from_json(j), dummy_rng()) {}

  std::string tag() const override { return "ngrf"; }
  size_t nt() const override { return model.cfg.nt; }
  size_t nr() const override { return model.cfg.nr; }
  size_t primitive_count() const override { return model.gs.n; }

  nlohmann::json describe() const override {
    const ModelConfig& c = model.cfg;
    return {{"n_gaussians", c.n_gaussians}, {"enc_levels", c.enc_levels},
            {"d_latent", c.d_latent},       {"attr_hidden", c.attr_hidden},
            {"attr_depth", c.attr_depth},   {"dec_hidden", c.dec_hidden},
            {"dec_depth", c.dec_depth},     {"nt", c.nt},
            {"nr", c.nr},                   {"carrier_hz", c.carrier_hz},
            {"scale_init", c.scale_init},
            {"bounds",
             {{"lo", {model.bounds.lo.x, model.bounds.lo.y, model.bounds.lo.z}},
              {"hi",
               {model.bounds.hi.x, model.bounds.hi.y, model.bounds.hi.z}}}}};
  }

  std::vector<ParamGroup> param_groups() override {
    std::vector<ParamGroup> out;
    auto one = [&](const char* name, bool pos, std::vector<double>& p,
                   std::vector<double>& g) {
      out.push_back({name, pos, {{p.data(), g.data(), p.size()}}});
    };
    one("positions", true, model.gs.mu, grads.d_mu);
    one("rotations", false, model.gs.quat, grads.d_quat);
    one("log_scales", false, model.gs.log_scale, grads.d_logs);
    auto net = [&](const char* name, Mlp& mlp, MlpGrads& mg) {
      ParamGroup grp{name, false, {}};
      for (size_t l = 0; l < mlp.layers.size(); ++l) {
        grp.spans.push_back({mlp.layers[l].W.data(), mg.dW[l].data(),
                             mlp.layers[l].W.size()});
        grp.spans.push_back({mlp.layers[l].b.data(), mg.db[l].data(),
                             mlp.layers[l].b.size()});
      }
      out.push_back(std::move(grp));
    };
    net("attr_net", model.attr, grads.attr);
    net("decoder", model.dec, grads.dec);
    out.push_back({"gain", false, {{&model.gain, &grads.d_gain, 1}}});
    return out;
  }

  void zero_grads() override { grads.zero(); }

  std::vector<ChannelMatrix> forward(const Vec3& p_tx, const Vec3* rx,
                                     size_t batch) override {
    return render(model, p_tx, rx, batch, &cache);
  }

  void backward(const std::vector<ChannelMatrix>& grad_H,
                const double* extra_alpha_grad) override {
    render_backward(model, cache, grad_H, extra_alpha_grad, &grads);
  }

  const std::vector<double>& alphas() const override { return cache.tx.alpha; }

  void scales(std::vector<double>* out) const override {
    out->resize(model.gs.n * 3);
    for (size_t i = 0; i < out->size(); ++i)
      (*out)[i] = std::exp(model.gs.log_scale[i]);
  }

  void add_scale_grad(const double* d_scale) override {
    for (size_t i = 0; i < model.gs.log_scale.size(); ++i)
      grads.d_logs[i] += d_scale[i] * std::exp(model.gs.log_scale[i]);
  }

  void clamp_scales(double lo, double hi) override {
    double llo = std::log(lo), lhi = std::log(hi);
    for (double& v : model.gs.log_scale) v = std::min(std::max(v, llo), lhi);
  }

  static ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_gaussians = j.at("n_gaussians").get<size_t>();
    c.enc_levels = j.at("enc_levels").get<size_t>();
    c.d_latent = j.at("d_latent").get<size_t>();
    c.attr_hidden = j.at("attr_hidden").get<size_t>();
    c.attr_depth = j.at("attr_depth").get<size_t>();
    c.dec_hidden = j.at("dec_hidden").get<size_t>();
    c.dec_depth = j.at("dec_depth").get<size_t>();
    c.nt = j.at("nt").get<size_t>();
    c.nr = j.at("nr").get<size_t>();
    c.carrier_hz = j.at("carrier_hz").get<double>();
    c.scale_init = j.at("scale_init").get<double>();
    return c;
  }

  static Bounds bounds_from_json(const nlohmann::json& j) {
    const auto& b = j.at("bounds");
    auto lo = b.at("lo"), hi = b.at("hi");
    return Bounds{{lo[0].get<double>(), lo[1].get<double>(), lo[2].get<double>()},
                  {hi[0].get<double>(), hi[1].get<double>(), hi[2].get<double>()}};
  }

 private:
  // parameters are overwritten right after a shape-only rebuild
  static Rng& dummy_rng() {
    static thread_local Rng r(0);
    r = Rng(0);
    return r;
  }
};

}  // namespace ngrf

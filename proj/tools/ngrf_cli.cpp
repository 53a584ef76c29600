// SPDX-License-Identifier: Apache-2.0
//
// ngrf command line: generate / train / eval / predict / bench.
//
// Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric failure.
// Worker threads: --threads flag, NGRF_THREADS env when the flag is absent.
// Config layering for train: flags > --config file > built-in defaults; the
// resolved configuration is written into the output dir as config.json.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ngrf/bench.hpp"
#include "ngrf/checkpoint.hpp"
#include "ngrf/raysim.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path, const char* what) {
  std::ifstream is(path);
  if (!is)
    throw ngrf::data_error(std::string("cannot open ") + what + ": " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw ngrf::data_error(std::string("bad ") + what + " json (" + path +
                           "): " + e.what());
  }
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  os << body;
  if (!os) throw ngrf::data_error("cannot write: " + path);
}

ngrf::Vec3 vec3_from(const json& a) {
  return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
}

// Scene bounds travel in the dataset header; datasets from other producers
// fall back to the receiver bounding box, padded so nothing sits on a face.
ngrf::Bounds dataset_bounds(const ngrf::Dataset& ds) {
  if (ds.meta.contains("bounds")) {
    return {vec3_from(ds.meta.at("bounds").at("lo")),
            vec3_from(ds.meta.at("bounds").at("hi"))};
  }
  if (ds.samples.empty()) throw ngrf::data_error("empty dataset");
  ngrf::Vec3 lo = ds.samples[0].p_rx, hi = lo;
  for (const auto& s : ds.samples) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min({lo[k], s.p_rx[k], s.p_tx[k]});
      hi[k] = std::max({hi[k], s.p_rx[k], s.p_tx[k]});
    }
  }
  for (int k = 0; k < 3; ++k) {
    double pad = 0.05 * (hi[k] - lo[k]) + 1e-3;
    lo[k] -= pad;
    hi[k] += pad;
  }
  return {lo, hi};
}

// Array geometry for the projection renderers; headers without it get a
// single-column half-wavelength layout consistent with the channel shape.
ngrf::ArrayDesc dataset_arrays(const ngrf::Dataset& ds) {
  ngrf::ArrayDesc a;
  a.tx_rows = ds.nt;
  a.tx_cols = 1;
  a.rx_n = ds.nr;
  if (ds.meta.contains("tx_array")) {
    const json& t = ds.meta.at("tx_array");
    a.tx_rows = t.at("rows").get<size_t>();
    a.tx_cols = t.at("cols").get<size_t>();
    a.tx_spacing = t.value("spacing_lambda", 0.5);
  }
  if (ds.meta.contains("rx_array")) {
    const json& r = ds.meta.at("rx_array");
    a.rx_n = r.at("n").get<size_t>();
    a.rx_spacing = r.value("spacing_lambda", 0.5);
  }
  if (a.tx_rows * a.tx_cols != ds.nt || a.rx_n != ds.nr)
    throw ngrf::data_error("dataset array description does not match its "
                           "channel dimensions");
  return a;
}

std::unique_ptr<ngrf::Renderer> fresh_renderer(const std::string& tag,
                                               const ngrf::Dataset& ds,
                                               size_t n_gaussians,
                                               uint64_t seed) {
  // init stream disjoint from the trainer's shuffle/noise streams
  ngrf::Rng rng = ngrf::Rng::stream(seed, 3ull << 48);
  ngrf::Bounds b = dataset_bounds(ds);
  if (tag == "ngrf") {
    ngrf::ModelConfig c;
    c.n_gaussians = n_gaussians;
    c.nt = ds.nt;
    c.nr = ds.nr;
    c.carrier_hz = ds.carrier_hz;
    return std::make_unique<ngrf::NgrfRenderer>(c, b, rng);
  }
  if (tag == "cs1" || tag == "cs2") {
    ngrf::SplatConfig c;
    c.n_gaussians = n_gaussians;
    c.carrier_hz = ds.carrier_hz;
    c.bounds_lo = b.lo;
    c.bounds_hi = b.hi;
    c.arrays = dataset_arrays(ds);
    if (tag == "cs1") return std::make_unique<ngrf::Cs1Renderer>(c, rng);
    return std::make_unique<ngrf::Cs2Renderer>(c, rng);
  }
  if (tag == "mlp") {
    ngrf::MlpBaselineConfig c;
    c.nt = ds.nt;
    c.nr = ds.nr;
    return std::make_unique<ngrf::MlpBaselineRenderer>(c, rng);
  }
  throw ngrf::data_error("unknown renderer tag: " + tag);
}

ngrf::Bounds describe_bounds(const json& d) {
  if (d.contains("bounds"))
    return {vec3_from(d.at("bounds").at("lo")),
            vec3_from(d.at("bounds").at("hi"))};
  if (d.contains("bounds_lo"))
    return {vec3_from(d.at("bounds_lo")), vec3_from(d.at("bounds_hi"))};
  return {{-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}};
}

struct GenerateOpts {
  std::string scene_path;
  std::string out = "data.ngrf";
  size_t samples = 0;
  double density = 0.0;
  bool has_samples = false, has_density = false;
  uint64_t seed = 42;
  int threads = 0;
};

int run_generate(const GenerateOpts& o) {
  ngrf::Scene scene = ngrf::load_scene(o.scene_path);
  size_t n = o.has_samples
                 ? o.samples
                 : ngrf::samples_for_density(scene.bounds, o.density);
  ngrf::Dataset ds = ngrf::generate_dataset(scene, n, o.seed);
  ngrf::save_dataset(o.out, ds);

  double vol = ngrf::box_volume_ft3(scene.bounds);
  size_t pmin = SIZE_MAX, pmax = 0, los_n = 0;
  double psum = 0.0;
  for (const auto& s : ds.samples) {
    auto paths = ngrf::trace(scene, s.p_tx, s.p_rx);
    pmin = std::min(pmin, paths.size());
    pmax = std::max(pmax, paths.size());
    psum += static_cast<double>(paths.size());
    for (const auto& p : paths)
      if (p.kind == ngrf::RayPath::kLineOfSight) {
        ++los_n;
        break;
      }
  }
  double ns = static_cast<double>(ds.samples.size());
  std::printf("wrote %s: %zu samples, %zux%zu channel, carrier %g Hz\n",
              o.out.c_str(), ds.samples.size(), ds.nt, ds.nr, ds.carrier_hz);
  std::printf("box volume %.6g ft^3, achieved density %.6g samples/ft^3\n",
              vol, ns / vol);
  std::printf(
      "paths per sample: mean %.2f, min %zu, max %zu; "
      "line of sight in %.1f%% of samples\n",
      psum / ns, pmin, pmax, 100.0 * static_cast<double>(los_n) / ns);
  return 0;
}

struct TrainOpts {
  std::string data_path;
  std::string config_path;
  std::string renderer = "ngrf";
  std::string out = "run";
  json overrides = json::object();
  int threads = 0;
};

int run_train(const TrainOpts& o) {
  ngrf::Dataset ds = ngrf::load_dataset(o.data_path);

  json layer = json::object();
  if (!o.config_path.empty()) {
    layer = load_json_file(o.config_path, "config");
    if (!layer.is_object())
      throw ngrf::data_error("config must be a json object: " + o.config_path);
  }
  for (const auto& [k, v] : o.overrides.items()) layer[k] = v;

  ngrf::TrainConfig tc;
  ngrf::from_json(layer, tc);
  size_t n_gaussians = layer.value("n_gaussians", size_t{1000});

  auto r = fresh_renderer(o.renderer, ds, n_gaussians, tc.seed);

  std::filesystem::create_directories(o.out);
  json resolved = {{"command", "train"},
                   {"dataset", o.data_path},
                   {"renderer", o.renderer},
                   {"n_gaussians", r->primitive_count()},
                   {"threads", ngrf::thread_count()},
                   {"output_dir", o.out},
                   {"train_config", tc}};
  write_text(o.out + "/config.json", resolved.dump(2) + "\n");

  auto t0 = std::chrono::steady_clock::now();
  ngrf::Trainer trainer(*r, ds, tc);
  ngrf::TrainResult res = trainer.run();
  double secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0).count();

  std::string ckpt = o.out + "/checkpoint.ngrf";
  ngrf::save_checkpoint(ckpt, *r, tc, res.best_iter, res.trace);
  std::ofstream mos(o.out + "/metrics.csv", std::ios::binary);
  ngrf::write_metrics_csv(mos, res.trace);
  if (!mos) throw ngrf::data_error("cannot write: " + o.out + "/metrics.csv");

  ngrf::SplitIndices sp =
      ngrf::split_dataset(ds.samples.size(), tc.train_fraction, tc.seed);
  std::printf("trained %s on %zu samples (%zu train / %zu test)\n",
              r->tag().c_str(), ds.samples.size(), sp.train.size(),
              sp.test.size());
  std::printf("best test snr %.2f dB at iteration %zu; ran %zu iterations%s\n",
              res.best_test_snr, res.best_iter, res.iterations_run,
              res.converged ? " (converged)" : "");
  std::printf("wrote %s, %s/metrics.csv, %s/config.json (%.1f s)\n",
              ckpt.c_str(), o.out.c_str(), o.out.c_str(), secs);
  return 0;
}

struct EvalOpts {
  std::string ckpt_path;
  std::string data_path;
  std::string out;
  int threads = 0;
};

int run_eval(const EvalOpts& o) {
  ngrf::CheckpointData ck = ngrf::load_checkpoint(o.ckpt_path);
  ngrf::Dataset ds = ngrf::load_dataset(o.data_path);
  if (ck.renderer->nt() != ds.nt || ck.renderer->nr() != ds.nr)
    throw ngrf::data_error(
        "checkpoint channel is " + std::to_string(ck.renderer->nt()) + "x" +
        std::to_string(ck.renderer->nr()) + " but dataset is " +
        std::to_string(ds.nt) + "x" + std::to_string(ds.nr));

  const ngrf::TrainConfig& tc = ck.train_config;
  ngrf::SplitIndices sp =
      ngrf::split_dataset(ds.samples.size(), tc.train_fraction, tc.seed);
  std::vector<size_t> test = sp.test.empty() ? sp.train : sp.test;
  std::vector<size_t> all(ds.samples.size());
  std::iota(all.begin(), all.end(), size_t{0});

  auto part = [&](const std::vector<size_t>& idx) {
    ngrf::EvalResult e =
        ngrf::evaluate(*ck.renderer, ds, idx, tc.s_min, tc.s_max);
    return json{{"snr_db", e.snr}, {"est", e.est}, {"act", e.act},
                {"reg", e.reg},    {"n", idx.size()}};
  };
  json report = {{"renderer", ck.renderer->tag()},
                 {"checkpoint_iteration", ck.iteration},
                 {"dataset", o.data_path},
                 {"n_samples", ds.samples.size()},
                 {"train", part(sp.train)},
                 {"test", part(test)},
                 {"all", part(all)}};
  std::string body = report.dump(2) + "\n";
  if (!o.out.empty()) write_text(o.out, body);
  std::fputs(body.c_str(), stdout);
  return 0;
}

struct PredictOpts {
  std::string ckpt_path;
  std::vector<double> tx, rx;
  int threads = 0;
};

int run_predict(const PredictOpts& o) {
  ngrf::CheckpointData ck = ngrf::load_checkpoint(o.ckpt_path);
  ngrf::Vec3 p_tx{o.tx[0], o.tx[1], o.tx[2]};
  ngrf::Vec3 p_rx{o.rx[0], o.rx[1], o.rx[2]};
  auto H = ck.renderer->forward(p_tx, &p_rx, 1);
  for (size_t i = 0; i < H[0].nt; ++i) {
    for (size_t j = 0; j < H[0].nr; ++j) {
      ngrf::Complex h = H[0].at(i, j);
      std::printf("%s%.9g%+.9gj", j ? " " : "", h.real(), h.imag());
    }
    std::printf("\n");
  }
  return 0;
}

struct BenchOpts {
  std::string ckpt_path;
  std::string out;
  size_t batch = 1;
  size_t repeats = 200;
  uint64_t seed = 42;
  int threads = 0;
};

int run_bench(const BenchOpts& o) {
  ngrf::CheckpointData ck = ngrf::load_checkpoint(o.ckpt_path);
  ngrf::Bounds b = describe_bounds(ck.renderer->describe());
  ngrf::Rng rng = ngrf::Rng::stream(o.seed, 0xBE);
  auto pt = [&] {
    return ngrf::Vec3{rng.uniform(b.lo.x, b.hi.x), rng.uniform(b.lo.y, b.hi.y),
                      rng.uniform(b.lo.z, b.hi.z)};
  };
  ngrf::Vec3 p_tx = pt();
  std::vector<ngrf::Vec3> rx(o.batch);
  for (auto& p : rx) p = pt();

  ngrf::LatencyStats st =
      ngrf::predict_latency_bench(*ck.renderer, p_tx, rx, o.repeats);
  json j = st;
  j["renderer"] = ck.renderer->tag();
  std::string body = j.dump(2) + "\n";
  if (!o.out.empty()) write_text(o.out, body);
  std::fputs(body.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaussian channel field toolkit"};
  app.require_subcommand(1);

  GenerateOpts g;
  CLI::App* gen = app.add_subcommand(
      "generate", "simulate a measurement dataset from a scene file");
  gen->add_option("scene", g.scene_path, "scene json")->required();
  auto* os = gen->add_option("--samples", g.samples, "sample count");
  auto* od = gen->add_option("--density", g.density, "samples per cubic foot");
  os->excludes(od);
  gen->add_option("--seed", g.seed, "rng seed (default 42)");
  gen->add_option("-o,--out", g.out, "output dataset path (default data.ngrf)");
  gen->add_option("--threads", g.threads, "worker thread cap");

  TrainOpts t;
  struct TrainFlags {  // staging for layered keys; only set flags override
    size_t iterations = 0, batch_size = 0, eval_every = 0, n_gaussians = 0;
    double lr_position = 0, lr_position_decay = 0, lr_other = 0;
    double lambda_act = 0, lambda_reg = 0, s_min = 0, s_max = 0;
    double position_cutoff = 0, noise_sigma = 0, train_fraction = 0;
    uint64_t seed = 0;
    std::string optimizer;
    bool early_stop = true;
  } tf;
  CLI::App* tr = app.add_subcommand("train", "fit a model to a dataset");
  tr->add_option("data", t.data_path, "dataset path")->required();
  tr->add_option("--config", t.config_path, "training config json");
  tr->add_option("--renderer", t.renderer, "model variant")
      ->check(CLI::IsMember({"ngrf", "cs1", "cs2", "mlp"}));
  tr->add_option("-o,--out", t.out, "output directory (default run)");
  tr->add_option("--gaussians", tf.n_gaussians, "primitive count");
  tr->add_option("--iterations", tf.iterations, "optimizer steps");
  tr->add_option("--batch-size", tf.batch_size, "samples per step");
  tr->add_option("--lr-position", tf.lr_position, "position learning rate");
  tr->add_option("--lr-position-decay", tf.lr_position_decay,
                 "position rate decay factor");
  tr->add_option("--lr-other", tf.lr_other, "learning rate for other groups");
  tr->add_option("--lambda-act", tf.lambda_act, "activation penalty weight");
  tr->add_option("--lambda-reg", tf.lambda_reg, "scale penalty weight");
  tr->add_option("--s-min", tf.s_min, "scale band lower edge");
  tr->add_option("--s-max", tf.s_max, "scale band upper edge");
  tr->add_option("--position-cutoff", tf.position_cutoff,
                 "fraction of iterations with live centers");
  tr->add_option("--noise-sigma", tf.noise_sigma,
                 "training rx position noise, meters");
  tr->add_option("--seed", tf.seed, "rng seed (default 42)");
  tr->add_option("--eval-every", tf.eval_every, "metric cadence");
  tr->add_option("--optimizer", tf.optimizer, "adam | sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));
  tr->add_flag("--early-stop,!--no-early-stop", tf.early_stop,
               "stop once validation snr plateaus");
  tr->add_option("--train-fraction", tf.train_fraction, "train split share");
  tr->add_option("--threads", t.threads, "worker thread cap");

  EvalOpts e;
  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  ev->add_option("checkpoint", e.ckpt_path, "checkpoint path")->required();
  ev->add_option("data", e.data_path, "dataset path")->required();
  ev->add_option("-o,--out", e.out, "also write the report here");
  ev->add_option("--threads", e.threads, "worker thread cap");

  PredictOpts p;
  CLI::App* pr = app.add_subcommand(
      "predict", "render the channel at one tx/rx placement");
  pr->add_option("checkpoint", p.ckpt_path, "checkpoint path")->required();
  pr->add_option("--tx", p.tx, "transmitter reference x,y,z")
      ->required()->delimiter(',')->expected(3);
  pr->add_option("--rx", p.rx, "receiver reference x,y,z")
      ->required()->delimiter(',')->expected(3);
  pr->add_option("--threads", p.threads, "worker thread cap");

  BenchOpts b;
  CLI::App* be = app.add_subcommand("bench", "measure render latency");
  be->add_option("checkpoint", b.ckpt_path, "checkpoint path")->required();
  be->add_option("--batch", b.batch, "receivers per render")
      ->check(CLI::PositiveNumber);
  be->add_option("--repeats", b.repeats, "timed renders")
      ->check(CLI::PositiveNumber);
  be->add_option("--seed", b.seed, "placement seed");
  be->add_option("-o,--out", b.out, "also write the stats here");
  be->add_option("--threads", b.threads, "worker thread cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      g.has_samples = os->count() > 0;
      g.has_density = od->count() > 0;
      if (!g.has_samples && !g.has_density) {
        std::fprintf(stderr, "generate: pass --samples or --density\n");
        return 2;
      }
      if (g.threads > 0) ngrf::set_thread_count(g.threads);
      return run_generate(g);
    }
    if (*tr) {
      json& ov = t.overrides;
      if (tr->count("--gaussians")) ov["n_gaussians"] = tf.n_gaussians;
      if (tr->count("--iterations")) ov["iterations"] = tf.iterations;
      if (tr->count("--batch-size")) ov["batch_size"] = tf.batch_size;
      if (tr->count("--lr-position")) ov["lr_position"] = tf.lr_position;
      if (tr->count("--lr-position-decay"))
        ov["lr_position_decay"] = tf.lr_position_decay;
      if (tr->count("--lr-other")) ov["lr_other"] = tf.lr_other;
      if (tr->count("--lambda-act")) ov["lambda_act"] = tf.lambda_act;
      if (tr->count("--lambda-reg")) ov["lambda_reg"] = tf.lambda_reg;
      if (tr->count("--s-min")) ov["s_min"] = tf.s_min;
      if (tr->count("--s-max")) ov["s_max"] = tf.s_max;
      if (tr->count("--position-cutoff"))
        ov["position_cutoff"] = tf.position_cutoff;
      if (tr->count("--noise-sigma")) ov["noise_sigma"] = tf.noise_sigma;
      if (tr->count("--seed")) ov["seed"] = tf.seed;
      if (tr->count("--eval-every")) ov["eval_every"] = tf.eval_every;
      if (tr->count("--optimizer")) ov["optimizer"] = tf.optimizer;
      if (tr->count("--early-stop") || tr->count("--no-early-stop"))
        ov["early_stop"] = tf.early_stop;
      if (tr->count("--train-fraction"))
        ov["train_fraction"] = tf.train_fraction;
      if (t.threads > 0) ngrf::set_thread_count(t.threads);
      return run_train(t);
    }
    if (*ev) {
      if (e.threads > 0) ngrf::set_thread_count(e.threads);
      return run_eval(e);
    }
    if (*pr) {
      if (p.threads > 0) ngrf::set_thread_count(p.threads);
      return run_predict(p);
    }
    if (*be) {
      if (b.threads > 0) ngrf::set_thread_count(b.threads);
      return run_bench(b);
    }
  } catch (const ngrf::contract_error& err) {
    std::fprintf(stderr, "usage error: %s\n", err.what());
    return 2;
  } catch (const ngrf::numeric_error& err) {
    std::fprintf(stderr, "numeric failure: %s\n", err.what());
    return 4;
  } catch (const ngrf::data_error& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return 3;
  } catch (const json::exception& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return 3;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 3;
  }
  return 2;
}

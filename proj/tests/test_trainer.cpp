// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "ngrf/trainer.hpp"
#include "oracles.hpp"

using namespace ngrf;

namespace {

ModelConfig tiny_config(size_t n = 4, size_t nt = 1, size_t nr = 1) {
  ModelConfig cfg;
  cfg.n_gaussians = n;
  cfg.enc_levels = 2;
  cfg.d_latent = 4;
  cfg.attr_hidden = 8;
  cfg.attr_depth = 2;
  cfg.dec_hidden = 8;
  cfg.dec_depth = 2;
  cfg.nt = nt;
  cfg.nr = nr;
  return cfg;
}

Dataset toy_dataset(size_t count, size_t nt, size_t nr, uint64_t seed,
                    size_t tx_count = 1) {
  Dataset ds;
  ds.nt = nt;
  ds.nr = nr;
  ds.carrier_hz = 1e9;
  Rng rng(seed);
  std::vector<Vec3> txs;
  for (size_t t = 0; t < tx_count; ++t)
    txs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 2)});
  for (size_t i = 0; i < count; ++i) {
    Sample s;
    s.p_tx = txs[i % tx_count];
    s.p_rx = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 2)};
    s.H = ChannelMatrix(nt, nr);
    for (auto& c : s.H.h) c = Complex(rng.normal(), rng.normal()) * 0.1;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

ChannelMatrix scalar_channel(Complex v) {
  ChannelMatrix H(1, 1);
  H.h[0] = v;
  return H;
}

}  // namespace

TEST_CASE("loss parts match hand-computed cases") {
  TrainConfig cfg;  // s in [0.05, 0.2], lambda_act 0.1, lambda_reg 1.0

  // perfect prediction, silent gaussians, legal scales: everything zero
  std::vector<ChannelMatrix> pred = {scalar_channel({0.7, -0.3})};
  LossParts p = compute_loss(pred, pred, {0.0, 0.0}, {0.1, 0.1, 0.1, 0.1, 0.1, 0.1}, cfg);
  REQUIRE(p.est == 0.0);
  REQUIRE(p.act == 0.0);
  REQUIRE(p.reg == 0.0);
  REQUIRE(p.total == 0.0);

  // unit complex residual has squared Frobenius norm 2
  std::vector<ChannelMatrix> gt = {scalar_channel({0.0, 0.0})};
  pred = {scalar_channel({1.0, 1.0})};
  p = compute_loss(pred, gt, {}, {}, cfg);
  REQUIRE(p.est == Catch::Approx(2.0).epsilon(1e-15));

  // one axis 0.1 above the band, single gaussian
  p = compute_loss(gt, gt, {}, {cfg.s_max + 0.1, 0.1, 0.1}, cfg);
  REQUIRE(p.reg == Catch::Approx(0.1).epsilon(1e-12));
  REQUIRE(p.total == Catch::Approx(0.1 * cfg.lambda_reg).epsilon(1e-12));

  // activations enter through their batch-averaged magnitudes
  p = compute_loss(gt, gt, {0.5, 0.25}, {}, cfg);
  REQUIRE(p.act == Catch::Approx(0.375).epsilon(1e-15));
  REQUIRE(p.total == Catch::Approx(cfg.lambda_act * 0.375).epsilon(1e-15));

  REQUIRE_THROWS_AS(est_loss(pred, {}, 1), contract_error);
}

TEST_CASE("snr follows the decade rule and its caps") {
  auto gt = std::vector<ChannelMatrix>{scalar_channel({1.0, 0.0})};
  REQUIRE(snr_db(gt, gt) == kSnrCapDb);

  // error energy equal to signal energy: 0 dB
  auto pred = std::vector<ChannelMatrix>{scalar_channel({2.0, 0.0})};
  REQUIRE(snr_db(pred, gt) == Catch::Approx(0.0).margin(1e-12));

  // error energy a tenth of signal energy: +10 dB
  pred = {scalar_channel({1.0, std::sqrt(0.1)})};
  REQUIRE(snr_db(pred, gt) == Catch::Approx(10.0).margin(1e-9));

  auto zeros = std::vector<ChannelMatrix>{scalar_channel({0.0, 0.0})};
  REQUIRE_THROWS_AS(snr_db(pred, zeros), numeric_error);
  REQUIRE_THROWS_AS(snr_db(pred, {}), contract_error);
}

TEST_CASE("config validation rejects broken settings") {
  TrainConfig cfg;
  REQUIRE_NOTHROW(validate(cfg));
  auto expect_bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    REQUIRE_THROWS_AS(validate(c), contract_error);
  };
  expect_bad([](TrainConfig& c) { c.optimizer = "rmsprop"; });
  expect_bad([](TrainConfig& c) { c.position_cutoff = 0.0; });
  expect_bad([](TrainConfig& c) { c.position_cutoff = 1.5; });
  expect_bad([](TrainConfig& c) { c.noise_sigma = -1.0; });
  expect_bad([](TrainConfig& c) { c.lr_position = 0.0; });
  expect_bad([](TrainConfig& c) { c.s_min = 0.0; });
  expect_bad([](TrainConfig& c) { c.batch_size = 0; });
  expect_bad([](TrainConfig& c) { c.eval_every = 0; });
  expect_bad([](TrainConfig& c) { c.train_fraction = 0.0; });
}

TEST_CASE("tx grouping preserves order and splits exactly") {
  Dataset ds = toy_dataset(9, 1, 1, 31, 3);
  std::vector<size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  auto groups = group_by_tx(ds.samples, idx);
  REQUIRE(groups.size() == 3);
  size_t total = 0;
  for (const auto& g : groups) {
    total += g.idx.size();
    for (size_t i : g.idx) {
      REQUIRE(ds.samples[i].p_tx.x == g.tx.x);
      REQUIRE(ds.samples[i].p_tx.y == g.tx.y);
      REQUIRE(ds.samples[i].p_tx.z == g.tx.z);
    }
  }
  REQUIRE(total == 9);
  REQUIRE(groups[0].idx == std::vector<size_t>{0, 3, 6});
}

TEST_CASE("assembled training gradient matches finite differences") {
  Bounds bounds{{-2, -2, 0}, {2, 2, 2}};
  Rng rng(17);
  NgrfRenderer r(tiny_config(4, 2, 2), bounds, rng);
  for (auto& v : r.model.gs.quat) v = rng.normal();

  // two transmitters so the batch-average weighting is exercised
  Dataset ds = toy_dataset(6, 2, 2, 23, 2);
  TrainConfig cfg;
  cfg.lambda_act = 0.37;
  cfg.lambda_reg = 0.81;
  // push some scales outside the band so the hinge has gradient
  r.model.gs.log_scale[0] = std::log(cfg.s_max + 0.1);
  r.model.gs.log_scale[4] = std::log(cfg.s_min * 0.5);

  size_t B = ds.samples.size();
  size_t n = r.primitive_count();
  std::vector<size_t> all(B);
  for (size_t i = 0; i < B; ++i) all[i] = i;

  auto total_loss = [&]() {
    double est = 0.0;
    std::vector<double> alpha_bar(n, 0.0);
    for (const auto& g : group_by_tx(ds.samples, all)) {
      std::vector<Vec3> rx;
      std::vector<ChannelMatrix> gt;
      for (size_t i : g.idx) {
        rx.push_back(ds.samples[i].p_rx);
        gt.push_back(ds.samples[i].H);
      }
      auto pred = r.forward(g.tx, rx.data(), rx.size());
      for (size_t k = 0; k < pred.size(); ++k)
        est += frob_dist2(pred[k], gt[k]);
      for (size_t i = 0; i < n; ++i)
        alpha_bar[i] += r.alphas()[i] * static_cast<double>(g.idx.size());
    }
    est /= static_cast<double>(B);
    for (double& a : alpha_bar) a /= static_cast<double>(B);
    std::vector<double> scales;
    r.scales(&scales);
    return est + cfg.lambda_act * act_loss(alpha_bar) +
           cfg.lambda_reg * reg_loss(scales, cfg.s_min, cfg.s_max);
  };

  // assemble gradients exactly the way a training step does
  r.zero_grads();
  for (const auto& g : group_by_tx(ds.samples, all)) {
    std::vector<Vec3> rx;
    std::vector<ChannelMatrix> gt;
    for (size_t i : g.idx) {
      rx.push_back(ds.samples[i].p_rx);
      gt.push_back(ds.samples[i].H);
    }
    auto pred = r.forward(g.tx, rx.data(), rx.size());
    std::vector<ChannelMatrix> grad_H;
    est_loss(pred, gt, B, &grad_H);
    std::vector<double> extra(
        n, cfg.lambda_act * static_cast<double>(g.idx.size()) /
               (static_cast<double>(n) * static_cast<double>(B)));
    r.backward(grad_H, extra.data());
  }
  std::vector<double> scales, dscales;
  r.scales(&scales);
  reg_loss(scales, cfg.s_min, cfg.s_max, &dscales);
  for (double& d : dscales) d *= cfg.lambda_reg;
  r.add_scale_grad(dscales.data());

  auto check = [&](double& slot, double analytic) {
    double fd = oracle::central_diff(total_loss, slot, oracle::fd_step(slot) * 0.1);
    REQUIRE(oracle::rel_err(analytic, fd) < 1e-4);
  };
  for (size_t i = 0; i < r.model.gs.mu.size(); ++i)
    check(r.model.gs.mu[i], r.grads.d_mu[i]);
  for (size_t i = 0; i < r.model.gs.quat.size(); ++i)
    check(r.model.gs.quat[i], r.grads.d_quat[i]);
  for (size_t i = 0; i < r.model.gs.log_scale.size(); ++i)
    check(r.model.gs.log_scale[i], r.grads.d_logs[i]);
  for (size_t li = 0; li < r.model.attr.layers.size(); ++li)
    for (size_t i = 0; i < r.model.attr.layers[li].W.size(); i += 7)
      check(r.model.attr.layers[li].W[i], r.grads.attr.dW[li][i]);
  for (size_t li = 0; li < r.model.dec.layers.size(); ++li)
    for (size_t i = 0; i < r.model.dec.layers[li].W.size(); i += 7)
      check(r.model.dec.layers[li].W[i], r.grads.dec.dW[li][i]);
  check(r.model.gain, r.grads.d_gain);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Dataset ds = toy_dataset(12, 1, 1, 77);
  TrainConfig cfg;
  cfg.iterations = 30;
  cfg.batch_size = 4;
  cfg.eval_every = 10;
  cfg.noise_sigma = 0.01;
  cfg.early_stop = false;
  cfg.seed = 5;

  auto run_once = [&]() {
    Bounds bounds{{-2, -2, 0}, {2, 2, 2}};
    Rng rng(55);
    NgrfRenderer r(tiny_config(4), bounds, rng);
    TrainResult res = train(r, ds, cfg);
    std::ostringstream csv;
    write_metrics_csv(csv, res.trace);
    std::vector<double> params;
    for (const auto& g : r.param_groups())
      for (const auto& sp : g.spans)
        params.insert(params.end(), sp.p, sp.p + sp.n);
    return std::make_pair(csv.str(), params);
  };

  auto a = run_once();
  auto b = run_once();
  REQUIRE(a.first == b.first);
  REQUIRE(a.second.size() == b.second.size());
  REQUIRE(std::memcmp(a.second.data(), b.second.data(),
                      a.second.size() * sizeof(double)) == 0);

  // header and row count of the trace
  std::istringstream is(a.first);
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "iter,loss,est,act,reg,train_snr,test_snr");
  size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  REQUIRE(rows == 4);  // iterations 0, 10, 20, 30
}

TEST_CASE("centers are bitwise frozen past the cutoff") {
  Dataset ds = toy_dataset(10, 1, 1, 88);
  TrainConfig cfg;
  cfg.iterations = 40;
  cfg.position_cutoff = 0.5;
  cfg.batch_size = 4;
  cfg.eval_every = 50;
  cfg.noise_sigma = 0.001;
  cfg.early_stop = false;

  Bounds bounds{{-2, -2, 0}, {2, 2, 2}};
  Rng rng(66);
  NgrfRenderer r(tiny_config(4), bounds, rng);
  Trainer t(r, ds, cfg);
  REQUIRE(t.cutoff_iteration() == 20);

  std::vector<double> mu_before_cutoff = r.model.gs.mu;
  while (t.iteration() < 20) t.step();
  REQUIRE(std::memcmp(mu_before_cutoff.data(), r.model.gs.mu.data(),
                      mu_before_cutoff.size() * sizeof(double)) != 0);

  std::vector<double> mu_at_cutoff = r.model.gs.mu;
  std::vector<double> quat_at_cutoff = r.model.gs.quat;
  std::vector<double> attr_w_at_cutoff = r.model.attr.layers[0].W;
  while (t.step()) {
  }
  REQUIRE(t.iteration() == 40);
  REQUIRE(std::memcmp(mu_at_cutoff.data(), r.model.gs.mu.data(),
                      mu_at_cutoff.size() * sizeof(double)) == 0);
  REQUIRE(std::memcmp(quat_at_cutoff.data(), r.model.gs.quat.data(),
                      quat_at_cutoff.size() * sizeof(double)) != 0);
  REQUIRE(r.model.attr.layers[0].W != attr_w_at_cutoff);
}

TEST_CASE("zero iterations returns the initialized model with its metrics") {
  Dataset ds = toy_dataset(8, 1, 1, 99);
  TrainConfig cfg;
  cfg.iterations = 0;

  Bounds bounds{{-2, -2, 0}, {2, 2, 2}};
  Rng rng(44);
  NgrfRenderer r(tiny_config(4), bounds, rng);
  std::vector<double> mu0 = r.model.gs.mu;
  double gain0 = r.model.gain;

  TrainResult res = train(r, ds, cfg);
  REQUIRE(res.iterations_run == 0);
  REQUIRE(res.trace.size() == 1);
  REQUIRE(res.trace[0].iter == 0);
  REQUIRE(std::isfinite(res.trace[0].test_snr));
  REQUIRE(r.model.gs.mu == mu0);
  REQUIRE(r.model.gain == gain0);
}

TEST_CASE("single-measurement overfit decreases the loss") {
  // one sample, one gaussian pinned on the receiver, frozen centers
  Dataset ds;
  ds.nt = ds.nr = 1;
  ds.carrier_hz = 1e9;
  Sample s;
  s.p_tx = {0.0, 0.0, 1.0};
  s.p_rx = {0.5, 0.5, 1.0};
  s.H = scalar_channel({0.3, -0.2});
  ds.samples.push_back(s);

  TrainConfig cfg;
  cfg.iterations = 50;
  cfg.batch_size = 1;
  cfg.eval_every = 1;
  cfg.lambda_act = 0.0;
  cfg.lambda_reg = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.position_cutoff = 1e-9;  // rounds to zero live-position steps
  cfg.early_stop = false;

  Bounds bounds{{-1, -1, 0}, {1, 1, 2}};
  Rng rng(12);
  NgrfRenderer r(tiny_config(1), bounds, rng);
  r.model.gs.mu = {0.5, 0.5, 1.0};

  TrainResult res = train(r, ds, cfg);
  const auto& tr = res.trace;
  REQUIRE(tr.size() == 51);
  REQUIRE(tr.back().est < tr.front().est);
  double mean_delta = (tr.back().est - tr.front().est) /
                      static_cast<double>(tr.size() - 1);
  REQUIRE(mean_delta < 0.0);
}

TEST_CASE("convergence rule stops training once the peak holds") {
  Dataset ds;
  ds.nt = ds.nr = 1;
  ds.carrier_hz = 1e9;
  Sample s;
  s.p_tx = {0.0, 0.0, 1.0};
  s.p_rx = {0.4, 0.2, 1.1};
  s.H = scalar_channel({0.25, 0.15});
  ds.samples.push_back(s);

  TrainConfig cfg;
  cfg.iterations = 3000;
  cfg.batch_size = 1;
  cfg.eval_every = 10;
  cfg.lambda_act = 0.0;
  cfg.lambda_reg = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.position_cutoff = 1e-9;
  cfg.early_stop = true;

  Bounds bounds{{-1, -1, 0}, {1, 1, 2}};
  Rng rng(13);
  NgrfRenderer r(tiny_config(1), bounds, rng);
  r.model.gs.mu = {0.4, 0.2, 1.1};

  TrainResult res = train(r, ds, cfg);
  REQUIRE(res.converged);
  REQUIRE(res.iterations_run < 3000);
  REQUIRE(res.iterations_run >= res.best_iter + 500);
}

TEST_CASE("non-finite loss aborts naming the offending group") {
  Dataset ds = toy_dataset(6, 1, 1, 111);
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch_size = 2;

  Bounds bounds{{-2, -2, 0}, {2, 2, 2}};
  Rng rng(14);
  NgrfRenderer r(tiny_config(4), bounds, rng);
  Trainer t(r, ds, cfg);
  r.model.gain = std::numeric_limits<double>::quiet_NaN();
  try {
    t.step();
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    REQUIRE(std::string(e.what()).find("gain") != std::string::npos);
  }
}

TEST_CASE("empty dataset is rejected") {
  Dataset ds;
  Bounds bounds{{-1, -1, -1}, {1, 1, 1}};
  Rng rng(15);
  NgrfRenderer r(tiny_config(2), bounds, rng);
  REQUIRE_THROWS_AS(train(r, ds, TrainConfig{}), data_error);
}

TEST_CASE("train config json layering only touches present keys") {
  TrainConfig cfg;
  cfg.iterations = 777;
  nlohmann::json j = {{"lr_position", 0.25}, {"optimizer", "sgd"}};
  from_json(j, cfg);
  REQUIRE(cfg.iterations == 777);
  REQUIRE(cfg.lr_position == 0.25);
  REQUIRE(cfg.optimizer == "sgd");
  REQUIRE(cfg.batch_size == 32);

  nlohmann::json full;
  to_json(full, cfg);
  TrainConfig back = full.get<TrainConfig>();
  REQUIRE(back.iterations == 777);
  REQUIRE(back.lr_position == 0.25);
  REQUIRE(back.optimizer == "sgd");
}

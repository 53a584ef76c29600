// SPDX-License-Identifier: Apache-2.0
#pragma once

// Render latency measurement: repeated forward passes over a fixed receiver
// batch, wall-clock per call. Percentiles use the nearest-rank convention on
// the sorted samples, so p50 of one repeat is that repeat.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/model.hpp"

namespace ngrf {

struct LatencyStats {
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  double mean_ms = 0.0;
  size_t batch = 0;
  size_t repeats = 0;
};

inline void to_json(nlohmann::json& j, const LatencyStats& s) {
  j = {{"p50_ms", s.p50_ms},   {"p95_ms", s.p95_ms},
       {"p99_ms", s.p99_ms},   {"mean_ms", s.mean_ms},
       {"batch", s.batch},     {"repeats", s.repeats}};
}

inline double nearest_rank(const std::vector<double>& sorted, double q) {
  size_t n = sorted.size();
  size_t k = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
  if (k < 1) k = 1;
  return sorted[k - 1];
}

// Timed section covers forward() only; a few warmup calls precede it so
// cache allocation does not land in the first sample.
inline LatencyStats predict_latency_bench(Renderer& r, const Vec3& p_tx,
                                          const std::vector<Vec3>& rx,
                                          size_t repeats) {
  if (rx.empty()) throw contract_error("bench: empty receiver batch");
  if (repeats < 1) throw contract_error("bench: repeats must be >= 1");

  for (int i = 0; i < 3; ++i) r.forward(p_tx, rx.data(), rx.size());

  std::vector<double> ms(repeats);
  for (size_t i = 0; i < repeats; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    r.forward(p_tx, rx.data(), rx.size());
    auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }

  LatencyStats out;
  out.batch = rx.size();
  out.repeats = repeats;
  for (double v : ms) out.mean_ms += v;
  out.mean_ms /= static_cast<double>(repeats);
  std::sort(ms.begin(), ms.end());
  out.p50_ms = nearest_rank(ms, 0.50);
  out.p95_ms = nearest_rank(ms, 0.95);
  out.p99_ms = nearest_rank(ms, 0.99);
  return out;
}

}  // namespace ngrf

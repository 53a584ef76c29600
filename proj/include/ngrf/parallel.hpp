// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace ngrf {

// Worker count for data-parallel loops. 0 = pick hardware_concurrency.
// Resolved once per query so a CLI --threads override or NGRF_THREADS applies
// to everything downstream.
inline int& thread_count_ref() {
  static int count = 0;
  return count;
}

inline void set_thread_count(int n) { thread_count_ref() = n; }

inline int thread_count() {
  int n = thread_count_ref();
  if (n > 0) return n;
  if (const char* env = std::getenv("NGRF_THREADS")) {
    int e = std::atoi(env);
    if (e > 0) return e;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(begin, end) over [0, total) split into fixed-size chunks. Chunking
// depends only on (total, grain), never on the worker count, so any
// chunk-indexed partial results reduce in the same order regardless of
// threading; fn must write only to its own chunk's outputs.
template <typename Fn>
void parallel_chunks(size_t total, size_t grain, Fn&& fn) {
  if (total == 0) return;
  if (grain == 0) grain = 1;
  size_t n_chunks = (total + grain - 1) / grain;
  int workers = thread_count();
  if (workers <= 1 || n_chunks == 1) {
    for (size_t c = 0; c < n_chunks; ++c) {
      size_t b = c * grain;
      size_t e = b + grain < total ? b + grain : total;
      fn(b, e);
    }
    return;
  }
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (;;) {
      size_t c = next.fetch_add(1);
      if (c >= n_chunks) break;
      size_t b = c * grain;
      size_t e = b + grain < total ? b + grain : total;
      fn(b, e);
    }
  };
  size_t n_threads = static_cast<size_t>(workers) < n_chunks
                         ? static_cast<size_t>(workers)
                         : n_chunks;
  std::vector<std::thread> pool;
  pool.reserve(n_threads - 1);
  for (size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
}

}  // namespace ngrf

// Copyright 2026 The tkn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef TKN_BENCH_HPP_
#define TKN_BENCH_HPP_

#include <malloc.h>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "tkn/tensor.hpp"

namespace tkn {

inline constexpr std::size_t kMinWarmup = 10;
inline constexpr std::size_t kMinRepetitions = 100;

/// Thread count for Eigen kernels: TKN_THREADS when set, else 1.
inline int configure_threads() {
  int n = 1;
  if (const char* env = std::getenv("TKN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1 || v > 1024) {
      throw Error(std::string("TKN_THREADS must be a positive integer, got '") + env + "'");
    }
    n = static_cast<int>(v);
  }
  Eigen::setNbThreads(n);
  return n;
}

/// Keeps freed tensor buffers in the process heap instead of returning them to
/// the kernel, so repeated forward passes do not pay page faults for fresh
/// zeroed memory on every activation.
inline void configure_allocator() {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
}

/// Thread and allocator setup shared by every entry point.
inline int configure_runtime() {
  configure_allocator();
  return configure_threads();
}

struct BenchResult {
  std::vector<double> samples_ms;
  double median_ms = 0;
  double p95_ms = 0;
  double fps = 0;
  std::size_t frames = 0;
};

/// Nearest-rank percentile of an unsorted sample.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("percentile: empty sample");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(v.size())));
  return v[std::min(v.size(), std::max<std::size_t>(rank, 1)) - 1];
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Times `fn` after `warmup` untimed calls. Each call is expected to
/// produce `frames` frames.
inline BenchResult benchmark(const std::function<void()>& fn, std::size_t frames,
                             std::size_t warmup = kMinWarmup, std::size_t repetitions = kMinRepetitions) {
  if (repetitions < kMinRepetitions) {
    throw Error("benchmark: at least " + std::to_string(kMinRepetitions) + " repetitions required, got " +
                std::to_string(repetitions));
  }
  if (warmup < kMinWarmup) {
    throw Error("benchmark: at least " + std::to_string(kMinWarmup) + " warm-up runs required, got " +
                std::to_string(warmup));
  }
  if (frames == 0) throw Error("benchmark: frame count must be positive");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  BenchResult r;
  r.frames = frames;
  r.samples_ms.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  r.median_ms = median(r.samples_ms);
  r.p95_ms = percentile(r.samples_ms, 95.0);
  r.fps = static_cast<double>(frames) / (r.median_ms / 1000.0);
  return r;
}

}  // namespace tkn

#endif  // TKN_BENCH_HPP_

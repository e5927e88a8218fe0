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

// Fixed frame pairs shared by the metric tests and tools/ssim_oracle.py.

#ifndef TKN_TESTS_METRIC_PAIRS_HPP_
#define TKN_TESTS_METRIC_PAIRS_HPP_

#include <algorithm>
#include <cstdint>
#include <utility>

#include "tkn/tensor.hpp"

namespace tkn::metric_pairs {

/// scikit-image structural_similarity(gaussian_weights=True, sigma=1.5,
/// use_sample_covariance=False, data_range=1) on pair(0..2).
inline constexpr double kFrozenSsim[3] = {0.12937585930497494, 0.9810451941696082, 0.27065964365178286};

inline Tensor lcg_frame(std::uint64_t seed, Shape shape) {
  Tensor t(std::move(shape));
  std::uint64_t x = seed;
  for (double& v : t.data()) {
    x = (1103515245ull * x + 12345ull) % (1ull << 31);
    v = static_cast<double>((x >> 8) % 256) / 255.0;
  }
  return t;
}

inline std::pair<Tensor, Tensor> pair(int k) {
  if (k == 0) return {lcg_frame(1, {16, 16}), lcg_frame(2, {16, 16})};
  if (k == 1) {
    Tensor a = lcg_frame(3, {3, 20, 24});
    Tensor n = lcg_frame(4, {3, 20, 24});
    Tensor b(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = std::clamp(a[i] + 0.2 * (n[i] - 0.5), 0.0, 1.0);
    return {a, b};
  }
  Tensor a({32, 32}), n = lcg_frame(5, {32, 32}), b({32, 32});
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) a.at({r, c}) = static_cast<double>(r + c) / 62.0;
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = 0.5 * a[i] + 0.25 * n[i];
  return {a, b};
}

}  // namespace tkn::metric_pairs

#endif  // TKN_TESTS_METRIC_PAIRS_HPP_

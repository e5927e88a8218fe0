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

// Forward-pass operation and parameter counts. A multiply-add is two
// operations; normalization, activations and bias adds are not counted.

#ifndef TKN_FLOPS_HPP_
#define TKN_FLOPS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tkn/detector.hpp"
#include "tkn/predictor.hpp"

namespace tkn {

struct FlopEntry {
  std::string name;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

class FlopLedger {
 public:
  void add(std::string name, std::uint64_t flops, std::uint64_t params = 0) {
    entries_.push_back({std::move(name), flops, params});
  }

  /// Appends every entry of `other`, with flops multiplied by `times`.
  /// Parameters are counted once (the same weights are reused).
  void append(const FlopLedger& other, std::uint64_t times = 1, bool count_params = true) {
    for (const auto& e : other.entries_) entries_.push_back({e.name, e.flops * times, count_params ? e.params : 0});
  }

  const std::vector<FlopEntry>& entries() const noexcept { return entries_; }

  std::uint64_t total_flops() const {
    std::uint64_t s = 0;
    for (const auto& e : entries_) s += e.flops;
    return s;
  }

  std::uint64_t total_params() const {
    std::uint64_t s = 0;
    for (const auto& e : entries_) s += e.params;
    return s;
  }

 private:
  std::vector<FlopEntry> entries_;
};

namespace flops {

using u64 = std::uint64_t;

/// 2 k^2 Cin Cout H' W' for a conv producing H' x W'.
inline u64 conv(u64 k, u64 cin, u64 cout, u64 hout, u64 wout) { return 2 * k * k * cin * cout * hout * wout; }

/// Each of the Hin x Win input pixels scatters a k x k x Cout stencil.
inline u64 conv_transpose(u64 k, u64 cin, u64 cout, u64 hin, u64 win) {
  return 2 * k * k * cin * cout * hin * win;
}

inline u64 matmul(u64 m, u64 k, u64 n) { return 2 * m * k * n; }

/// QK^T and the weighted sum of V for one head over l positions.
inline u64 attention_head(u64 l, u64 d_k, u64 d_v) { return 2 * l * l * d_k + 2 * l * l * d_v; }

inline u64 linear_params(u64 in, u64 out, bool bias) { return in * out + (bias ? out : 0); }

}  // namespace flops

/// Encoder + coordinate generation for one frame.
inline FlopLedger encoder_ledger(const DetectorConfig& c) {
  FlopLedger L;
  const auto lv = c.levels();
  for (std::size_t i = 1; i <= c.layers(); ++i) {
    L.add("detector.enc." + std::to_string(i),
          flops::conv(c.kernel, lv[i - 1].channels, lv[i].channels, lv[i].height, lv[i].width),
          c.kernel * c.kernel * lv[i - 1].channels * lv[i].channels + 2 * lv[i].channels);
  }
  const auto& top = lv.back();
  L.add("detector.proj", flops::conv(1, top.channels, c.keypoints, top.height, top.width),
        top.channels * c.keypoints + c.keypoints);
  return L;
}

/// Decoder for one frame (heatmap rendering is not counted).
inline FlopLedger decoder_ledger(const DetectorConfig& c) {
  FlopLedger L;
  const auto lv = c.levels();
  const std::size_t n = c.layers(), kk = c.kernel * c.kernel;
  for (std::size_t i = 1; i <= n; ++i) {
    const std::size_t j = n - i + 1;
    const std::size_t cin = (i == 1 ? c.keypoints : lv[j].channels) + lv[j].channels;
    const std::size_t cout = lv[j - 1].channels;
    L.add("detector.dec." + std::to_string(i),
          flops::conv_transpose(c.kernel, cin, cout, lv[j].height, lv[j].width),
          kk * cin * cout + (i == n ? cout : 2 * cout));
  }
  return L;
}

inline FlopLedger detector_ledger(const DetectorConfig& c) {
  FlopLedger L = encoder_ledger(c);
  L.append(decoder_ledger(c));
  return L;
}

/// One encoder layer over l positions.
inline FlopLedger transformer_layer_ledger(const PredictorConfig& c, std::size_t l, const std::string& name) {
  FlopLedger L;
  const std::size_t d = c.d_model, hk = c.n_head * c.d_k, hv = c.n_head * c.d_v;
  L.add(name + ".qkv", flops::matmul(l, d, 2 * hk + hv), d * (2 * hk + hv));
  L.add(name + ".attention", c.n_head * flops::attention_head(l, c.d_k, c.d_v), 0);
  L.add(name + ".wh", flops::matmul(l, hv, d), hv * d + 2 * d);
  L.add(name + ".ffn", flops::matmul(l, d, c.d_inner) + flops::matmul(l, c.d_inner, d),
        flops::linear_params(d, c.d_inner, true) + flops::linear_params(c.d_inner, d, true) + 2 * d);
  return L;
}

inline FlopLedger mapping_ledger(const PredictorConfig& c, std::size_t keypoints, std::size_t rows,
                                 const std::string& prefix) {
  FlopLedger L;
  const std::size_t p = 3 * keypoints;
  L.add(prefix + "embed", flops::matmul(rows, p, c.d_model), p * c.d_model);
  L.add(prefix + "unembed", flops::matmul(rows, c.d_model, p), p * c.d_model);
  return L;
}

/// One parallel predictor pass over seq_len positions.
inline FlopLedger predictor_ledger(const PredictorConfig& c, std::size_t keypoints) {
  FlopLedger L = mapping_ledger(c, keypoints, c.seq_len, "mappings.");
  for (std::size_t i = 1; i <= c.num_layers; ++i) {
    L.append(transformer_layer_ledger(c, c.seq_len, "predictor.layer." + std::to_string(i)));
  }
  return L;
}

/// Full parallel prediction of t frames from t inputs.
inline FlopLedger parallel_pipeline_ledger(const DetectorConfig& d, const PredictorConfig& p) {
  FlopLedger L;
  L.append(encoder_ledger(d), p.seq_len);
  L.append(predictor_ledger(p, d.keypoints));
  L.append(decoder_ledger(d), p.seq_len);
  return L;
}

/// Sequential prediction of m frames: t input encodes, one step per frame,
/// m decodes and m-1 re-encodes of predicted frames. Parameters of the
/// step transformers are counted once each; the detector's once.
inline FlopLedger sequential_pipeline_ledger(const DetectorConfig& d, const PredictorConfig& p, std::size_t m) {
  FlopLedger L;
  L.append(encoder_ledger(d), p.seq_len + (m > 0 ? m - 1 : 0));
  const std::size_t t = p.seq_len, kp = 3 * d.keypoints;
  L.add("mappings.seq.embed", flops::matmul(t, kp, p.d_model), kp * p.d_model);
  for (std::size_t i = 0; i < m; ++i) {
    const bool own = i < p.sequential_steps;
    for (std::size_t j = 1; j <= p.sequential_layers; ++j) {
      const std::string name = "predictor.seq." + std::to_string(std::min(i, p.sequential_steps - 1) + 1) +
                               ".layer." + std::to_string(j);
      L.append(transformer_layer_ledger(p, t + i, name), 1, own);
    }
    L.add("mappings.seq.unembed", flops::matmul(1, p.d_model, kp), i == 0 ? kp * p.d_model : 0);
  }
  L.append(decoder_ledger(d), m);
  return L;
}

}  // namespace tkn

#endif  // TKN_FLOPS_HPP_

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

// Keypoint autoencoder: conv encoder, soft-argmax coordinates, Gaussian
// heatmaps and a transposed-conv decoder fed by encoder skips.

#ifndef TKN_DETECTOR_HPP_
#define TKN_DETECTOR_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tkn/ops.hpp"
#include "tkn/optim.hpp"

namespace tkn {

struct DetectorConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::vector<std::size_t> layer_channels{16, 32, 32, 64, 64, 64};
  std::vector<std::size_t> strides{2, 2, 2, 1, 1, 1};
  std::size_t kernel = 3;
  std::size_t keypoints = 16;
  double sigma = 0.1;
  std::size_t norm_groups = 4;
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;

  struct Level {
    std::size_t channels, height, width;
  };

  std::size_t layers() const noexcept { return layer_channels.size(); }

  kernels::ConvGeometry encoder_geometry(std::size_t i) const {
    return {strides[i - 1], kernel / 2, 0};
  }

  /// levels()[0] is the input frame, levels()[i] the output of encoder layer i.
  std::vector<Level> levels() const {
    std::vector<Level> out{{channels, height, width}};
    for (std::size_t i = 1; i <= layers(); ++i) {
      const auto g = encoder_geometry(i);
      const Level& prev = out.back();
      out.push_back({layer_channels[i - 1], kernels::conv_output_extent(prev.height, kernel, g),
                     kernels::conv_output_extent(prev.width, kernel, g)});
    }
    return out;
  }

  /// Geometry of the transposed conv that maps level i back to level i-1.
  kernels::ConvGeometry decoder_geometry(std::size_t i) const {
    const auto lv = levels();
    const std::size_t s = strides[i - 1], p = kernel / 2;
    auto pad_for = [&](std::size_t in, std::size_t want) -> std::size_t {
      const long base = static_cast<long>((in - 1) * s + kernel) - 2 * static_cast<long>(p);
      const long op = static_cast<long>(want) - base;
      if (op < 0 || op >= static_cast<long>(s)) {
        throw Error("detector: decoder layer " + std::to_string(i) +
                    " cannot mirror encoder extent " + std::to_string(want));
      }
      return static_cast<std::size_t>(op);
    };
    const std::size_t oh = pad_for(lv[i].height, lv[i - 1].height);
    const std::size_t ow = pad_for(lv[i].width, lv[i - 1].width);
    if (oh != ow) throw Error("detector: non-square output padding at layer " + std::to_string(i));
    return {s, p, oh};
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error("detector config: " + m); };
    if (layer_channels.empty()) fail("layer_channels must not be empty");
    if (strides.size() != layer_channels.size()) fail("strides and layer_channels differ in length");
    if (height == 0 || width == 0 || channels == 0) fail("frame extents must be positive");
    if (kernel == 0 || kernel % 2 == 0) fail("kernel must be odd");
    if (keypoints == 0) fail("keypoints must be >= 1");
    if (!(sigma > 0.0)) fail("sigma must be positive");
    if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) fail("leaky_slope must lie in (0,1)");
    for (std::size_t i = 0; i < layers(); ++i) {
      if (strides[i] == 0) fail("strides must be >= 1");
      if (layer_channels[i] == 0 || norm_groups == 0 || layer_channels[i] % norm_groups != 0) {
        fail("layer " + std::to_string(i + 1) + " channels " + std::to_string(layer_channels[i]) +
             " not divisible by norm_groups " + std::to_string(norm_groups));
      }
    }
    try {
      levels();
      for (std::size_t i = 1; i <= layers(); ++i) decoder_geometry(i);
    } catch (const Error& e) {
      fail(e.what());
    }
  }
};

/// Evenly spaced values on [-1, 1]; a single point sits at 0.
inline std::vector<double> coordinate_grid(std::size_t n) {
  std::vector<double> g(n, 0.0);
  if (n < 2) return g;
  for (std::size_t i = 0; i < n; ++i) g[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

/// Expected (x, y) of normalized maps prob: [R,H,W] (each summing to 1)
/// against the [-1,1] grid -> [R, 2].
inline Var spatial_expectation(Var prob) {
  const Shape& s = prob.value().shape();
  if (s.size() != 3) throw Error("spatial_expectation: expected [R,H,W], got " + to_string(s));
  const std::size_t h = s[1], w = s[2];
  Tape& t = *prob.tape;
  const auto gx = coordinate_grid(w), gy = coordinate_grid(h);
  Var grid_x = t.constant(Tensor({w, 1}, std::vector<double>(gx.begin(), gx.end())));
  Var grid_y = t.constant(Tensor({h, 1}, std::vector<double>(gy.begin(), gy.end())));
  // mean_axis folds 1/extent into the marginal; undo it after the dot product.
  Var px = ops::scale(ops::matmul(ops::mean_axis(prob, 1), grid_x), static_cast<double>(h));
  Var py = ops::scale(ops::matmul(ops::mean_axis(prob, 2), grid_y), static_cast<double>(w));
  return ops::concat({px, py}, 1);
}

/// Soft-argmax keypoints from projected maps m: [N,K,H,W] -> [N, 3K] ordered
/// (x, y, v) per keypoint. x, y are expectations of the spatial softmax against
/// the grid; v is the plain spatial mean of the channel.
inline Var coordinate_generation(Var m) {
  const Shape& s = m.value().shape();
  if (s.size() != 4) throw Error("coordinate_generation: expected [N,K,H,W], got " + to_string(s));
  const std::size_t n = s[0], k = s[1], h = s[2], w = s[3];
  Var flat = ops::reshape(m, {n * k, h * w});
  Var xy = spatial_expectation(ops::reshape(ops::softmax(flat, 1), {n * k, h, w}));
  Var pv = ops::reshape(ops::mean_axis(flat, 1), {n * k, 1});
  return ops::reshape(ops::concat({xy, pv}, 1), {n, 3 * k});
}

/// Renders keypoints P: [N, 3K] to [N,K,H,W]: p_v * outer(y_vec, x_vec) with
/// Gaussian profiles of width sigma around (p_x, p_y) on the [-1,1] grid.
inline Var heatmap_generation(Var p, std::size_t h, std::size_t w, double sigma) {
  const Tensor& pv = p.value();
  if (pv.rank() != 2 || pv.dim(1) % 3 != 0) {
    throw Error("heatmap_generation: expected [N,3K], got " + to_string(pv.shape()));
  }
  if (!(sigma > 0.0)) throw Error("heatmap_generation: sigma must be positive");
  const std::size_t n = pv.dim(0), k = pv.dim(1) / 3;
  const auto gx = coordinate_grid(w), gy = coordinate_grid(h);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  Tensor out({n, k, h, w});
  std::vector<double> ex(w), ey(h);
  for (std::size_t b = 0; b < n * k; ++b) {
    const double x = pv[3 * b], y = pv[3 * b + 1], v = pv[3 * b + 2];
    for (std::size_t c = 0; c < w; ++c) ex[c] = std::exp(-(gx[c] - x) * (gx[c] - x) * inv2s2);
    for (std::size_t r = 0; r < h; ++r) ey[r] = v * std::exp(-(gy[r] - y) * (gy[r] - y) * inv2s2);
    double* o = out.raw() + b * h * w;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) o[r * w + c] = ey[r] * ex[c];
  }
  return p.tape->record(std::move(out), {p}, [p, n, k, h, w, sigma, gx, gy](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor& pv = t.value(p);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma), inv_s2 = 1.0 / (sigma * sigma);
    Tensor gp(pv.shape());
    std::vector<double> ex(w), ey(h);
    for (std::size_t b = 0; b < n * k; ++b) {
      const double x = pv[3 * b], y = pv[3 * b + 1], v = pv[3 * b + 2];
      for (std::size_t c = 0; c < w; ++c) ex[c] = std::exp(-(gx[c] - x) * (gx[c] - x) * inv2s2);
      for (std::size_t r = 0; r < h; ++r) ey[r] = std::exp(-(gy[r] - y) * (gy[r] - y) * inv2s2);
      const double* go = g.raw() + b * h * w;
      double dv = 0, dx = 0, dy = 0;
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double gg = go[r * w + c] * ey[r] * ex[c];
          dv += gg;
          dx += gg * (gx[c] - x);
          dy += gg * (gy[r] - y);
        }
      }
      gp[3 * b] = v * dx * inv_s2;
      gp[3 * b + 1] = v * dy * inv_s2;
      gp[3 * b + 2] = dv;
    }
    t.accumulate(p, std::move(gp));
  });
}

/// Encoder outputs h_1..h_n (h[0] is h_1), each [N,C_i,H_i,W_i].
struct FeatureStack {
  std::vector<Var> h;
  std::size_t batch() const { return h.empty() ? 0 : h.front().value().dim(0); }
};

class Detector {
 public:
  Detector(DetectorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const auto lv = cfg_.levels();
    const std::size_t n = cfg_.layers(), k = cfg_.kernel, kk = k * k;
    for (std::size_t i = 1; i <= n; ++i) {
      const std::string p = "detector.enc." + std::to_string(i) + ".";
      Enc e;
      e.w = &params_.add(p + "weight", scaled_uniform(rng, {lv[i].channels, lv[i - 1].channels, k, k},
                                                          lv[i - 1].channels * kk));
      e.gamma = &params_.add(p + "gamma", Tensor({lv[i].channels}, 1.0));
      e.beta = &params_.add(p + "beta", Tensor({lv[i].channels}));
      enc_.push_back(e);
    }
    const std::size_t cn = lv[n].channels, kp = cfg_.keypoints;
    proj_w_ = &params_.add("detector.proj.weight", scaled_uniform(rng, {kp, cn, 1, 1}, cn));
    proj_b_ = &params_.add("detector.proj.bias", Tensor({kp}));
    // Decoder layer i mirrors encoder layer j = n - i + 1 and maps level j to j - 1.
    for (std::size_t i = 1; i <= n; ++i) {
      const std::size_t j = n - i + 1;
      const std::size_t c_main = (i == 1) ? kp : lv[j].channels;
      const std::size_t c_skip = lv[j].channels, c_out = lv[j - 1].channels;
      const std::string p = "detector.dec." + std::to_string(i) + ".";
      Dec d;
      d.geom = cfg_.decoder_geometry(j);
      const std::size_t fan = (c_main + c_skip) * kk;
      d.w_main = &params_.add(p + "w_main", scaled_uniform(rng, {c_main, c_out, k, k}, fan));
      d.w_skip = &params_.add(p + "w_skip", scaled_uniform(rng, {c_skip, c_out, k, k}, fan));
      if (i == n) {
        d.bias = &params_.add(p + "bias", Tensor({c_out}));
      } else {
        d.gamma = &params_.add(p + "gamma", Tensor({c_out}, 1.0));
        d.beta = &params_.add(p + "beta", Tensor({c_out}));
      }
      dec_.push_back(d);
    }
  }

  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  const DetectorConfig& config() const noexcept { return cfg_; }
  ParameterSet& parameter_set() noexcept { return params_; }
  ParameterRefs parameters() { return params_.refs(); }

  void set_frozen(bool frozen) {
    for (Parameter* p : params_.refs()) p->frozen = frozen;
  }

  /// frames: [N,C,H,W].
  FeatureStack encode(Var frames) const {
    const auto lv = cfg_.levels();
    const Shape& s = frames.value().shape();
    if (s.size() != 4 || s[1] != cfg_.channels || s[2] != cfg_.height || s[3] != cfg_.width) {
      throw Error("detector: frames of shape " + to_string(s) + " do not match configured [N," +
                  std::to_string(cfg_.channels) + "," + std::to_string(cfg_.height) + "," +
                  std::to_string(cfg_.width) + "]");
    }
    Tape& t = *frames.tape;
    FeatureStack st;
    Var x = frames;
    for (std::size_t i = 1; i <= cfg_.layers(); ++i) {
      const Enc& e = enc_[i - 1];
      x = ops::conv2d(x, t.param(*e.w), std::nullopt, cfg_.encoder_geometry(i));
      x = ops::group_norm(x, cfg_.norm_groups, t.param(*e.gamma), t.param(*e.beta), cfg_.norm_eps);
      x = ops::leaky_relu(x, cfg_.leaky_slope);
      st.h.push_back(x);
    }
    return st;
  }

  /// 1x1 projection of h_n to K channels.
  Var project(Var h_n) const {
    Tape& t = *h_n.tape;
    return ops::conv2d(h_n, t.param(*proj_w_), t.param(*proj_b_), {1, 0, 0});
  }

  /// [N, 3K] keypoints of encoded frames.
  Var keypoints(const FeatureStack& st) const { return coordinate_generation(project(st.h.back())); }

  Var heatmaps(Var p) const {
    const auto lv = cfg_.levels();
    if (p.value().rank() != 2 || p.value().dim(1) != 3 * cfg_.keypoints) {
      throw Error("detector: keypoints of shape " + to_string(p.value().shape()) + ", expected [N," +
                  std::to_string(3 * cfg_.keypoints) + "]");
    }
    return heatmap_generation(p, lv.back().height, lv.back().width, cfg_.sigma);
  }

  /// Decodes heatmaps [N,K,H_n,W_n] against a source stack whose batch is
  /// either N or 1 (shared background, applied to every heatmap).
  Var decode(Var hp, const FeatureStack& src) const {
    const std::size_t n = cfg_.layers();
    const auto lv = cfg_.levels();
    if (src.h.size() != n) throw Error("detector: source stack has wrong depth");
    const Shape& hs = hp.value().shape();
    const Shape want{hs.empty() ? 0 : hs[0], cfg_.keypoints, lv[n].height, lv[n].width};
    if (hs != want) throw Error("detector: heatmaps " + to_string(hs) + " do not match " + to_string(want));
    const std::size_t sb = src.batch();
    if (sb != 1 && sb != hs[0]) {
      throw Error("detector: source batch " + std::to_string(sb) + " incompatible with " +
                  std::to_string(hs[0]) + " heatmaps");
    }
    Tape& t = *hp.tape;
    Var d = hp;
    for (std::size_t i = 1; i <= n; ++i) {
      const Dec& L = dec_[i - 1];
      const std::size_t j = n - i + 1;
      const Var& skip_in = src.h[j - 1];
      const Shape& ks = skip_in.value().shape();
      if (ks[1] != lv[j].channels || ks[2] != lv[j].height || ks[3] != lv[j].width) {
        throw Error("detector: skip level " + std::to_string(j) + " has shape " + to_string(ks));
      }
      std::optional<Var> bias;
      if (L.bias) bias = t.param(*L.bias);
      // conv_transpose(concat(d, skip)) split by input channels into two terms.
      Var main = ops::conv2d_transpose(d, t.param(*L.w_main), bias, L.geom);
      Var skip = ops::conv2d_transpose(skip_in, t.param(*L.w_skip), std::nullopt, L.geom);
      d = ops::add_batch_broadcast(main, skip);
      if (i == n) {
        d = ops::sigmoid(d);
      } else {
        d = ops::group_norm(d, cfg_.norm_groups, t.param(*L.gamma), t.param(*L.beta), cfg_.norm_eps);
        d = ops::leaky_relu(d, cfg_.leaky_slope);
      }
    }
    return d;
  }

  struct Reconstruction {
    Var frames;
    Var loss;
  };

  /// Reconstructs `target` from its keypoints and the skips of `source`.
  Reconstruction reconstruct(Var source, Var target) const {
    source.value().require_same_shape(target.value(), "reconstruct");
    FeatureStack src = encode(source);
    FeatureStack tgt = encode(target);
    Var out = decode(heatmaps(keypoints(tgt)), src);
    return {out, ops::mse(out, target)};
  }

 private:
  struct Enc {
    Parameter *w = nullptr, *gamma = nullptr, *beta = nullptr;
  };
  struct Dec {
    Parameter *w_main = nullptr, *w_skip = nullptr, *gamma = nullptr, *beta = nullptr, *bias = nullptr;
    kernels::ConvGeometry geom;
  };

  DetectorConfig cfg_;
  ParameterSet params_;
  std::vector<Enc> enc_;
  Parameter* proj_w_ = nullptr;
  Parameter* proj_b_ = nullptr;
  std::vector<Dec> dec_;
};

/// Stack entry `index` of a batched stack as its own batch-1 stack.
inline FeatureStack stack_slice(const FeatureStack& st, std::size_t index) {
  FeatureStack out;
  for (const Var& h : st.h) out.h.push_back(ops::slice(h, 0, index, index + 1));
  return out;
}

}  // namespace tkn

#endif  // TKN_DETECTOR_HPP_

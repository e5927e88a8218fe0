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

// Transformer-encoder predictor over flattened keypoint sequences.

#ifndef TKN_PREDICTOR_HPP_
#define TKN_PREDICTOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tkn/ops.hpp"
#include "tkn/optim.hpp"

namespace tkn {

struct PredictorConfig {
  std::size_t d_model = 64;
  std::size_t d_k = 16;
  std::size_t d_v = 16;
  std::size_t d_inner = 256;
  std::size_t n_head = 4;
  std::size_t num_layers = 2;
  std::size_t seq_len = 10;
  double dropout = 0.0;
  double norm_eps = 1e-5;
  // W and W' become fixed identity-padding maps instead of learned ones.
  bool explicit_mapping = false;
  // Sequential variant: one transformer per step, each this many layers deep.
  std::size_t sequential_steps = 10;
  std::size_t sequential_layers = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error("predictor config: " + m); };
    if (d_model == 0 || d_model % 2 != 0) fail("d_model must be positive and even");
    if (d_k == 0 || d_v == 0 || d_inner == 0 || n_head == 0) fail("widths must be positive");
    if (num_layers == 0) fail("num_layers must be >= 1");
    if (seq_len == 0) fail("seq_len must be >= 1");
    if (dropout != 0.0) fail("dropout must be 0 (dropout is not supported)");
    if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
    if (sequential_steps == 0 || sequential_layers == 0) fail("sequential sizes must be >= 1");
  }
};

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
inline Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) throw Error("positional_encoding: d_model must be even");
  Tensor pe({length, d_model});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double a = static_cast<double>(pos) /
                       std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe.at({pos, 2 * i}) = std::sin(a);
      pe.at({pos, 2 * i + 1}) = std::cos(a);
    }
  }
  return pe;
}

/// (x, y, v) triples [K,3] <-> flat [3K]; the memory order already is the
/// flattened order, so these only reshape.
inline Tensor flatten_keypoints(const Tensor& triples) {
  if (triples.rank() != 2 || triples.dim(1) != 3) {
    throw Error("flatten_keypoints: expected [K,3], got " + to_string(triples.shape()));
  }
  return triples.reshaped({triples.size()});
}

inline Tensor unflatten_keypoints(const Tensor& flat) {
  if (flat.rank() != 1 || flat.size() % 3 != 0) {
    throw Error("unflatten_keypoints: expected [3K], got " + to_string(flat.shape()));
  }
  return flat.reshaped({flat.size() / 3, 3});
}

/// Post-norm encoder layer: x = LN(I + MHA(I)); out = LN(x + FFN(x)).
class EncoderLayer {
 public:
  EncoderLayer(ParameterSet& ps, const std::string& prefix, const PredictorConfig& c, Rng& rng)
      : cfg_(c) {
    const std::size_t d = c.d_model, hk = c.n_head * c.d_k, hv = c.n_head * c.d_v;
    wq_ = &ps.add(prefix + "wq", scaled_uniform(rng, {d, hk}, d));
    wk_ = &ps.add(prefix + "wk", scaled_uniform(rng, {d, hk}, d));
    wv_ = &ps.add(prefix + "wv", scaled_uniform(rng, {d, hv}, d));
    wh_ = &ps.add(prefix + "wh", scaled_uniform(rng, {hv, d}, hv));
    ln1_g_ = &ps.add(prefix + "ln1.gamma", Tensor({d}, 1.0));
    ln1_b_ = &ps.add(prefix + "ln1.beta", Tensor({d}));
    w1_ = &ps.add(prefix + "ffn.w1", scaled_uniform(rng, {d, c.d_inner}, d));
    b1_ = &ps.add(prefix + "ffn.b1", Tensor({c.d_inner}));
    w2_ = &ps.add(prefix + "ffn.w2", scaled_uniform(rng, {c.d_inner, d}, c.d_inner));
    b2_ = &ps.add(prefix + "ffn.b2", Tensor({d}));
    ln2_g_ = &ps.add(prefix + "ln2.gamma", Tensor({d}, 1.0));
    ln2_b_ = &ps.add(prefix + "ln2.beta", Tensor({d}));
  }

  /// x: [batch*length, d_model].
  Var forward(Var x, std::size_t batch, std::size_t length, std::vector<Tensor>* attn) const {
    Tape& t = *x.tape;
    Var q = ops::matmul(x, t.param(*wq_));
    Var k = ops::matmul(x, t.param(*wk_));
    Var v = ops::matmul(x, t.param(*wv_));
    Var heads = ops::attention(q, k, v, {batch, length, cfg_.n_head, cfg_.d_k, cfg_.d_v}, attn);
    Var y = ops::layer_norm(ops::add(x, ops::matmul(heads, t.param(*wh_))), t.param(*ln1_g_),
                            t.param(*ln1_b_), cfg_.norm_eps);
    Var f = ops::relu(ops::add_bias(ops::matmul(y, t.param(*w1_)), t.param(*b1_)));
    f = ops::add_bias(ops::matmul(f, t.param(*w2_)), t.param(*b2_));
    return ops::layer_norm(ops::add(y, f), t.param(*ln2_g_), t.param(*ln2_b_), cfg_.norm_eps);
  }

 private:
  PredictorConfig cfg_;
  Parameter *wq_, *wk_, *wv_, *wh_, *ln1_g_, *ln1_b_, *w1_, *b1_, *w2_, *b2_, *ln2_g_, *ln2_b_;
};

class TransformerStack {
 public:
  TransformerStack(ParameterSet& ps, const std::string& prefix, const PredictorConfig& c,
                   std::size_t layers, Rng& rng) {
    for (std::size_t i = 0; i < layers; ++i) {
      layers_.emplace_back(ps, prefix + "layer." + std::to_string(i + 1) + ".", c, rng);
    }
  }

  /// `attn`, when given, receives the weights of every layer in order.
  Var forward(Var x, std::size_t batch, std::size_t length, std::vector<Tensor>* attn = nullptr) const {
    for (const auto& l : layers_) x = l.forward(x, batch, length, attn);
    return x;
  }

  std::size_t depth() const noexcept { return layers_.size(); }

 private:
  std::vector<EncoderLayer> layers_;
};

/// W: [d_model, 3K] and W': [3K, d_model], applied row-wise.
class KeypointMapping {
 public:
  KeypointMapping(ParameterSet& ps, const std::string& prefix, std::size_t keypoints,
                  const PredictorConfig& c, Rng& rng) {
    const std::size_t d = c.d_model, p = 3 * keypoints;
    if (c.explicit_mapping) {
      if (d < p) {
        throw Error("predictor config: explicit mapping needs d_model >= 3K (" + std::to_string(d) +
                    " < " + std::to_string(p) + ")");
      }
      Tensor w({d, p}), wu({p, d});
      for (std::size_t i = 0; i < p; ++i) {
        w.at({i, i}) = 1.0;
        wu.at({i, i}) = 1.0;
      }
      embed_ = &ps.add(prefix + "embed", std::move(w));
      unembed_ = &ps.add(prefix + "unembed", std::move(wu));
      embed_->frozen = unembed_->frozen = true;
    } else {
      embed_ = &ps.add(prefix + "embed", scaled_uniform(rng, {d, p}, p));
      unembed_ = &ps.add(prefix + "unembed", scaled_uniform(rng, {p, d}, d));
    }
  }

  /// [R, 3K] -> [R, d_model].
  Var embed(Var p) const { return ops::matmul(p, p.tape->param(*embed_), false, true); }
  /// [R, d_model] -> [R, 3K].
  Var unembed(Var q) const { return ops::matmul(q, q.tape->param(*unembed_), false, true); }

 private:
  Parameter* embed_;
  Parameter* unembed_;
};

namespace detail {

/// Adds PE to each length-`l` block of x: [batch*l, d].
inline Var add_positions(Var x, std::size_t batch, std::size_t l, std::size_t d) {
  Tape& t = *x.tape;
  Var pe = t.constant(positional_encoding(l, d).reshaped({1, l * d}));
  return ops::reshape(ops::add_batch_broadcast(ops::reshape(x, {batch, l * d}), pe), {batch * l, d});
}

}  // namespace detail

/// Parallel predictor: t keypoint sets in, the next t out, in one pass.
class Predictor {
 public:
  Predictor(PredictorConfig cfg, std::size_t keypoints, std::uint64_t seed)
      : cfg_(std::move(cfg)), keypoints_(keypoints) {
    cfg_.validate();
    if (keypoints_ == 0) throw Error("predictor: keypoints must be >= 1");
    Rng rng(seed);
    mapping_.emplace(params_, "mappings.", keypoints_, cfg_, rng);
    stack_.emplace(params_, "predictor.", cfg_, cfg_.num_layers, rng);
  }

  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;
  Predictor(Predictor&&) = default;
  Predictor& operator=(Predictor&&) = default;

  const PredictorConfig& config() const noexcept { return cfg_; }
  std::size_t keypoints() const noexcept { return keypoints_; }
  ParameterSet& parameter_set() noexcept { return params_; }
  ParameterRefs parameters() { return params_.refs(); }
  const KeypointMapping& mapping() const { return *mapping_; }

  /// Latent pass over Q: [batch*t, d_model].
  Var predict_latent(Var q, std::size_t batch, bool with_pe = true,
                     std::vector<Tensor>* attn = nullptr) const {
    const std::size_t t = cfg_.seq_len, d = cfg_.d_model;
    if (q.value().rank() != 2 || q.value().dim(0) != batch * t || q.value().dim(1) != d) {
      throw Error("predictor: latent input " + to_string(q.value().shape()) + " does not match [" +
                  std::to_string(batch) + "*" + std::to_string(t) + "x" + std::to_string(d) + "]");
    }
    if (with_pe) q = detail::add_positions(q, batch, t, d);
    return stack_->forward(q, batch, t, attn);
  }

  /// P: [batch*t, 3K] -> predicted [batch*t, 3K].
  Var forward(Var p, std::size_t batch, bool with_pe = true, std::vector<Tensor>* attn = nullptr) const {
    if (p.value().rank() != 2 || p.value().dim(1) != 3 * keypoints_) {
      throw Error("predictor: keypoints " + to_string(p.value().shape()) + ", expected [R," +
                  std::to_string(3 * keypoints_) + "]");
    }
    return mapping_->unembed(predict_latent(mapping_->embed(p), batch, with_pe, attn));
  }

 private:
  PredictorConfig cfg_;
  std::size_t keypoints_;
  ParameterSet params_;
  std::optional<KeypointMapping> mapping_;
  std::optional<TransformerStack> stack_;
};

/// Step-wise variant: step i runs its own transformer over t+i latents and
/// averages the outputs into the next latent.
class SequentialPredictor {
 public:
  SequentialPredictor(PredictorConfig cfg, std::size_t keypoints, std::uint64_t seed)
      : cfg_(std::move(cfg)), keypoints_(keypoints) {
    cfg_.validate();
    if (keypoints_ == 0) throw Error("predictor: keypoints must be >= 1");
    Rng rng(seed);
    mapping_.emplace(params_, "mappings.seq.", keypoints_, cfg_, rng);
    for (std::size_t i = 0; i < cfg_.sequential_steps; ++i) {
      steps_.emplace_back(params_, "predictor.seq." + std::to_string(i + 1) + ".", cfg_,
                          cfg_.sequential_layers, rng);
    }
  }

  SequentialPredictor(const SequentialPredictor&) = delete;
  SequentialPredictor& operator=(const SequentialPredictor&) = delete;
  SequentialPredictor(SequentialPredictor&&) = default;
  SequentialPredictor& operator=(SequentialPredictor&&) = default;

  const PredictorConfig& config() const noexcept { return cfg_; }
  std::size_t keypoints() const noexcept { return keypoints_; }
  ParameterSet& parameter_set() noexcept { return params_; }
  ParameterRefs parameters() { return params_.refs(); }
  const KeypointMapping& mapping() const { return *mapping_; }

  /// Steps past the configured count reuse the last transformer.
  const TransformerStack& transformer(std::size_t step) const {
    return steps_[std::min(step, steps_.size() - 1)];
  }

  /// latents: [batch*(t+step), d_model] -> next latent per sequence [batch, d_model].
  Var step(std::size_t step, Var latents, std::size_t batch, std::vector<Tensor>* attn = nullptr) const {
    const std::size_t l = cfg_.seq_len + step, d = cfg_.d_model;
    if (latents.value().rank() != 2 || latents.value().dim(0) != batch * l || latents.value().dim(1) != d) {
      throw Error("sequential predictor: step " + std::to_string(step) + " expects [" +
                  std::to_string(batch) + "*" + std::to_string(l) + "x" + std::to_string(d) + "], got " +
                  to_string(latents.value().shape()));
    }
    Var y = transformer(step).forward(detail::add_positions(latents, batch, l, d), batch, l, attn);
    return ops::mean_axis(ops::reshape(y, {batch, l, d}), 1);
  }

 private:
  PredictorConfig cfg_;
  std::size_t keypoints_;
  ParameterSet params_;
  std::optional<KeypointMapping> mapping_;
  std::vector<TransformerStack> steps_;
};

}  // namespace tkn

#endif  // TKN_PREDICTOR_HPP_

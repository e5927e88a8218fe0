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

#include <gtest/gtest.h>

#include <cmath>

#include "tkn/grad_check.hpp"
#include "tkn/predictor.hpp"

using namespace tkn;

namespace {

PredictorConfig tiny_config() {
  PredictorConfig c;
  c.d_model = 16;
  c.d_k = c.d_v = 4;
  c.d_inner = 24;
  c.n_head = 2;
  c.num_layers = 2;
  c.seq_len = 4;
  c.sequential_steps = 3;
  return c;
}

Tensor rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  const std::size_t w = x.dim(1);
  return Tensor({r1 - r0, w}, std::vector<double>(x.raw() + r0 * w, x.raw() + r1 * w));
}

// Scalar probe with fixed weights so every output entry contributes.
Var probe(Tape& t, Var y) {
  return ops::sum(ops::mul(y, t.constant(Rng(99).uniform_tensor(y.value().shape(), -1, 1))));
}

}  // namespace

TEST(Keypoints, FlattenOrder) {
  Tensor one({1, 3}, std::vector<double>{0.5, -0.5, 2});
  EXPECT_EQ(flatten_keypoints(one), Tensor({3}, std::vector<double>{0.5, -0.5, 2}));
  Tensor two({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(flatten_keypoints(two), Tensor({6}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(unflatten_keypoints(flatten_keypoints(two)), two);
  EXPECT_THROW(unflatten_keypoints(Tensor({4})), Error);
}

TEST(PositionalEncoding, SpotValues) {
  const Tensor pe = positional_encoding(6, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(pe.at({0, i}), i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_DOUBLE_EQ(pe.at({1, 0}), std::sin(1.0));
  EXPECT_NEAR(pe.at({1, 0}), 0.841471, 1e-6);
  for (double v : pe.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(positional_encoding(3, 5), Error);
}

TEST(Mapping, EmbedAndUnembedAreLinear) {
  Predictor p(tiny_config(), 3, 1);
  Rng rng(1);
  Tensor a = rng.uniform_tensor({4, 9}, -1, 1), b = rng.uniform_tensor({4, 9}, -1, 1);
  Tensor ab = a;
  ab += b;
  Tape t(false);
  const Tensor ea = p.mapping().embed(t.constant(a)).value();
  const Tensor eb = p.mapping().embed(t.constant(b)).value();
  const Tensor eab = p.mapping().embed(t.constant(ab)).value();
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_NEAR(eab[i], ea[i] + eb[i], 1e-14);
  const Tensor e3 = p.mapping().embed(t.constant(ab.reshaped({4, 9}))).value();
  Tensor scaled = a;
  for (double& v : scaled.data()) v *= -2.5;
  const Tensor es = p.mapping().embed(t.constant(scaled)).value();
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_NEAR(es[i], -2.5 * ea[i], 1e-14);
  for (double v : p.mapping().embed(t.constant(Tensor({2, 9}))).value().data()) EXPECT_EQ(v, 0.0);
  for (double v : p.mapping().unembed(t.constant(Tensor({2, 16}))).value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.mapping().unembed(t.constant(Tensor({4, 16}))).value().shape(), (Shape{4, 9}));
  EXPECT_THROW(p.mapping().embed(t.constant(Tensor({2, 8}))), Error);
  (void)e3;
}

TEST(Mapping, ExplicitMappingIsFixedIdentityPadding) {
  PredictorConfig c = tiny_config();
  c.explicit_mapping = true;
  Predictor p(c, 3, 1);
  Tensor x = Rng(2).uniform_tensor({2, 9}, -1, 1);
  Tape t(false);
  const Tensor q = p.mapping().embed(t.constant(x)).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(q.at({r, j}), j < 9 ? x.at({r, j}) : 0.0);
  EXPECT_EQ(p.mapping().unembed(t.constant(q)).value(), x);
  EXPECT_TRUE(p.parameter_set().find("mappings.embed")->frozen);
  c.d_model = 8;
  EXPECT_THROW(Predictor(c, 3, 1), Error);
}

TEST(Attention, ZeroQueriesGiveUniformWeightsAndMeanRows) {
  Rng rng(3);
  const std::size_t l = 5;
  Tensor v = rng.uniform_tensor({l, 3}, -1, 1);
  Tape t(false);
  std::vector<Tensor> w;
  Var y = ops::attention(t.constant(Tensor({l, 2})), t.constant(rng.uniform_tensor({l, 2}, -1, 1)),
                         t.constant(v), {1, l, 1, 2, 3}, &w);
  ASSERT_EQ(w.size(), 1u);
  for (double p : w[0].data()) EXPECT_DOUBLE_EQ(p, 1.0 / l);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t r = 0; r < l; ++r) mean += v.at({r, c});
    mean /= l;
    for (std::size_t r = 0; r < l; ++r) EXPECT_NEAR(y.value().at({r, c}), mean, 1e-15);
  }
}

TEST(Attention, WeightsAreRowStochasticInEveryLayerAndHead) {
  PredictorConfig c = tiny_config();
  Predictor p(c, 3, 4);
  Tape t(false);
  std::vector<Tensor> w;
  p.forward(t.constant(Rng(4).uniform_tensor({2 * c.seq_len, 9}, -1, 1)), 2, true, &w);
  ASSERT_EQ(w.size(), c.num_layers * 2 * c.n_head);
  for (const Tensor& m : w) {
    for (std::size_t r = 0; r < c.seq_len; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < c.seq_len; ++j) {
        EXPECT_GE(m.at({r, j}), 0.0);
        s += m.at({r, j});
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Predictor, PermutationEquivariantOnlyWithoutPositions) {
  PredictorConfig c = tiny_config();
  Predictor p(c, 3, 5);
  Tensor x = Rng(5).uniform_tensor({c.seq_len, 9}, -1, 1);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor xp(x.shape());
  for (std::size_t r = 0; r < c.seq_len; ++r)
    for (std::size_t j = 0; j < 9; ++j) xp.at({r, j}) = x.at({perm[r], j});
  for (bool with_pe : {false, true}) {
    Tape t(false);
    const Tensor y = p.forward(t.constant(x), 1, with_pe).value();
    const Tensor yp = p.forward(t.constant(xp), 1, with_pe).value();
    double worst = 0;
    for (std::size_t r = 0; r < c.seq_len; ++r)
      for (std::size_t j = 0; j < 9; ++j)
        worst = std::max(worst, std::abs(yp.at({r, j}) - y.at({perm[r], j})));
    if (with_pe) {
      EXPECT_GT(worst, 1e-3);
    } else {
      EXPECT_LT(worst, 1e-12);
    }
  }
}

TEST(Predictor, EncoderLayerRowsAreNormalized) {
  PredictorConfig c = tiny_config();
  c.num_layers = 1;
  Predictor p(c, 3, 6);
  Tape t(false);
  Var q = t.constant(Rng(6).uniform_tensor({c.seq_len, c.d_model}, -2, 2));
  const Tensor y = p.predict_latent(q, 1).value();
  ASSERT_EQ(y.shape(), (Shape{c.seq_len, c.d_model}));
  for (std::size_t r = 0; r < c.seq_len; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < c.d_model; ++j) m += y.at({r, j});
    m /= c.d_model;
    for (std::size_t j = 0; j < c.d_model; ++j) v += (y.at({r, j}) - m) * (y.at({r, j}) - m);
    v /= c.d_model;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Predictor, OutputLengthMatchesInputAndMismatchIsRejected) {
  PredictorConfig c = tiny_config();
  Predictor p(c, 3, 7);
  Tape t(false);
  EXPECT_EQ(p.forward(t.constant(Tensor({3 * c.seq_len, 9})), 3).value().shape(),
            (Shape{3 * c.seq_len, 9}));
  EXPECT_THROW(p.forward(t.constant(Tensor({c.seq_len + 1, 9})), 1), Error);
}

TEST(Predictor, DeterministicAndStateless) {
  Predictor p(tiny_config(), 3, 8);
  Tensor x = Rng(8).uniform_tensor({4, 9}, -1, 1);
  Tape t1(false), t2(false), t3(false);
  const Tensor a = p.forward(t1.constant(x), 1).value();
  p.forward(t2.constant(Rng(9).uniform_tensor({4, 9}, -1, 1)), 1);
  EXPECT_EQ(p.forward(t3.constant(x), 1).value(), a);
}

TEST(Predictor, ZeroWeightsGiveInputIndependentOutput) {
  Predictor p(tiny_config(), 3, 9);
  for (Parameter* prm : p.parameters()) {
    const bool keep = prm->name.find(".gamma") != std::string::npos ||
                      prm->name.find(".beta") != std::string::npos || prm->name == "mappings.unembed";
    if (!keep) prm->value.fill(0.0);
  }
  Tape t(false);
  const Tensor a = p.forward(t.constant(Rng(1).uniform_tensor({4, 9}, -1, 1)), 1).value();
  const Tensor b = p.forward(t.constant(Rng(2).uniform_tensor({4, 9}, -1, 1)), 1).value();
  EXPECT_EQ(a, b);
}

TEST(Predictor, LossDefinition) {
  Tape t(false);
  const std::size_t rows = 4, width = 9;
  Tensor a = Rng(10).uniform_tensor({rows, width}, -1, 1);
  Tensor b = a;
  b.at({2, 5}) += 0.3;
  EXPECT_EQ(ops::mse(t.constant(a), t.constant(a)).value().item(), 0.0);
  const double l = ops::mse(t.constant(a), t.constant(b)).value().item();
  EXPECT_NEAR(l, 0.09 / (rows * width), 1e-15);
  EXPECT_EQ(l, ops::mse(t.constant(b), t.constant(a)).value().item());
}

TEST(Predictor, BatchedSequencesEqualPerSequenceLoop) {
  PredictorConfig c = tiny_config();
  Predictor p(c, 3, 11);
  const std::size_t b = 4;
  Tensor x = Rng(11).uniform_tensor({b * c.seq_len, 9}, -1, 1);
  Tape t(false);
  const Tensor y = p.forward(t.constant(x), b).value();
  for (std::size_t s = 0; s < b; ++s) {
    Tape ts(false);
    const Tensor ys = p.forward(ts.constant(rows(x, s * c.seq_len, (s + 1) * c.seq_len)), 1).value();
    EXPECT_LE(max_relative_error(rows(y, s * c.seq_len, (s + 1) * c.seq_len), ys), 1e-10);
  }
}

TEST(Predictor, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Predictor p(tiny_config(), 2, seed);
    Rng rng(300 + seed);
    Tensor x = rng.uniform_tensor({8, 6}, -1, 1), y = rng.uniform_tensor({8, 6}, -1, 1);
    auto f = [&](Tape& t) { return ops::mse(p.forward(t.constant(x), 2), t.constant(y)); };
    EXPECT_LE(grad_check_params(f, p.parameters(), 1e-5, 4, seed), 1e-4) << "seed " << seed;
  }
}

TEST(Predictor, TwoLayerStackInputGradient) {
  PredictorConfig c = tiny_config();
  Predictor p(c, 2, 12);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(400 + seed);
    auto f = [&](Tape& t, const std::vector<Var>& in) { return probe(t, p.predict_latent(in[0], 1)); };
    EXPECT_LE(grad_check(f, {rng.uniform_tensor({c.seq_len, c.d_model}, -1, 1)}), 1e-4);
  }
}

TEST(SequentialPredictor, StepIsMeanOfTransformerOutputs) {
  PredictorConfig c = tiny_config();
  SequentialPredictor sp(c, 3, 13);
  Tensor q = Rng(13).uniform_tensor({c.seq_len, c.d_model}, -1, 1);
  Tape t(false);
  const Tensor next = sp.step(0, t.constant(q), 1).value();
  Tensor with_pe = q;
  with_pe += positional_encoding(c.seq_len, c.d_model);
  const Tensor full = sp.transformer(0).forward(t.constant(with_pe), 1, c.seq_len).value();
  ASSERT_EQ(next.shape(), (Shape{1, c.d_model}));
  for (std::size_t j = 0; j < c.d_model; ++j) {
    double mean = 0;
    for (std::size_t r = 0; r < c.seq_len; ++r) mean += full.at({r, j});
    EXPECT_NEAR(next[j], mean / c.seq_len, 1e-14);
  }
  EXPECT_THROW(sp.step(1, t.constant(q), 1), Error);
}

TEST(SequentialPredictor, OwnParametersPerStep) {
  PredictorConfig c = tiny_config();
  SequentialPredictor sp(c, 3, 14);
  EXPECT_NE(sp.parameter_set().find("predictor.seq.1.layer.1.wq"), nullptr);
  EXPECT_NE(sp.parameter_set().find("predictor.seq.3.layer.1.wq"), nullptr);
  EXPECT_EQ(sp.parameter_set().find("predictor.seq.4.layer.1.wq"), nullptr);
  EXPECT_EQ(&sp.transformer(7), &sp.transformer(2));
}

TEST(PredictorConfig, PaperPresetParameterCount) {
  PredictorConfig c;
  c.d_model = 512;
  c.d_k = c.d_v = 64;
  c.d_inner = 2048;
  c.n_head = 8;
  c.num_layers = 6;
  Predictor p(c, 16, 1);
  const std::size_t n = parameter_count(p.parameters());
  EXPECT_EQ(n, 6u * 3150336u + 2u * 512u * 48u);
  EXPECT_LE(std::abs(static_cast<double>(n) - 18.9e6), 0.1 * 18.9e6);
}

TEST(PredictorConfig, RejectsInvalid) {
  PredictorConfig c;
  c.dropout = 0.1;
  EXPECT_THROW(c.validate(), Error);
  c = PredictorConfig();
  c.d_model = 63;
  EXPECT_THROW(c.validate(), Error);
}

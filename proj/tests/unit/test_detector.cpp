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

#include "tkn/detector.hpp"
#include "tkn/grad_check.hpp"

using namespace tkn;

namespace {

DetectorConfig tiny_config() {
  DetectorConfig c;
  c.height = c.width = 8;
  c.channels = 1;
  c.layer_channels = {4, 4};
  c.strides = {2, 1};
  c.keypoints = 2;
  c.norm_groups = 2;
  c.sigma = 0.3;
  return c;
}

DetectorConfig small_config() {
  DetectorConfig c;
  c.height = c.width = 16;
  c.channels = 2;
  c.layer_channels = {4, 8, 8};
  c.strides = {2, 1, 2};
  c.keypoints = 3;
  c.norm_groups = 2;
  return c;
}

Tensor one_hot_map(std::size_t h, std::size_t w, std::size_t r, std::size_t c) {
  Tensor m({1, 1, h, w});
  m.at({0, 0, r, c}) = 1000.0;
  return m;
}

Tensor eval_keypoints(const Tensor& maps) {
  Tape t(false);
  return coordinate_generation(t.constant(maps)).value();
}

}  // namespace

TEST(DetectorConfig, DeskScheduleShapes) {
  DetectorConfig c;
  c.validate();
  const auto lv = c.levels();
  ASSERT_EQ(lv.size(), 7u);
  EXPECT_EQ(lv[1].height, 32u);
  EXPECT_EQ(lv[3].height, 8u);
  EXPECT_EQ(lv[6].height, 8u);
  EXPECT_EQ(lv[6].channels, 64u);
  EXPECT_EQ(c.decoder_geometry(1).output_padding, 1u);
  EXPECT_EQ(c.decoder_geometry(6).output_padding, 0u);
}

TEST(DetectorConfig, RejectsBadSettings) {
  DetectorConfig c;
  c.kernel = 4;
  EXPECT_THROW(c.validate(), Error);
  c = DetectorConfig();
  c.norm_groups = 3;
  EXPECT_THROW(c.validate(), Error);
  c = DetectorConfig();
  c.strides.pop_back();
  EXPECT_THROW(c.validate(), Error);
  c = DetectorConfig();
  c.sigma = 0;
  EXPECT_THROW(c.validate(), Error);
}

// --- coordinate generation -------------------------------------------------

TEST(CoordinateGeneration, GridForFourColumns) {
  const auto g = coordinate_grid(4);
  const double printed[] = {-1, -0.333, 0.333, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], printed[i], 5e-4);
  EXPECT_DOUBLE_EQ(g[1], -1.0 / 3.0);
}

TEST(CoordinateGeneration, OneHotColumnIsExact) {
  const Tensor p = eval_keypoints(one_hot_map(4, 4, 2, 3));
  EXPECT_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], 1.0 / 3.0);
}

TEST(CoordinateGeneration, UniformChannelCentres) {
  const Tensor p = eval_keypoints(Tensor({1, 1, 5, 6}, 0.7));
  EXPECT_NEAR(p[0], 0.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
  EXPECT_NEAR(p[2], 0.7, 1e-15);
}

TEST(CoordinateGeneration, OneHotShiftMovesByGridSpacing) {
  const std::size_t w = 9;
  for (std::size_t c = 0; c + 1 < w; ++c) {
    const double a = eval_keypoints(one_hot_map(5, w, 2, c))[0];
    const double b = eval_keypoints(one_hot_map(5, w, 2, c + 1))[0];
    EXPECT_NEAR(b - a, 2.0 / (w - 1), 1e-12);
  }
}

TEST(CoordinateGeneration, CoordinatesStayInRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Tensor p = eval_keypoints(rng.uniform_tensor({2, 4, 6, 7}, -50, 50));
    for (std::size_t i = 0; i < p.size(); i += 3) {
      EXPECT_GE(p[i], -1.0);
      EXPECT_LE(p[i], 1.0);
      EXPECT_GE(p[i + 1], -1.0);
      EXPECT_LE(p[i + 1], 1.0);
    }
  }
}

TEST(CoordinateGeneration, IntensityIsSignedSpatialMean) {
  Tensor m({1, 1, 2, 2}, std::vector<double>{-1, -2, -3, 2});
  EXPECT_DOUBLE_EQ(eval_keypoints(m)[2], -1.0);
}

// --- heatmap generation ----------------------------------------------------

TEST(HeatmapGeneration, PeakOnGridNode) {
  Tape t(false);
  const auto g = coordinate_grid(9);
  Var p = t.constant(Tensor({1, 3}, std::vector<double>{g[6], g[2], 1.0}));
  const Tensor hm = heatmap_generation(p, 9, 9, 0.1).value();
  EXPECT_DOUBLE_EQ(hm.at({0, 0, 2, 6}), 1.0);
}

TEST(HeatmapGeneration, OneSigmaFromCentre) {
  Tape t(false);
  const double sigma = 0.25;
  // Node 2 of 5 sits at 0; place the keypoint sigma to its left.
  Var p = t.constant(Tensor({1, 3}, std::vector<double>{-sigma, 0.0, 1.0}));
  const Tensor hm = heatmap_generation(p, 5, 5, sigma).value();
  EXPECT_NEAR(hm.at({0, 0, 2, 2}), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(std::exp(-0.5), 0.6065, 1e-4);
}

TEST(HeatmapGeneration, LinearInIntensity) {
  Tape t(false);
  Var a = t.constant(Tensor({1, 3}, std::vector<double>{0.2, -0.4, 0.8}));
  Var b = t.constant(Tensor({1, 3}, std::vector<double>{0.2, -0.4, 1.6}));
  const Tensor ha = heatmap_generation(a, 7, 7, 0.2).value();
  const Tensor hb = heatmap_generation(b, 7, 7, 0.2).value();
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_DOUBLE_EQ(hb[i], 2 * ha[i]);
}

TEST(HeatmapGeneration, RoundTripThroughExpectation) {
  const double sigma = 0.1;
  const std::size_t grid = 16;
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    // Keypoints kept away from the border so the bump is not truncated.
    std::vector<double> flat;
    const std::size_t k = 3;
    for (std::size_t i = 0; i < k; ++i) {
      flat.push_back(rng.uniform(-0.7, 0.7));
      flat.push_back(rng.uniform(-0.7, 0.7));
      flat.push_back(rng.uniform(0.5, 2.0));
    }
    Tape t(false);
    Tensor hm = heatmap_generation(t.constant(Tensor({1, 3 * k}, flat)), grid, grid, sigma).value();
    for (std::size_t i = 0; i < k; ++i) {
      Tensor ch({1, grid, grid});
      double s = 0;
      for (std::size_t j = 0; j < grid * grid; ++j) s += hm[i * grid * grid + j];
      for (std::size_t j = 0; j < grid * grid; ++j) ch[j] = hm[i * grid * grid + j] / s;
      const Tensor xy = spatial_expectation(t.constant(ch)).value();
      EXPECT_LE(std::abs(xy[0] - flat[3 * i]), 0.02 * 2.0);
      EXPECT_LE(std::abs(xy[1] - flat[3 * i + 1]), 0.02 * 2.0);
    }
  }
}

// --- detector --------------------------------------------------------------

TEST(Detector, EncodeShapesFollowSchedule) {
  DetectorConfig c;
  c.channels = 1;
  Detector det(c, 1);
  Tape t(false);
  FeatureStack st = det.encode(t.constant(Tensor({2, 1, 64, 64}, 0.5)));
  ASSERT_EQ(st.h.size(), 6u);
  EXPECT_EQ(st.h[0].value().shape(), (Shape{2, 16, 32, 32}));
  EXPECT_EQ(st.h[5].value().shape(), (Shape{2, 64, 8, 8}));
  EXPECT_EQ(det.keypoints(st).value().shape(), (Shape{2, 48}));
}

TEST(Detector, RejectsMismatchedFrames) {
  Detector det(small_config(), 1);
  Tape t(false);
  EXPECT_THROW(det.encode(t.constant(Tensor({1, 2, 15, 16}))), Error);
  EXPECT_THROW(det.encode(t.constant(Tensor({1, 3, 16, 16}))), Error);
}

TEST(Detector, DecodeShapeAndFinitenessForZeroHeatmap) {
  Detector det(small_config(), 2);
  Rng rng(2);
  Tape t(false);
  FeatureStack st = det.encode(t.constant(rng.uniform_tensor({1, 2, 16, 16}, 0, 1)));
  Var out = det.decode(t.constant(Tensor({1, 3, 4, 4})), st);
  EXPECT_EQ(out.value().shape(), (Shape{1, 2, 16, 16}));
  EXPECT_TRUE(out.value().all_finite());
  for (double v : out.value().data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(det.decode(t.constant(Tensor({1, 3, 5, 5})), st), Error);
}

TEST(Detector, IdenticalFramesGiveIdenticalStacks) {
  Detector det(small_config(), 3);
  Tensor x = Rng(3).uniform_tensor({1, 2, 16, 16}, 0, 1);
  Tape t1(false), t2(false);
  FeatureStack a = det.encode(t1.constant(x)), b = det.encode(t2.constant(x));
  for (std::size_t i = 0; i < a.h.size(); ++i) EXPECT_EQ(a.h[i].value(), b.h[i].value());
}

TEST(Detector, BatchedPassEqualsPerFrameLoop) {
  Detector det(small_config(), 4);
  const std::size_t n = 5;
  Tensor x = Rng(4).uniform_tensor({n, 2, 16, 16}, 0, 1);
  Tape t(false);
  FeatureStack st = det.encode(t.constant(x));
  Var kp = det.keypoints(st);
  Var rec = det.decode(det.heatmaps(kp), st);
  for (std::size_t f = 0; f < n; ++f) {
    Tensor xf({1, 2, 16, 16}, std::vector<double>(x.raw() + f * 512, x.raw() + (f + 1) * 512));
    Tape tf(false);
    FeatureStack sf = det.encode(tf.constant(xf));
    Var kf = det.keypoints(sf);
    Var rf = det.decode(det.heatmaps(kf), sf);
    for (std::size_t l = 0; l < st.h.size(); ++l) {
      const Tensor& hb = st.h[l].value();
      const std::size_t per = hb.size() / n;
      Tensor slice(sf.h[l].value().shape(), std::vector<double>(hb.raw() + f * per, hb.raw() + (f + 1) * per));
      EXPECT_LE(max_relative_error(slice, sf.h[l].value()), 1e-10);
    }
    const std::size_t kw = kf.value().size();
    for (std::size_t i = 0; i < kw; ++i) {
      EXPECT_LE(std::abs(kp.value()[f * kw + i] - kf.value()[i]) / std::max(1.0, std::abs(kf.value()[i])), 1e-10);
    }
    for (std::size_t i = 0; i < 512; ++i) EXPECT_NEAR(rec.value()[f * 512 + i], rf.value()[i], 1e-10);
  }
}

TEST(Detector, SharedSourceEqualsReplicatedSource) {
  Detector det(small_config(), 5);
  Rng rng(5);
  Tensor src = rng.uniform_tensor({1, 2, 16, 16}, 0, 1);
  Tensor rep({4, 2, 16, 16});
  for (std::size_t b = 0; b < 4; ++b) std::copy_n(src.raw(), 512, rep.raw() + b * 512);
  Tensor hp = rng.uniform_tensor({4, 3, 4, 4}, 0, 1);
  Tape t(false);
  Var shared = det.decode(t.constant(hp), det.encode(t.constant(src)));
  Var full = det.decode(t.constant(hp), det.encode(t.constant(rep)));
  EXPECT_LE(max_relative_error(shared.value(), full.value()), 1e-10);
}

TEST(Detector, ReconstructionLossIdentity) {
  Tape t(false);
  Tensor x = Rng(6).uniform_tensor({2, 1, 4, 4}, 0, 1);
  EXPECT_EQ(ops::mse(t.constant(x), t.constant(x)).value().item(), 0.0);
}

TEST(Detector, EndToEndGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Detector det(tiny_config(), seed);
    Rng rng(100 + seed);
    Tensor src = rng.uniform_tensor({2, 1, 8, 8}, 0, 1);
    Tensor tgt = rng.uniform_tensor({2, 1, 8, 8}, 0, 1);
    auto f = [&](Tape& t) { return det.reconstruct(t.constant(src), t.constant(tgt)).loss; };
    EXPECT_LE(grad_check_params(f, det.parameters(), 1e-5, 6, seed), 1e-4) << "seed " << seed;
  }
}

TEST(Detector, HeatmapAndCoordinateGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    auto cg = [](Tape& t, const std::vector<Var>& in) {
      Var p = coordinate_generation(in[0]);
      return ops::sum(ops::mul(p, t.constant(Rng(9).uniform_tensor(p.value().shape(), -1, 1))));
    };
    EXPECT_LE(grad_check(cg, {rng.uniform_tensor({2, 2, 4, 5}, -2, 2)}), 1e-4);
    auto hg = [](Tape& t, const std::vector<Var>& in) {
      Var h = heatmap_generation(in[0], 6, 5, 0.3);
      return ops::sum(ops::mul(h, t.constant(Rng(9).uniform_tensor(h.value().shape(), -1, 1))));
    };
    EXPECT_LE(grad_check(hg, {rng.uniform_tensor({2, 6}, -1, 1)}), 1e-4);
  }
}

TEST(Detector, FrozenParametersRefuseOptimization) {
  Detector det(tiny_config(), 1);
  det.set_frozen(true);
  EXPECT_THROW(Adam(det.parameters(), {}), Error);
  Detector live(tiny_config(), 1);
  Adam opt(live.parameters(), {});
  live.set_frozen(true);
  EXPECT_THROW(opt.step(), Error);
}

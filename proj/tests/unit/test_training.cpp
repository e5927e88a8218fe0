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

#include "tkn/training.hpp"
#include "unit/small_models.hpp"

using namespace tkn;

namespace {

std::vector<Tensor> sprite_sequences(std::size_t n, std::size_t length, std::uint64_t seed = 1) {
  return generate_split(small::scene(n, length), seed, Split::train).sequences;
}

TrainConfig quick(std::size_t det_epochs, std::size_t pred_epochs) {
  TrainConfig c;
  c.batch_size = 8;
  c.detector_epochs = det_epochs;
  c.predictor_epochs = pred_epochs;
  c.max_gap = 3;
  return c;
}

// Straight-line keypoint tracks [T, 3K]: x, y move at constant velocity,
// intensity stays fixed.
std::vector<Tensor> linear_tracks(std::size_t n, std::size_t T, std::size_t K, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < n; ++s) {
    Tensor tr({T, 3 * K});
    for (std::size_t k = 0; k < K; ++k) {
      const double x0 = rng.uniform(-0.5, 0.5), y0 = rng.uniform(-0.5, 0.5);
      const double vx = rng.uniform(-0.05, 0.05), vy = rng.uniform(-0.05, 0.05);
      const double v = rng.uniform(0.2, 0.8);
      for (std::size_t t = 0; t < T; ++t) {
        tr.at({t, 3 * k}) = x0 + vx * static_cast<double>(t);
        tr.at({t, 3 * k + 1}) = y0 + vy * static_cast<double>(t);
        tr.at({t, 3 * k + 2}) = v;
      }
    }
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace

TEST(TrainDetector, SameSeedGivesIdenticalHistoryAndWeights) {
  const auto seqs = sprite_sequences(8, 6);
  Detector a(small::detector(), 3), b(small::detector(), 3);
  const auto ha = train_detector(a, seqs, quick(3, 0), 11);
  const auto hb = train_detector(b, seqs, quick(3, 0), 11);
  EXPECT_EQ(ha.epoch_loss, hb.epoch_loss);
  EXPECT_EQ(parameter_checksum(a.parameters()), parameter_checksum(b.parameters()));
  Detector c(small::detector(), 3);
  EXPECT_NE(train_detector(c, seqs, quick(3, 0), 12).epoch_loss, ha.epoch_loss);
}

TEST(TrainDetector, LossFalls) {
  const auto seqs = sprite_sequences(32, 8);
  Detector det(small::detector(), 5);
  std::vector<double> seen;
  const auto h = train_detector(det, seqs, quick(40, 0), 1, [&](std::size_t, double l) { seen.push_back(l); });
  ASSERT_EQ(h.epoch_loss.size(), 40u);
  EXPECT_EQ(seen, h.epoch_loss);
  EXPECT_LT(h.epoch_loss.back(), 0.5 * h.epoch_loss.front());
}

TEST(TrainDetector, DivergenceAborts) {
  auto seqs = sprite_sequences(4, 6);
  for (auto& s : seqs) s[3] = std::nan("");
  Detector det(small::detector(), 1);
  try {
    train_detector(det, seqs, quick(1, 0), 1);
    FAIL() << "NaN loss was accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos) << e.what();
  }
}

TEST(TrainDetector, RejectsBadInput) {
  Detector det(small::detector(), 1);
  EXPECT_THROW(train_detector(det, {}, quick(1, 0), 1), Error);
  EXPECT_THROW(train_detector(det, {Tensor({1, 1, 16, 16})}, quick(1, 0), 1), Error);
  TrainConfig bad = quick(1, 0);
  bad.batch_size = 0;
  EXPECT_THROW(train_detector(det, sprite_sequences(2, 4), bad, 1), Error);
}

TEST(PredictorLoss, IdentitySymmetryAndSingleSlot) {
  Tape tape;
  Rng rng(2);
  Tensor a = rng.uniform_tensor({4, 6}, -1, 1), b = rng.uniform_tensor({4, 6}, -1, 1);
  EXPECT_EQ(predictor_loss(tape.constant(a), tape.constant(a)).value().item(), 0.0);
  EXPECT_EQ(predictor_loss(tape.constant(a), tape.constant(b)).value().item(),
            predictor_loss(tape.constant(b), tape.constant(a)).value().item());
  Tensor c = a;
  c[5] += 0.3;
  EXPECT_NEAR(predictor_loss(tape.constant(a), tape.constant(c)).value().item(), 0.09 / 24.0, 1e-15);
  EXPECT_THROW(predictor_loss(tape.constant(a), tape.constant(Tensor({4, 3}))), Error);
}

TEST(TrainPredictor, RequiresFrozenDetector) {
  const auto seqs = sprite_sequences(4, 8);
  Detector det(small::detector(), 1);
  Predictor pred(small::predictor(), 3, 1);
  try {
    train_predictor(pred, det, seqs, quick(0, 1), 1);
    FAIL() << "trained against a live detector";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("frozen"), std::string::npos);
  }
}

TEST(TrainPredictor, DetectorUntouchedAndRunsReproducible) {
  const auto seqs = sprite_sequences(8, 8);
  Detector det(small::detector(), 1);
  train_detector(det, seqs, quick(2, 0), 1);
  det.set_frozen(true);
  const auto before = parameter_checksum(det.parameters());
  Predictor a(small::predictor(), 3, 4), b(small::predictor(), 3, 4);
  const auto ha = train_predictor(a, det, seqs, quick(0, 5), 9);
  EXPECT_EQ(parameter_checksum(det.parameters()), before);
  const auto hb = train_predictor(b, det, seqs, quick(0, 5), 9);
  EXPECT_EQ(ha.epoch_loss, hb.epoch_loss);
  EXPECT_EQ(parameter_checksum(a.parameters()), parameter_checksum(b.parameters()));

  SequentialPredictor sa(small::predictor(), 3, 4), sb(small::predictor(), 3, 4);
  const auto sha = train_sequential(sa, det, seqs, quick(0, 3), 9);
  const auto shb = train_sequential(sb, det, seqs, quick(0, 3), 9);
  EXPECT_EQ(sha.epoch_loss, shb.epoch_loss);
  EXPECT_EQ(parameter_checksum(det.parameters()), before);
}

TEST(TrainPredictor, WindowLongerThanSequenceRejected) {
  Predictor pred(small::predictor(6), 2, 1);
  EXPECT_THROW(train_predictor_on_tracks(pred, linear_tracks(4, 10, 2, 1), quick(0, 1), 1), Error);
  EXPECT_THROW(train_predictor_on_tracks(pred, {Tensor({12, 5})}, quick(0, 1), 1), Error);
}

TEST(TrainPredictor, LinearMotionExtrapolates) {
  // t = 5 inputs predict the next 5; horizon 5 is the last predicted row.
  PredictorConfig pc = small::predictor(5);
  pc.d_model = 32;
  pc.d_inner = 64;
  pc.num_layers = 2;
  const std::size_t K = 2, t = 5;
  Predictor pred(pc, K, 3);
  TrainConfig tc = quick(0, 500);
  tc.batch_size = 16;
  const auto train = linear_tracks(256, 2 * t, K, 21);
  const auto h = train_predictor_on_tracks(pred, train, tc, 5);
  EXPECT_LT(h.epoch_loss.back(), 0.5 * h.epoch_loss.front());

  const auto test = linear_tracks(32, 2 * t, K, 22);
  double worst = 0;
  for (const Tensor& tr : test) {
    Tape tape(false);
    Tensor in({t, 3 * K});
    std::copy(tr.raw(), tr.raw() + in.size(), in.raw());
    const Tensor out = pred.forward(tape.constant(in), 1).value();
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t axis = 0; axis < 2; ++axis) {
        const double got = out.at({t - 1, 3 * k + axis}), want = tr.at({2 * t - 1, 3 * k + axis});
        worst = std::max(worst, std::abs(got - want));
      }
    }
  }
  // 5% of the [-1, 1] coordinate range.
  EXPECT_LE(worst, 0.1);
}

TEST(TrainSequential, LossFallsOnLinearMotion) {
  PredictorConfig pc = small::predictor(4);
  pc.sequential_steps = 3;
  SequentialPredictor pred(pc, 2, 3);
  const auto h = train_sequential_on_tracks(pred, linear_tracks(64, 7, 2, 3), quick(0, 40), 5);
  EXPECT_LT(h.epoch_loss.back(), 0.5 * h.epoch_loss.front());
}

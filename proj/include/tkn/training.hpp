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

// Two-step training: detector on frame pairs, then predictor on frozen keypoints.

#ifndef TKN_TRAINING_HPP_
#define TKN_TRAINING_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tkn/detector.hpp"
#include "tkn/predictor.hpp"

namespace tkn {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t detector_epochs = 200;
  std::size_t predictor_epochs = 500;
  std::size_t max_gap = 10;
  AdamConfig adam;

  void validate() const {
    if (batch_size == 0) throw Error("training config: batch_size must be >= 1");
    if (max_gap == 0) throw Error("training config: max_gap must be >= 1");
    if (!(adam.lr > 0.0)) throw Error("training config: lr must be positive");
  }
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

namespace detail {

inline void check_sequences(const std::vector<Tensor>& seqs, const char* who) {
  if (seqs.empty()) throw Error(std::string(who) + ": dataset is empty");
  for (const Tensor& s : seqs) {
    if (s.rank() != 4 || s.shape() != seqs.front().shape()) {
      throw Error(std::string(who) + ": sequences must share one [T,C,H,W] shape, got " + to_string(s.shape()));
    }
  }
}

/// Copies frame `f` of each listed sequence into one [B,C,H,W] batch.
inline Tensor gather_frames(const std::vector<Tensor>& seqs, const std::vector<std::size_t>& seq,
                            const std::vector<std::size_t>& frame) {
  const Shape& s = seqs.front().shape();
  const std::size_t fsz = s[1] * s[2] * s[3];
  Tensor out({seq.size(), s[1], s[2], s[3]});
  for (std::size_t b = 0; b < seq.size(); ++b) {
    const double* src = seqs[seq[b]].raw() + frame[b] * fsz;
    std::copy(src, src + fsz, out.raw() + b * fsz);
  }
  return out;
}

inline void check_finite(double loss, const char* who, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw Error(std::string(who) + ": loss diverged (" + std::to_string(loss) + ") at epoch " +
                std::to_string(epoch + 1) + ", batch " + std::to_string(batch + 1));
  }
}

}  // namespace detail

/// One epoch draws one (source, target) pair from every sequence; the gap is
/// uniform in [1, max_gap] (capped by the sequence length), direction random.
inline TrainHistory train_detector(Detector& det, const std::vector<Tensor>& seqs, const TrainConfig& cfg,
                                   std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::check_sequences(seqs, "train_detector");
  const std::size_t T = seqs.front().dim(0);
  if (T < 2) throw Error("train_detector: sequences need at least 2 frames");
  const std::size_t max_gap = std::min(cfg.max_gap, T - 1);
  Adam opt(det.parameters(), cfg.adam);
  Rng rng(seed);
  TrainHistory hist;
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t e = 0; e < cfg.detector_epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + B));
      std::vector<std::size_t> src(B), tgt(B);
      for (std::size_t b = 0; b < B; ++b) {
        const auto gap = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_gap)));
        const auto lo = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - 1 - gap)));
        const bool forward = rng.uniform_int(0, 1) == 1;
        src[b] = forward ? lo : lo + gap;
        tgt[b] = forward ? lo + gap : lo;
      }
      Tape tape;
      auto r = det.reconstruct(tape.input(detail::gather_frames(seqs, idx, src)),
                               tape.input(detail::gather_frames(seqs, idx, tgt)));
      const double loss = r.loss.value().item();
      detail::check_finite(loss, "train_detector", e, batches);
      opt.zero_grad();
      tape.backward(r.loss);
      opt.step();
      total += loss;
      ++batches;
    }
    hist.epoch_loss.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(e, hist.epoch_loss.back());
  }
  return hist;
}

/// Keypoints [T, 3K] of every frame of every sequence, through the detector
/// without recording gradients.
inline std::vector<Tensor> extract_keypoints(const Detector& det, const std::vector<Tensor>& seqs) {
  std::vector<Tensor> out;
  out.reserve(seqs.size());
  for (const Tensor& s : seqs) {
    Tape tape(false);
    out.push_back(det.keypoints(det.encode(tape.constant(s))).value());
  }
  return out;
}

namespace detail {

/// Rows [begin, begin+len) of each selected keypoint track, stacked: [B*len, 3K].
inline Tensor gather_rows(const std::vector<Tensor>& tracks, const std::vector<std::size_t>& seq,
                          const std::vector<std::size_t>& begin, std::size_t len) {
  const std::size_t w = tracks.front().dim(1);
  Tensor out({seq.size() * len, w});
  for (std::size_t b = 0; b < seq.size(); ++b) {
    const double* src = tracks[seq[b]].raw() + begin[b] * w;
    std::copy(src, src + len * w, out.raw() + b * len * w);
  }
  return out;
}

inline void check_tracks(const std::vector<Tensor>& tracks, std::size_t keypoints, const char* who) {
  if (tracks.empty()) throw Error(std::string(who) + ": no keypoint tracks");
  for (const Tensor& t : tracks) {
    if (t.rank() != 2 || t.shape() != tracks.front().shape() || t.dim(1) != 3 * keypoints) {
      throw Error(std::string(who) + ": tracks must share one [T," + std::to_string(3 * keypoints) +
                  "] shape, got " + to_string(t.shape()));
    }
  }
}

/// Verifies the detector is frozen on entry and bitwise untouched on exit.
class FrozenGuard {
 public:
  FrozenGuard(Detector& det, const char* who) : det_(det), who_(who) {
    for (const Parameter* p : det_.parameters()) {
      if (!p->frozen) throw Error(std::string(who) + ": detector must be frozen before predictor training");
    }
    checksum_ = parameter_checksum(det_.parameters());
  }
  void verify() {
    if (parameter_checksum(det_.parameters()) != checksum_) {
      throw Error(std::string(who_) + ": detector parameters changed during predictor training");
    }
  }

 private:
  Detector& det_;
  const char* who_;
  std::uint64_t checksum_ = 0;
};

template <typename StepFn>
TrainHistory predictor_epochs(const std::vector<Tensor>& tracks, std::size_t window, const TrainConfig& cfg,
                              std::uint64_t seed, const char* who, const EpochCallback& on_epoch, StepFn step) {
  const std::size_t T = tracks.front().dim(0);
  if (T < window) {
    throw Error(std::string(who) + ": sequences of " + std::to_string(T) + " frames are shorter than the " +
                std::to_string(window) + "-frame training window");
  }
  Rng rng(seed);
  TrainHistory hist;
  std::vector<std::size_t> order(tracks.size());
  for (std::size_t e = 0; e < cfg.predictor_epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + B));
      std::vector<std::size_t> first(B);
      for (auto& f : first) f = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - window)));
      const double loss = step(idx, first);
      check_finite(loss, who, e, batches);
      total += loss;
      ++batches;
    }
    hist.epoch_loss.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(e, hist.epoch_loss.back());
  }
  return hist;
}

}  // namespace detail

/// Predictor loss: mean squared error between real and predicted keypoints.
inline Var predictor_loss(Var real, Var pred) { return ops::mse(pred, real); }

/// Parallel predictor on keypoint tracks [T, 3K]: windows of 2t frames, the
/// keypoints of frames [s, s+t) predict those of [s+t, s+2t).
inline TrainHistory train_predictor_on_tracks(Predictor& pred, const std::vector<Tensor>& tracks,
                                              const TrainConfig& cfg, std::uint64_t seed,
                                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::check_tracks(tracks, pred.keypoints(), "train_predictor");
  const std::size_t t = pred.config().seq_len;
  Adam opt(trainable(pred.parameters()), cfg.adam);
  return detail::predictor_epochs(
      tracks, 2 * t, cfg, seed, "train_predictor", on_epoch,
      [&](const std::vector<std::size_t>& idx, const std::vector<std::size_t>& first) {
        std::vector<std::size_t> next(first);
        for (auto& f : next) f += t;
        Tape tape;
        Var in = tape.constant(detail::gather_rows(tracks, idx, first, t));
        Var real = tape.constant(detail::gather_rows(tracks, idx, next, t));
        Var loss = predictor_loss(real, pred.forward(in, idx.size()));
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        return loss.value().item();
      });
}

/// Sequential predictor with teacher forcing: step i sees the true latents of
/// frames [s, s+t+i) and is scored on the keypoints of frame s+t+i.
inline TrainHistory train_sequential_on_tracks(SequentialPredictor& pred, const std::vector<Tensor>& tracks,
                                               const TrainConfig& cfg, std::uint64_t seed,
                                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::check_tracks(tracks, pred.keypoints(), "train_sequential");
  const std::size_t t = pred.config().seq_len, m = pred.config().sequential_steps;
  Adam opt(trainable(pred.parameters()), cfg.adam);
  return detail::predictor_epochs(
      tracks, t + m, cfg, seed, "train_sequential", on_epoch,
      [&](const std::vector<std::size_t>& idx, const std::vector<std::size_t>& first) {
        const std::size_t B = idx.size();
        Tape tape;
        std::optional<Var> total;
        for (std::size_t i = 0; i < m; ++i) {
          std::vector<std::size_t> target(first);
          for (auto& f : target) f += t + i;
          Var in = tape.constant(detail::gather_rows(tracks, idx, first, t + i));
          Var next = pred.step(i, pred.mapping().embed(in), B);
          Var real = tape.constant(detail::gather_rows(tracks, idx, target, 1));
          Var l = predictor_loss(real, pred.mapping().unembed(next));
          total = total ? ops::add(*total, l) : l;
        }
        Var loss = ops::scale(*total, 1.0 / static_cast<double>(m));
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        return loss.value().item();
      });
}

/// Second training step: the frozen detector labels every frame, then the
/// parallel predictor is fit to those keypoints.
inline TrainHistory train_predictor(Predictor& pred, Detector& det, const std::vector<Tensor>& seqs,
                                    const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  detail::check_sequences(seqs, "train_predictor");
  if (pred.keypoints() != det.config().keypoints) throw Error("train_predictor: keypoint count mismatch");
  detail::FrozenGuard guard(det, "train_predictor");
  TrainHistory hist = train_predictor_on_tracks(pred, extract_keypoints(det, seqs), cfg, seed, on_epoch);
  guard.verify();
  return hist;
}

inline TrainHistory train_sequential(SequentialPredictor& pred, Detector& det, const std::vector<Tensor>& seqs,
                                     const TrainConfig& cfg, std::uint64_t seed,
                                     const EpochCallback& on_epoch = {}) {
  detail::check_sequences(seqs, "train_sequential");
  if (pred.keypoints() != det.config().keypoints) throw Error("train_sequential: keypoint count mismatch");
  detail::FrozenGuard guard(det, "train_sequential");
  TrainHistory hist = train_sequential_on_tracks(pred, extract_keypoints(det, seqs), cfg, seed, on_epoch);
  guard.verify();
  return hist;
}

}  // namespace tkn

#endif  // TKN_TRAINING_HPP_

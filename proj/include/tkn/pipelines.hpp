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

// Inference: parallel and sequential prediction, sliding-window streaming,
// and quality evaluation over held-out sequences.

#ifndef TKN_PIPELINES_HPP_
#define TKN_PIPELINES_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tkn/detector.hpp"
#include "tkn/metrics.hpp"
#include "tkn/predictor.hpp"

namespace tkn {

enum class Mode { parallel, sequential };

inline const char* to_string(Mode m) { return m == Mode::parallel ? "parallel" : "sequential"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "parallel") return Mode::parallel;
  if (s == "sequential") return Mode::sequential;
  throw Error("unknown mode '" + s + "' (expected parallel or sequential)");
}

/// Batched passes through each network, counted per call.
struct PassCounters {
  std::size_t encoder = 0;
  std::size_t predictor = 0;
  std::size_t decoder = 0;
};

namespace detail {

inline void check_frames(const Tensor& frames, const DetectorConfig& c, const char* who) {
  const Shape& s = frames.shape();
  if (s.size() != 4 || s[1] != c.channels || s[2] != c.height || s[3] != c.width) {
    throw Error(std::string(who) + ": frames " + to_string(s) + " do not match [T," + std::to_string(c.channels) +
                "," + std::to_string(c.height) + "," + std::to_string(c.width) + "]");
  }
}

inline Tensor frame_of(const Tensor& frames, std::size_t i) {
  const Shape& s = frames.shape();
  const std::size_t fsz = s[1] * s[2] * s[3];
  Tensor out({1, s[1], s[2], s[3]});
  std::copy(frames.raw() + i * fsz, frames.raw() + (i + 1) * fsz, out.raw());
  return out;
}

}  // namespace detail

/// X_1..X_t [t,C,H,W] -> X'_{t+1..2t}: one encoder pass over all inputs, one
/// predictor pass, one decoder pass against the skips of X_t.
inline Tensor predict_parallel(const Detector& det, const Predictor& pred, const Tensor& frames,
                               PassCounters* counters = nullptr) {
  detail::check_frames(frames, det.config(), "predict_parallel");
  const std::size_t t = pred.config().seq_len;
  if (frames.dim(0) != t) {
    throw Error("predict_parallel: expected " + std::to_string(t) + " input frames, got " +
                std::to_string(frames.dim(0)));
  }
  if (pred.keypoints() != det.config().keypoints) throw Error("predict_parallel: keypoint count mismatch");
  Tape tape(false);
  FeatureStack stack = det.encode(tape.constant(frames));
  Var p = pred.forward(det.keypoints(stack), 1);
  Var out = det.decode(det.heatmaps(p), stack_slice(stack, t - 1));
  if (counters) {
    ++counters->encoder;
    ++counters->predictor;
    ++counters->decoder;
  }
  return out.value();
}

/// X_1..X_t -> X'_{t+1..t+m}, one frame per step. Inputs enter the detector
/// frame by frame; each predicted frame is re-encoded to serve as the next
/// step's background.
inline Tensor predict_sequential(const Detector& det, const SequentialPredictor& pred, const Tensor& frames,
                                 std::size_t m, PassCounters* counters = nullptr) {
  detail::check_frames(frames, det.config(), "predict_sequential");
  const std::size_t t = pred.config().seq_len;
  if (frames.dim(0) != t) {
    throw Error("predict_sequential: expected " + std::to_string(t) + " input frames, got " +
                std::to_string(frames.dim(0)));
  }
  if (m == 0) throw Error("predict_sequential: horizon m must be >= 1");
  if (pred.keypoints() != det.config().keypoints) throw Error("predict_sequential: keypoint count mismatch");
  const Shape& s = frames.shape();
  const std::size_t fsz = s[1] * s[2] * s[3];
  Tensor out({m, s[1], s[2], s[3]});

  Tape tape(false);
  std::vector<Tensor> latents;
  FeatureStack background;
  for (std::size_t i = 0; i < t; ++i) {
    FeatureStack st = det.encode(tape.constant(detail::frame_of(frames, i)));
    if (counters) ++counters->encoder;
    latents.push_back(pred.mapping().embed(det.keypoints(st)).value());
    if (i + 1 == t) background = std::move(st);
  }
  const std::size_t d = pred.config().d_model;
  for (std::size_t i = 0; i < m; ++i) {
    Tensor q({latents.size(), d});
    for (std::size_t r = 0; r < latents.size(); ++r) std::copy(latents[r].raw(), latents[r].raw() + d, q.raw() + r * d);
    Var next = pred.step(i, tape.constant(std::move(q)), 1);
    if (counters) ++counters->predictor;
    Var keypoints = pred.mapping().unembed(next);
    Var frame = det.decode(det.heatmaps(keypoints), background);
    if (counters) ++counters->decoder;
    std::copy(frame.value().raw(), frame.value().raw() + fsz, out.raw() + i * fsz);
    // Later steps see predicted keypoints embedded like observed ones.
    latents.push_back(pred.mapping().embed(keypoints).value());
    if (i + 1 < m) {
      background = det.encode(tape.constant(frame.value()));
      if (counters) ++counters->encoder;
    }
  }
  return out;
}

/// Frame producer for streaming; returns nullopt once exhausted.
using FrameSource = std::function<std::optional<Tensor>()>;
/// Window [t,C,H,W] -> m predicted frames.
using WindowPredictor = std::function<Tensor(const Tensor&)>;

struct StreamOptions {
  std::size_t t = 10;
  std::size_t m = 10;
  double rate_ratio = 1.0;     // N: prediction rate over input rate
  std::size_t max_passes = 0;  // 0 = until the source runs dry
};

struct StreamEvent {
  std::size_t window_start = 0;  // index of the window's first camera frame
  Tensor frames;                 // predictions for window_start+t .. +m-1
  // Mean absolute pixel difference against the previous pass over the frames
  // both passes predicted; absent on the first pass or without overlap.
  std::optional<double> correction;
};

/// Sliding-window prediction: every pass m/N camera frames arrive (carried
/// over fractionally), the window shifts by the whole frames that arrived,
/// and the shifted window is predicted again.
inline std::vector<StreamEvent> stream_predict(const FrameSource& source, const WindowPredictor& predict,
                                               const StreamOptions& o,
                                               const std::function<void(const StreamEvent&)>& on_event = {}) {
  if (o.t == 0 || o.m == 0) throw Error("stream_predict: t and m must be >= 1");
  if (!(o.rate_ratio > 0.0) || !std::isfinite(o.rate_ratio)) {
    throw Error("stream_predict: rate ratio N must be positive and finite");
  }
  std::vector<Tensor> window;
  while (window.size() < o.t) {
    auto f = source();
    if (!f) return {};
    window.push_back(std::move(*f));
  }
  const Shape fs = window.front().shape();
  const std::size_t fsz = window.front().size();
  auto stack = [&] {
    Shape s{o.t};
    s.insert(s.end(), fs.begin(), fs.end());
    Tensor w(s);
    for (std::size_t i = 0; i < o.t; ++i) {
      if (window[i].shape() != fs) throw Error("stream_predict: frame shapes differ within the stream");
      std::copy(window[i].raw(), window[i].raw() + fsz, w.raw() + i * fsz);
    }
    return w;
  };

  std::vector<StreamEvent> events;
  std::size_t start = 0;
  double credit = 0.0;
  const double per_pass = static_cast<double>(o.m) / o.rate_ratio;
  for (std::size_t pass = 0; o.max_passes == 0 || pass < o.max_passes; ++pass) {
    StreamEvent ev;
    ev.window_start = start;
    ev.frames = predict(stack());
    if (ev.frames.rank() == 0 || ev.frames.dim(0) != o.m) throw Error("stream_predict: predictor returned wrong count");
    if (!events.empty()) {
      const StreamEvent& prev = events.back();
      const std::size_t lo = start + o.t, hi = prev.window_start + o.t + o.m;
      if (lo < hi) {
        const std::size_t shift = start - prev.window_start;
        double acc = 0;
        const std::size_t n = (hi - lo) * fsz;
        const double* a = prev.frames.raw() + shift * fsz;
        const double* b = ev.frames.raw();
        for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
        ev.correction = acc / static_cast<double>(n);
      }
    }
    if (on_event) on_event(ev);
    events.push_back(std::move(ev));

    credit += per_pass;
    const auto advance = static_cast<std::size_t>(std::floor(credit));
    credit -= static_cast<double>(advance);
    for (std::size_t k = 0; k < advance; ++k) {
      auto f = source();
      if (!f) return events;
      window.erase(window.begin());
      window.push_back(std::move(*f));
      ++start;
    }
  }
  return events;
}

/// Serves the frames of one [T,C,H,W] sequence in order.
inline FrameSource sequence_source(const Tensor& seq) {
  if (seq.rank() != 4) throw Error("sequence_source: expected [T,C,H,W]");
  return [seq, next = std::size_t{0}]() mutable -> std::optional<Tensor> {
    if (next >= seq.dim(0)) return std::nullopt;
    Tensor f = detail::frame_of(seq, next++);
    return f.reshaped({seq.dim(1), seq.dim(2), seq.dim(3)});
  };
}

struct Quality {
  double ssim = 0;
  double psnr = 0;
  std::size_t frames = 0;
  std::vector<double> ssim_per_step;  // mean over sequences at each horizon step
};

namespace detail {

inline void accumulate_quality(Quality& q, const Tensor& pred, const Tensor& truth, std::size_t first) {
  const Shape& s = pred.shape();
  const std::size_t fsz = s[1] * s[2] * s[3];
  if (q.ssim_per_step.size() < s[0]) q.ssim_per_step.resize(s[0], 0.0);
  for (std::size_t i = 0; i < s[0]; ++i) {
    Tensor a({s[1], s[2], s[3]}), b({s[1], s[2], s[3]});
    std::copy(pred.raw() + i * fsz, pred.raw() + (i + 1) * fsz, a.raw());
    std::copy(truth.raw() + (first + i) * fsz, truth.raw() + (first + i + 1) * fsz, b.raw());
    const double v = ssim(a, b);
    q.ssim += v;
    q.psnr += psnr(a, b);
    q.ssim_per_step[i] += v;
    ++q.frames;
  }
}

inline void finish_quality(Quality& q, std::size_t sequences) {
  if (q.frames == 0) return;
  q.ssim /= static_cast<double>(q.frames);
  q.psnr /= static_cast<double>(q.frames);
  for (double& v : q.ssim_per_step) v /= static_cast<double>(sequences);
}

}  // namespace detail

/// Predicts frames t..t+m-1 of every sequence from frames 0..t-1 and scores
/// them against the truth.
inline Quality evaluate_prediction(const WindowPredictor& predict, const std::vector<Tensor>& seqs, std::size_t t,
                                   std::size_t m) {
  Quality q;
  for (const Tensor& s : seqs) {
    if (s.rank() != 4 || s.dim(0) < t + m) {
      throw Error("evaluate_prediction: sequences need at least " + std::to_string(t + m) + " frames");
    }
    Tensor in({t, s.dim(1), s.dim(2), s.dim(3)});
    std::copy(s.raw(), s.raw() + in.size(), in.raw());
    Tensor out = predict(in);
    if (out.dim(0) < m) throw Error("evaluate_prediction: predictor returned too few frames");
    if (out.dim(0) > m) {
      Tensor cut({m, s.dim(1), s.dim(2), s.dim(3)});
      std::copy(out.raw(), out.raw() + cut.size(), cut.raw());
      out = std::move(cut);
    }
    detail::accumulate_quality(q, out, s, t);
  }
  detail::finish_quality(q, seqs.size());
  return q;
}

/// Reconstruction quality: every frame j is rebuilt from its own keypoints and
/// the skips of a frame g_j = 1 + (j mod max_gap) steps away.
inline Quality evaluate_reconstruction(const Detector& det, const std::vector<Tensor>& seqs,
                                       std::size_t max_gap = 10) {
  Quality q;
  for (const Tensor& s : seqs) {
    detail::check_frames(s, det.config(), "evaluate_reconstruction");
    const std::size_t T = s.dim(0);
    if (T < 2) throw Error("evaluate_reconstruction: sequences need at least 2 frames");
    const std::size_t gmax = std::min(max_gap, T - 1);
    Tensor src(s.shape());
    const std::size_t fsz = s.size() / T;
    for (std::size_t j = 0; j < T; ++j) {
      const std::size_t g = 1 + j % gmax;
      const std::size_t from = j >= g ? j - g : std::min(j + g, T - 1);
      std::copy(s.raw() + from * fsz, s.raw() + (from + 1) * fsz, src.raw() + j * fsz);
    }
    Tape tape(false);
    auto r = det.reconstruct(tape.constant(src), tape.constant(s));
    detail::accumulate_quality(q, r.frames.value(), s, 0);
  }
  detail::finish_quality(q, seqs.size());
  return q;
}

}  // namespace tkn

#endif  // TKN_PIPELINES_HPP_

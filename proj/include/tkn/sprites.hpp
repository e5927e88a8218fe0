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

// Moving-sprite videos with exact centre tracks.

#ifndef TKN_SPRITES_HPP_
#define TKN_SPRITES_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tkn/random.hpp"

namespace tkn {

enum class SpriteKind { disk, square, cross };
enum class Motion { bounce, sinusoidal };
enum class Background { flat, gradient, drift };

inline const char* to_string(SpriteKind k) {
  switch (k) {
    case SpriteKind::disk: return "disk";
    case SpriteKind::square: return "square";
    case SpriteKind::cross: return "cross";
  }
  return "?";
}
inline const char* to_string(Motion m) { return m == Motion::bounce ? "bounce" : "sinusoidal"; }
inline const char* to_string(Background b) {
  switch (b) {
    case Background::flat: return "flat";
    case Background::gradient: return "gradient";
    case Background::drift: return "drift";
  }
  return "?";
}

enum class Split : std::uint64_t { train = 0, test = 1 };

struct SpriteSceneConfig {
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::size_t sprite_count = 2;
  std::vector<SpriteKind> kinds{SpriteKind::disk};
  Motion motion = Motion::bounce;
  Background background = Background::flat;
  std::size_t sequence_length = 20;
  std::size_t train_sequences = 500;
  std::size_t test_sequences = 100;
  double radius = 3.0;     // pixels
  double min_speed = 0.5;  // pixels per frame
  double max_speed = 1.0;
  double background_level = 0.15;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error("data config: " + m); };
    if (image_size < 2) fail("image_size must be >= 2");
    if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
    if (sprite_count < 1 || sprite_count > 4) fail("sprite_count must lie in [1,4]");
    if (kinds.empty()) fail("kinds must not be empty");
    if (sequence_length == 0) fail("sequence_length must be >= 1");
    if (!(radius > 0.0)) fail("radius must be positive");
    if (2.0 * radius + 1.0 > static_cast<double>(image_size)) {
      fail("sprite of radius " + std::to_string(radius) + " does not fit a " + std::to_string(image_size) +
           "-pixel frame");
    }
    if (min_speed < 0.0 || max_speed < min_speed) fail("speeds must satisfy 0 <= min_speed <= max_speed");
    if (background_level < 0.0 || background_level > 0.4) fail("background_level must lie in [0,0.4]");
  }
};

/// Pixel index -> the [-1,1] coordinate convention used for keypoints.
inline double normalized_coordinate(double pixel, std::size_t extent) {
  return extent < 2 ? 0.0 : -1.0 + 2.0 * pixel / static_cast<double>(extent - 1);
}

struct SpriteSequence {
  Tensor frames;  // [T, C, S, S]
  Tensor track;   // [T, sprites, 2], normalized (x, y)
};

namespace detail {

/// Peaked opacity profile: 1 at the centre, 0 outside the sprite.
inline double sprite_alpha(SpriteKind kind, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy), reach = r + 1.0;
  auto fall = [](double d, double span) { return std::max(0.0, 1.0 - (d / span) * (d / span)); };
  switch (kind) {
    case SpriteKind::disk: return fall(std::sqrt(dx * dx + dy * dy), reach);
    case SpriteKind::square: return fall(std::max(ax, ay), reach);
    case SpriteKind::cross: {
      const double arm = std::max(1.0, r / 3.0) + 1.0;
      return fall(std::max(ax, ay), reach) * fall(std::min(ax, ay), arm);
    }
  }
  return 0.0;
}

struct SpriteState {
  SpriteKind kind;
  std::vector<double> color;
  double x, y, vx, vy;                    // bounce
  double cx, cy, amp, omega, phase, dirx, diry;  // sinusoidal
};

inline void reflect(double& p, double& v, double lo, double hi) {
  if (hi <= lo) {
    p = lo;
    v = 0;
    return;
  }
  for (int guard = 0; guard < 64 && (p < lo || p > hi); ++guard) {
    if (p < lo) p = 2 * lo - p;
    if (p > hi) p = 2 * hi - p;
    v = -v;
  }
}

}  // namespace detail

/// Sequence `index` of `split`; a pure function of (config, seed, split, index).
inline SpriteSequence generate_sequence(const SpriteSceneConfig& cfg, std::uint64_t seed, Split split,
                                        std::size_t index) {
  cfg.validate();
  Rng rng(substream_seed(seed, static_cast<std::uint64_t>(split), index));
  const std::size_t S = cfg.image_size, C = cfg.channels, T = cfg.sequence_length, n = cfg.sprite_count;
  const double lo = cfg.radius, hi = static_cast<double>(S - 1) - cfg.radius;

  std::vector<detail::SpriteState> sprites(n);
  for (auto& s : sprites) {
    s.kind = cfg.kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.kinds.size()) - 1))];
    for (std::size_t c = 0; c < C; ++c) s.color.push_back(rng.uniform(0.75, 1.0));
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.x = rng.uniform(lo, hi);
    s.y = rng.uniform(lo, hi);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    s.dirx = std::cos(angle);
    s.diry = std::sin(angle);
    const double room = (hi - lo) / 2.0;
    s.amp = std::min(room, rng.uniform(0.4, 0.9) * room);
    s.omega = s.amp > 0 ? speed / s.amp : 0.0;
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double mx = s.amp * std::abs(s.dirx), my = s.amp * std::abs(s.diry);
    s.cx = rng.uniform(lo + mx, hi - mx);
    s.cy = rng.uniform(lo + my, hi - my);
  }
  const double bg_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double bg_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  SpriteSequence out{Tensor({T, C, S, S}), Tensor({T, n, 2})};
  std::vector<double> bg(S * S);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < S; ++r) {
      for (std::size_t c = 0; c < S; ++c) {
        const double u = std::cos(bg_angle) * normalized_coordinate(static_cast<double>(c), S) +
                         std::sin(bg_angle) * normalized_coordinate(static_cast<double>(r), S);
        double v = cfg.background_level;
        if (cfg.background == Background::gradient) v += 0.1 * u;
        if (cfg.background == Background::drift) {
          v += 0.1 * std::sin(std::numbers::pi * u + bg_phase + 0.1 * static_cast<double>(t));
        }
        bg[r * S + c] = std::max(0.0, v);
      }
    }
    double* frame = out.frames.raw() + t * C * S * S;
    for (std::size_t c = 0; c < C; ++c) std::copy(bg.begin(), bg.end(), frame + c * S * S);
    for (std::size_t k = 0; k < n; ++k) {
      auto& s = sprites[k];
      double px = s.x, py = s.y;
      if (cfg.motion == Motion::sinusoidal) {
        const double a = s.amp * std::sin(s.omega * static_cast<double>(t) + s.phase);
        px = s.cx + a * s.dirx;
        py = s.cy + a * s.diry;
      }
      out.track.at({t, k, 0}) = normalized_coordinate(px, S);
      out.track.at({t, k, 1}) = normalized_coordinate(py, S);
      for (std::size_t r = 0; r < S; ++r) {
        for (std::size_t c = 0; c < S; ++c) {
          const double a = detail::sprite_alpha(s.kind, static_cast<double>(c) - px, static_cast<double>(r) - py,
                                                cfg.radius);
          if (a <= 0.0) continue;
          for (std::size_t ch = 0; ch < C; ++ch) {
            double& p = frame[ch * S * S + r * S + c];
            p = (1.0 - a) * p + a * s.color[ch];
          }
        }
      }
      if (cfg.motion == Motion::bounce) {
        s.x += s.vx;
        s.y += s.vy;
        detail::reflect(s.x, s.vx, lo, hi);
        detail::reflect(s.y, s.vy, lo, hi);
      }
    }
  }
  return out;
}

struct SpriteDataset {
  std::vector<Tensor> sequences;
  std::vector<Tensor> tracks;
};

inline SpriteDataset generate_split(const SpriteSceneConfig& cfg, std::uint64_t seed, Split split) {
  cfg.validate();
  const std::size_t count = split == Split::train ? cfg.train_sequences : cfg.test_sequences;
  SpriteDataset d;
  d.sequences.reserve(count);
  d.tracks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SpriteSequence s = generate_sequence(cfg, seed, split, i);
    d.sequences.push_back(std::move(s.frames));
    d.tracks.push_back(std::move(s.track));
  }
  return d;
}

}  // namespace tkn

#endif  // TKN_SPRITES_HPP_

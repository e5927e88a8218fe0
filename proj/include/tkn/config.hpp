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

// Run configuration: JSON schema with strict field checking and presets.

#ifndef TKN_CONFIG_HPP_
#define TKN_CONFIG_HPP_

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tkn/bench.hpp"
#include "tkn/io.hpp"
#include "tkn/sprites.hpp"
#include "tkn/training.hpp"

namespace tkn {

using Json = nlohmann::json;

struct BenchConfig {
  std::size_t warmup = kMinWarmup;
  std::size_t repetitions = kMinRepetitions;
  std::size_t horizon = 10;  // m for sequential prediction
};

struct RunConfig {
  SpriteSceneConfig data;
  DetectorConfig detector;
  PredictorConfig predictor;
  TrainConfig training;
  BenchConfig bench;
};

/// Every problem found in a config, one "field.path: message" per line.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues)
      : Error("invalid config:\n  " + join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "\n  " : "") + v[i];
    return s;
  }
  std::vector<std::string> issues_;
};

namespace detail {

template <typename E>
E enum_from(const std::string& s, std::initializer_list<E> all) {
  for (E e : all) {
    if (s == to_string(e)) return e;
  }
  throw Error("unknown value '" + s + "'");
}

inline SpriteKind kind_from(const std::string& s) {
  return enum_from(s, {SpriteKind::disk, SpriteKind::square, SpriteKind::cross});
}

/// Reads one JSON object field by field; anything left over is reported as
/// unknown.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path, std::vector<std::string>& issues)
      : j_(j), path_(std::move(path)), issues_(issues) {
    if (!j_.is_object()) issue(path_, "expected an object");
  }

  ~ObjectReader() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) issue(field(it.key()), "unknown field");
    }
  }

  void get(const char* key, std::size_t& out) {
    read(key, [&](const Json& v) {
      if (!v.is_number_unsigned()) {
        throw Error("expected a non-negative integer, got " + v.dump());
      }
      out = v.get<std::size_t>();
    });
  }
  void get(const char* key, double& out) {
    read(key, [&](const Json& v) {
      if (!v.is_number()) throw Error("expected a number, got " + v.dump());
      out = v.get<double>();
    });
  }
  void get(const char* key, bool& out) {
    read(key, [&](const Json& v) {
      if (!v.is_boolean()) throw Error("expected true or false, got " + v.dump());
      out = v.get<bool>();
    });
  }
  void get(const char* key, std::vector<std::size_t>& out) {
    read(key, [&](const Json& v) {
      if (!v.is_array()) throw Error("expected an array of integers, got " + v.dump());
      std::vector<std::size_t> tmp;
      for (const Json& e : v) {
        if (!e.is_number_unsigned()) throw Error("expected an array of non-negative integers, got " + v.dump());
        tmp.push_back(e.get<std::size_t>());
      }
      out = std::move(tmp);
    });
  }
  template <typename E>
  void get_enum(const char* key, E& out, E (*parse)(const std::string&)) {
    read(key, [&](const Json& v) {
      if (!v.is_string()) throw Error("expected a string, got " + v.dump());
      out = parse(v.get<std::string>());
    });
  }
  void get(const char* key, std::vector<SpriteKind>& out) {
    read(key, [&](const Json& v) {
      if (!v.is_array()) throw Error("expected an array of sprite kinds, got " + v.dump());
      std::vector<SpriteKind> tmp;
      for (const Json& e : v) {
        if (!e.is_string()) throw Error("expected sprite kind strings, got " + v.dump());
        tmp.push_back(kind_from(e.get<std::string>()));
      }
      out = std::move(tmp);
    });
  }

  /// Nested object; `fn` receives a reader for it.
  template <typename F>
  void section(const char* key, F&& fn) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    ObjectReader sub(j_.at(key), field(key), issues_);
    fn(sub);
  }

 private:
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void issue(const std::string& where, const std::string& what) { issues_.push_back(where + ": " + what); }

  template <typename F>
  void read(const char* key, F&& fn) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      fn(j_.at(key));
    } catch (const std::exception& e) {
      issue(field(key), e.what());
    }
  }

  const Json& j_;
  std::string path_;
  std::vector<std::string>& issues_;
  std::set<std::string> seen_;
};

inline Json kinds_json(const std::vector<SpriteKind>& kinds) {
  Json a = Json::array();
  for (SpriteKind k : kinds) a.push_back(to_string(k));
  return a;
}

/// Runs a section's own validate() and files its message under that section.
template <typename C>
void validate_into(const C& c, const char* section, std::vector<std::string>& issues) {
  try {
    c.validate();
  } catch (const Error& e) {
    std::string m = e.what();
    if (const auto colon = m.find(": "); colon != std::string::npos) m = m.substr(colon + 2);
    issues.push_back(std::string(section) + ": " + m);
  }
}

}  // namespace detail

inline Motion parse_motion(const std::string& s) {
  return detail::enum_from(s, {Motion::bounce, Motion::sinusoidal});
}
inline Background parse_background(const std::string& s) {
  return detail::enum_from(s, {Background::flat, Background::gradient, Background::drift});
}

namespace presets {

/// 64x64 RGB sprites, small detector and a 2-layer 64-wide predictor.
inline RunConfig desk() {
  RunConfig c;
  c.data.image_size = 64;
  c.data.channels = 3;
  c.data.radius = 5.0;
  c.data.min_speed = 1.0;
  c.data.max_speed = 2.0;
  return c;
}

/// Published transformer widths; detector widths are not published, so the
/// desk schedule is kept.
inline RunConfig paper() {
  RunConfig c = desk();
  c.predictor.d_model = 512;
  c.predictor.d_k = c.predictor.d_v = 64;
  c.predictor.d_inner = 2048;
  c.predictor.n_head = 8;
  c.predictor.num_layers = 6;
  c.training.predictor_epochs = 750;
  return c;
}

/// 32x32 grayscale, two disks, K=8: the learning benchmark.
inline RunConfig sprites32() {
  RunConfig c;
  c.detector.height = c.detector.width = 32;
  c.detector.channels = 1;
  c.detector.layer_channels = {8, 16, 16, 32, 32, 32};
  c.detector.strides = {2, 1, 2, 1, 1, 1};
  c.detector.keypoints = 8;
  return c;
}

}  // namespace presets

/// Cross-section consistency plus each section's own checks.
inline std::vector<std::string> config_issues(const RunConfig& c) {
  std::vector<std::string> out;
  detail::validate_into(c.data, "data", out);
  detail::validate_into(c.detector, "detector", out);
  detail::validate_into(c.predictor, "predictor", out);
  detail::validate_into(c.training, "training", out);
  if (c.data.image_size != c.detector.height || c.data.image_size != c.detector.width) {
    out.push_back("detector.height: frame " + std::to_string(c.detector.height) + "x" +
                  std::to_string(c.detector.width) + " does not match data.image_size " +
                  std::to_string(c.data.image_size));
  }
  if (c.data.channels != c.detector.channels) {
    out.push_back("detector.channels: " + std::to_string(c.detector.channels) + " does not match data.channels " +
                  std::to_string(c.data.channels));
  }
  if (c.data.sequence_length < 2 * c.predictor.seq_len) {
    out.push_back("data.sequence_length: " + std::to_string(c.data.sequence_length) +
                  " is shorter than 2 * predictor.seq_len = " + std::to_string(2 * c.predictor.seq_len));
  }
  if (c.bench.warmup < kMinWarmup) {
    out.push_back("bench.warmup: must be >= " + std::to_string(kMinWarmup));
  }
  if (c.bench.repetitions < kMinRepetitions) {
    out.push_back("bench.repetitions: must be >= " + std::to_string(kMinRepetitions));
  }
  if (c.bench.horizon == 0) out.push_back("bench.horizon: must be >= 1");
  return out;
}

/// Starts from the paper preset and overrides every field present in `j`.
inline RunConfig config_from_json(const Json& j) {
  RunConfig c = presets::paper();
  std::vector<std::string> issues;
  {
    detail::ObjectReader root(j, "", issues);
    root.section("data", [&](detail::ObjectReader& r) {
      auto& d = c.data;
      r.get("image_size", d.image_size);
      r.get("channels", d.channels);
      r.get("sprite_count", d.sprite_count);
      r.get("kinds", d.kinds);
      r.get_enum("motion", d.motion, &parse_motion);
      r.get_enum("background", d.background, &parse_background);
      r.get("sequence_length", d.sequence_length);
      r.get("train_sequences", d.train_sequences);
      r.get("test_sequences", d.test_sequences);
      r.get("radius", d.radius);
      r.get("min_speed", d.min_speed);
      r.get("max_speed", d.max_speed);
      r.get("background_level", d.background_level);
    });
    root.section("detector", [&](detail::ObjectReader& r) {
      auto& d = c.detector;
      r.get("height", d.height);
      r.get("width", d.width);
      r.get("channels", d.channels);
      r.get("layer_channels", d.layer_channels);
      r.get("strides", d.strides);
      r.get("kernel", d.kernel);
      r.get("keypoints", d.keypoints);
      r.get("sigma", d.sigma);
      r.get("norm_groups", d.norm_groups);
      r.get("leaky_slope", d.leaky_slope);
      r.get("norm_eps", d.norm_eps);
    });
    root.section("predictor", [&](detail::ObjectReader& r) {
      auto& p = c.predictor;
      r.get("d_model", p.d_model);
      r.get("d_k", p.d_k);
      r.get("d_v", p.d_v);
      r.get("d_inner", p.d_inner);
      r.get("n_head", p.n_head);
      r.get("num_layers", p.num_layers);
      r.get("seq_len", p.seq_len);
      r.get("dropout", p.dropout);
      r.get("norm_eps", p.norm_eps);
      r.get("explicit_mapping", p.explicit_mapping);
      r.get("sequential_steps", p.sequential_steps);
      r.get("sequential_layers", p.sequential_layers);
    });
    root.section("training", [&](detail::ObjectReader& r) {
      auto& t = c.training;
      r.get("batch_size", t.batch_size);
      r.get("detector_epochs", t.detector_epochs);
      r.get("predictor_epochs", t.predictor_epochs);
      r.get("max_gap", t.max_gap);
      r.get("lr", t.adam.lr);
      r.get("beta1", t.adam.beta1);
      r.get("beta2", t.adam.beta2);
      r.get("eps", t.adam.eps);
    });
    root.section("bench", [&](detail::ObjectReader& r) {
      r.get("warmup", c.bench.warmup);
      r.get("repetitions", c.bench.repetitions);
      r.get("horizon", c.bench.horizon);
    });
  }
  if (issues.empty()) issues = config_issues(c);
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

/// Full serialization with every field explicit.
inline Json config_to_json(const RunConfig& c) {
  const auto& d = c.data;
  const auto& k = c.detector;
  const auto& p = c.predictor;
  const auto& t = c.training;
  return Json{
      {"data",
       {{"image_size", d.image_size},
        {"channels", d.channels},
        {"sprite_count", d.sprite_count},
        {"kinds", detail::kinds_json(d.kinds)},
        {"motion", to_string(d.motion)},
        {"background", to_string(d.background)},
        {"sequence_length", d.sequence_length},
        {"train_sequences", d.train_sequences},
        {"test_sequences", d.test_sequences},
        {"radius", d.radius},
        {"min_speed", d.min_speed},
        {"max_speed", d.max_speed},
        {"background_level", d.background_level}}},
      {"detector",
       {{"height", k.height},
        {"width", k.width},
        {"channels", k.channels},
        {"layer_channels", k.layer_channels},
        {"strides", k.strides},
        {"kernel", k.kernel},
        {"keypoints", k.keypoints},
        {"sigma", k.sigma},
        {"norm_groups", k.norm_groups},
        {"leaky_slope", k.leaky_slope},
        {"norm_eps", k.norm_eps}}},
      {"predictor",
       {{"d_model", p.d_model},
        {"d_k", p.d_k},
        {"d_v", p.d_v},
        {"d_inner", p.d_inner},
        {"n_head", p.n_head},
        {"num_layers", p.num_layers},
        {"seq_len", p.seq_len},
        {"dropout", p.dropout},
        {"norm_eps", p.norm_eps},
        {"explicit_mapping", p.explicit_mapping},
        {"sequential_steps", p.sequential_steps},
        {"sequential_layers", p.sequential_layers}}},
      {"training",
       {{"batch_size", t.batch_size},
        {"detector_epochs", t.detector_epochs},
        {"predictor_epochs", t.predictor_epochs},
        {"max_gap", t.max_gap},
        {"lr", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps}}},
      {"bench", {{"warmup", c.bench.warmup}, {"repetitions", c.bench.repetitions}, {"horizon", c.bench.horizon}}},
  };
}

/// Sorted keys, no whitespace: the form hashed and echoed into checkpoints.
inline std::string canonical_config(const RunConfig& c) { return config_to_json(c).dump(); }

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(canonical_config(c)); }

inline RunConfig parse_config(std::string_view text, const std::string& what = "config") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError({what + ": not valid JSON (" + std::string(e.what()) + ")"});
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()), path.string());
}


}  // namespace tkn

#endif  // TKN_CONFIG_HPP_

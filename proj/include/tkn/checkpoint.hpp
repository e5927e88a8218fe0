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

// TKNC checkpoints.
//
// Layout, little-endian:
//   "TKNC" | u32 version | u64 echo_len | echo (JSON) | u32 count |
//   count x { u16 name_len | name | u8 dtype | u8 rank | u64 dims[rank] | u64 offset } |
//   payload (f64, offsets relative to payload start)
// Entries are sorted by name and the payload is packed in entry order, so a
// load followed by a save reproduces the file byte for byte.

#ifndef TKN_CHECKPOINT_HPP_
#define TKN_CHECKPOINT_HPP_

#include <algorithm>
#include <map>
#include <optional>

#include "tkn/config.hpp"
#include "tkn/detector.hpp"
#include "tkn/predictor.hpp"

namespace tkn {

inline constexpr char kCheckpointMagic[4] = {'T', 'K', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kCheckpointF64 = 1;

struct Checkpoint {
  std::string echo;                      // canonical JSON
  std::map<std::string, Tensor> tensors;  // sorted by name
};

inline Bytes encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(c.echo.size());
  w.put_bytes(c.echo);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    if (name.empty() || name.size() > 0xffff) throw Error("checkpoint: bad tensor name '" + name + "'");
    if (t.rank() > 0xff) throw Error("checkpoint: rank too large for '" + name + "'");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(kCheckpointF64);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.put<std::uint64_t>(offset);
    offset += t.size() * sizeof(double);
  }
  for (const auto& [name, t] : c.tensors) w.put_doubles(t.raw(), t.size());
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const Bytes& b, const std::string& what = "checkpoint") {
  ByteReader r(b, what);
  if (r.get_bytes(4, "magic") != std::string(kCheckpointMagic, 4)) {
    r.seek(0);
    r.fail("bad magic (not a TKNC checkpoint)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto echo_len = r.get<std::uint64_t>("config length");
  if (echo_len > r.remaining()) r.fail("config length " + std::to_string(echo_len) + " exceeds file");
  Checkpoint c;
  c.echo = r.get_bytes(static_cast<std::size_t>(echo_len), "config");
  const auto count = r.get<std::uint32_t>("tensor count");
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.get_bytes(r.get<std::uint16_t>("name length"), "name");
    if (e.name.empty()) r.fail("empty tensor name");
    if (!entries.empty() && !(entries.back().name < e.name)) r.fail("tensor table not strictly sorted at '" + e.name + "'");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kCheckpointF64) r.fail("unsupported dtype " + std::to_string(dtype) + " for '" + e.name + "'");
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dim");
      if (d == 0 || d > (1ull << 32)) r.fail("implausible extent " + std::to_string(d) + " for '" + e.name + "'");
      e.shape.push_back(static_cast<std::size_t>(d));
    }
    e.offset = r.get<std::uint64_t>("offset");
    entries.push_back(std::move(e));
  }
  const std::size_t base = r.offset();
  std::uint64_t expect = 0;
  for (const Entry& e : entries) {
    if (e.offset != expect) r.fail("tensor '" + e.name + "' at payload offset " + std::to_string(e.offset) +
                                   ", expected " + std::to_string(expect));
    expect += element_count(e.shape) * sizeof(double);
  }
  if (r.remaining() != expect) {
    r.fail("payload is " + std::to_string(r.remaining()) + " bytes, table describes " + std::to_string(expect));
  }
  for (const Entry& e : entries) {
    r.seek(base + static_cast<std::size_t>(e.offset));
    Tensor t(e.shape);
    r.get_doubles(t.raw(), t.size(), e.name.c_str());
    c.tensors.emplace(e.name, std::move(t));
  }
  return c;
}

/// Atomic replace while holding an exclusive lock on the parent directory,
/// so concurrent writers into one directory take turns.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const Bytes b = encode_checkpoint(c);
  const std::filesystem::path dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  FileLock lock(dir);
  write_file_atomic(path, b);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

/// Segment of a tensor name: the text before the first '.'.
inline std::string segment_of(const std::string& name) { return name.substr(0, name.find('.')); }

/// Detector plus whichever predictors have been trained against it.
struct Model {
  RunConfig config;
  std::map<std::string, std::uint64_t> seeds;  // "detector", "parallel", "sequential"
  std::optional<Detector> detector;
  std::optional<Predictor> parallel;
  std::optional<SequentialPredictor> sequential;

  std::size_t keypoints() const { return config.detector.keypoints; }

  Detector& require_detector() {
    if (!detector) throw Error("model has no detector");
    return *detector;
  }
  Predictor& require_parallel() {
    if (!parallel) throw Error("model has no parallel predictor; run train-predictor --mode parallel first");
    return *parallel;
  }
  SequentialPredictor& require_sequential() {
    if (!sequential) throw Error("model has no sequential predictor; run train-predictor --mode sequential first");
    return *sequential;
  }
};

namespace detail {

inline void collect(ParameterSet& ps, std::map<std::string, Tensor>& out) {
  for (Parameter* p : ps.refs()) out.emplace(p->name, p->value);
}

/// Copies stored tensors into `ps`, removing each from `left`.
inline void restore(ParameterSet& ps, std::map<std::string, Tensor>& left, const std::string& what) {
  for (Parameter* p : ps.refs()) {
    auto it = left.find(p->name);
    if (it == left.end()) throw Error(what + ": missing tensor '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) {
      throw Error(what + ": tensor '" + p->name + "' has shape " + to_string(it->second.shape()) +
                  ", config implies " + to_string(p->value.shape()));
    }
    p->value = std::move(it->second);
    left.erase(it);
  }
}

}  // namespace detail

inline Checkpoint to_checkpoint(Model& m) {
  Json contents = Json::array();
  Checkpoint c;
  if (m.detector) {
    contents.push_back("detector");
    detail::collect(m.detector->parameter_set(), c.tensors);
  }
  if (m.parallel) {
    contents.push_back("parallel");
    detail::collect(m.parallel->parameter_set(), c.tensors);
  }
  if (m.sequential) {
    contents.push_back("sequential");
    detail::collect(m.sequential->parameter_set(), c.tensors);
  }
  Json seeds = Json::object();
  for (const auto& [k, v] : m.seeds) seeds[k] = v;
  c.echo = Json{{"config", config_to_json(m.config)}, {"contents", contents}, {"seeds", seeds}}.dump();
  return c;
}

/// Rebuilds the models named in the echo and checks every stored tensor
/// against the shapes those models expect.
inline Model from_checkpoint(Checkpoint c, const std::string& what = "checkpoint") {
  Json echo;
  try {
    echo = Json::parse(c.echo);
  } catch (const Json::parse_error& e) {
    throw Error(what + ": config echo is not valid JSON");
  }
  if (!echo.is_object() || !echo.contains("config") || !echo.contains("contents") || !echo.contains("seeds")) {
    throw Error(what + ": config echo lacks config/contents/seeds");
  }
  Model m;
  m.config = config_from_json(echo.at("config"));
  for (auto it = echo.at("seeds").begin(); it != echo.at("seeds").end(); ++it) {
    m.seeds[it.key()] = it.value().get<std::uint64_t>();
  }
  const std::size_t K = m.config.detector.keypoints;
  for (const Json& part : echo.at("contents")) {
    const std::string s = part.get<std::string>();
    if (s == "detector") {
      m.detector.emplace(m.config.detector, 0);
      detail::restore(m.detector->parameter_set(), c.tensors, what);
    } else if (s == "parallel") {
      m.parallel.emplace(m.config.predictor, K, 0);
      detail::restore(m.parallel->parameter_set(), c.tensors, what);
    } else if (s == "sequential") {
      m.sequential.emplace(m.config.predictor, K, 0);
      detail::restore(m.sequential->parameter_set(), c.tensors, what);
    } else {
      throw Error(what + ": unknown content '" + s + "'");
    }
  }
  if (!c.tensors.empty()) throw Error(what + ": unexpected tensor '" + c.tensors.begin()->first + "'");
  return m;
}

inline void save_model(const std::filesystem::path& path, Model& m) { save_checkpoint(path, to_checkpoint(m)); }

inline Model load_model(const std::filesystem::path& path) {
  return from_checkpoint(load_checkpoint(path), path.string());
}

}  // namespace tkn

#endif  // TKN_CHECKPOINT_HPP_

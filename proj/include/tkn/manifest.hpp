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

// Run manifests: what produced an artifact, with enough to rerun it.

#ifndef TKN_MANIFEST_HPP_
#define TKN_MANIFEST_HPP_

#include <Eigen/Core>

#include "tkn/checkpoint.hpp"
#include "tkn/seqio.hpp"

#ifndef TKN_VERSION
#define TKN_VERSION "0.0.0"
#endif

namespace tkn {

inline std::string file_digest(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(b.data()), b.size())));
}

inline Json versions_json() {
  return Json{{"tkn", TKN_VERSION},
              {"tknc", kCheckpointVersion},
              {"tknseq", kSeqVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__}};
}

/// No timestamps or host names: two identical runs write identical manifests.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed, const RunConfig& cfg)
      : j_{{"command", std::move(command)},
           {"seed", seed},
           {"config_hash", hex64(config_hash(cfg))},
           {"config", config_to_json(cfg)},
           {"versions", versions_json()},
           {"inputs", Json::object()},
           {"outputs", Json::object()}} {}

  Manifest& option(const std::string& key, Json value) {
    j_["options"][key] = std::move(value);
    return *this;
  }
  /// Records an input file by name and content digest.
  Manifest& input(const std::string& role, const std::filesystem::path& path) {
    j_["inputs"][role] = Json{{"file", path.filename().string()}, {"digest", file_digest(path)}};
    return *this;
  }
  Manifest& output(const std::string& role, const std::filesystem::path& path) {
    j_["outputs"][role] = Json{{"file", path.filename().string()}, {"digest", file_digest(path)}};
    return *this;
  }
  Manifest& result(const std::string& key, Json value) {
    j_["results"][key] = std::move(value);
    return *this;
  }

  const Json& json() const noexcept { return j_; }
  void write(const std::filesystem::path& path) const { write_text_atomic(path, j_.dump(2) + "\n"); }

 private:
  Json j_;
};

}  // namespace tkn

#endif  // TKN_MANIFEST_HPP_

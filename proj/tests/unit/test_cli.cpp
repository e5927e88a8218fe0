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

// Drives the tkn executable end to end on a 16x16 configuration.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>

#include "tkn/manifest.hpp"

using namespace tkn;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status;
  std::string output;
};

CliRun tkn_cli(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" TKN_CLI "' " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int raw = ::pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

const char* kTiny = R"({
  "data": {"image_size": 16, "channels": 1, "sprite_count": 1, "radius": 2.0,
           "sequence_length": 10, "train_sequences": 12, "test_sequences": 3},
  "detector": {"height": 16, "width": 16, "channels": 1, "layer_channels": [4, 8],
               "strides": [2, 1], "keypoints": 3, "norm_groups": 2},
  "predictor": {"d_model": 16, "d_k": 4, "d_v": 4, "d_inner": 32, "n_head": 2,
                "num_layers": 1, "seq_len": 4, "sequential_steps": 4},
  "training": {"batch_size": 4, "detector_epochs": 2, "predictor_epochs": 2, "max_gap": 3},
  "bench": {"horizon": 3}
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("tkn_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_text_atomic(dir_ / "tiny.json", kTiny);
    ASSERT_EQ(tkn_cli("gen-data --config tiny.json --seed 7 --out data", dir_).status, 0);
    ASSERT_EQ(tkn_cli("train-detector --quiet --config tiny.json --data data --seed 1 --out det.tknc", dir_).status, 0);
    const CliRun p = tkn_cli(
        "train-predictor --quiet --config tiny.json --data data --detector det.tknc --seed 2 --out par.tknc", dir_);
    ASSERT_EQ(p.status, 0) << p.output;
    const CliRun s = tkn_cli(
        "train-predictor --quiet --config tiny.json --data data --detector par.tknc --mode sequential --seed 3 "
        "--out both.tknc",
        dir_);
    ASSERT_EQ(s.status, 0) << s.output;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, GenDataIsDeterministic) {
  ASSERT_EQ(tkn_cli("gen-data --config tiny.json --seed 7 --out again", dir_).status, 0);
  for (const char* f : {"train.tknseq", "test.tknseq", "manifest.json"}) {
    EXPECT_EQ(read_file(dir_ / "data" / f), read_file(dir_ / "again" / f)) << f;
  }
  ASSERT_EQ(tkn_cli("gen-data --config tiny.json --seed 8 --out other", dir_).status, 0);
  EXPECT_NE(read_file(dir_ / "data" / "train.tknseq"), read_file(dir_ / "other" / "train.tknseq"));
}

TEST_F(Cli, PredictorTrainingNeedsDetectorFirst) {
  const CliRun r = tkn_cli("train-predictor --config tiny.json --data data --out nodet.tknc", dir_);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("train-detector"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir_ / "nodet.tknc"));
  const CliRun missing = tkn_cli("train-predictor --config tiny.json --data data --detector gone.tknc --out x.tknc", dir_);
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.output.find("gone.tknc"), std::string::npos) << missing.output;
}

TEST_F(Cli, DetectorUntouchedByPredictorTraining) {
  Model both = load_model(dir_ / "both.tknc");
  Model d = load_model(dir_ / "det.tknc");
  EXPECT_EQ(parameter_checksum(d.detector->parameters()), parameter_checksum(both.detector->parameters()));
  EXPECT_TRUE(both.parallel.has_value());
  EXPECT_TRUE(both.sequential.has_value());
  EXPECT_EQ(both.seeds.at("detector"), 1u);
  EXPECT_EQ(both.seeds.at("sequential"), 3u);
}

TEST_F(Cli, EvalReportHasAllSixFields) {
  for (const char* mode : {"parallel", "sequential"}) {
    const std::string out = std::string("report_") + mode + ".json";
    const CliRun r = tkn_cli(std::string("eval --model both.tknc --data data --mode ") + mode + " --out " + out, dir_);
    ASSERT_EQ(r.status, 0) << r.output;
    const Json j = Json::parse(std::string(reinterpret_cast<const char*>(read_file(dir_ / out).data()),
                                           read_file(dir_ / out).size()));
    for (const char* f : {"ssim", "psnr", "latency_ms", "fps", "flops", "params"}) {
      EXPECT_TRUE(j.contains(f)) << mode << " lacks " << f;
    }
    EXPECT_TRUE(j["latency_ms"].contains("median"));
    EXPECT_TRUE(j["latency_ms"].contains("p95"));
    EXPECT_TRUE(j["flops"].is_number_unsigned());
    EXPECT_TRUE(j["params"].is_number_unsigned());
    const double frames = j["predicted_frames"].get<double>();
    EXPECT_NEAR(j["fps"].get<double>() * j["latency_ms"]["median"].get<double>() / 1000.0, frames, 0.01 * frames);
    EXPECT_TRUE(fs::exists(dir_ / (out + ".manifest.json")));
  }
}

TEST_F(Cli, PredictNeverModifiesCheckpoint) {
  const Bytes before = read_file(dir_ / "both.tknc");
  const auto stamp = fs::last_write_time(dir_ / "both.tknc");
  for (const char* mode : {"parallel", "sequential"}) {
    const CliRun r = tkn_cli(std::string("predict --model both.tknc --input data/test.tknseq --out p.tknseq --mode ") +
                              mode,
                          dir_);
    ASSERT_EQ(r.status, 0) << r.output;
  }
  EXPECT_EQ(read_file(dir_ / "both.tknc"), before);
  EXPECT_EQ(fs::last_write_time(dir_ / "both.tknc"), stamp);
  const auto pred = load_sequences(dir_ / "p.tknseq");
  ASSERT_EQ(pred.size(), 3u);
  EXPECT_EQ(pred.front().dim(0), 3u);  // sequential, bench.horizon
}

TEST_F(Cli, PredictModeMustBeTrained) {
  const CliRun r = tkn_cli("predict --model det.tknc --input data/test.tknseq --out q.tknseq", dir_);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("no parallel predictor"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir_ / "q.tknseq"));
}

TEST_F(Cli, InvalidConfigGivesFieldDiagnosticsAndNoOutput) {
  write_text_atomic(dir_ / "bad.json", R"({"detector": {"keypoint": 3}, "predictor": {"d_model": "x"}})");
  const CliRun r = tkn_cli("gen-data --config bad.json --out badout", dir_);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("detector.keypoint: unknown field"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("predictor.d_model"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir_ / "badout"));
  for (const auto& e : fs::directory_iterator(dir_)) {
    EXPECT_EQ(e.path().string().find(".partial."), std::string::npos) << e.path();
  }
}

TEST_F(Cli, UnknownFlagRejected) {
  const CliRun r = tkn_cli("gen-data --config tiny.json --out u --colour blue", dir_);
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(fs::exists(dir_ / "u"));
  EXPECT_NE(tkn_cli("reticulate", dir_).status, 0);
}

TEST_F(Cli, DetectorRunReproducibleFromManifest) {
  const Bytes mb = read_file(dir_ / "det.tknc.manifest.json");
  const Json man = Json::parse(std::string(mb.begin(), mb.end()));
  write_text_atomic(dir_ / "from_manifest.json", man["config"].dump());
  const std::string seed = std::to_string(man["seed"].get<std::uint64_t>());
  ASSERT_EQ(tkn_cli("train-detector --quiet --config from_manifest.json --data data --seed " + seed +
                        " --out redo.tknc",
                    dir_)
                .status,
            0);
  EXPECT_EQ(file_digest(dir_ / "redo.tknc"), man["outputs"]["checkpoint"]["digest"].get<std::string>());
  EXPECT_EQ(man["inputs"]["train"]["digest"].get<std::string>(), file_digest(dir_ / "data" / "train.tknseq"));
}

TEST_F(Cli, BenchReportsBothModes) {
  const CliRun r = tkn_cli("bench --model both.tknc --out bench.json", dir_);
  ASSERT_EQ(r.status, 0) << r.output;
  const Bytes b = read_file(dir_ / "bench.json");
  const Json j = Json::parse(std::string(b.begin(), b.end()));
  EXPECT_EQ(j["modes"]["parallel"]["passes"]["predictor"], 1);
  EXPECT_EQ(j["modes"]["sequential"]["passes"]["predictor"], 3);
  EXPECT_TRUE(j.contains("parallel_over_sequential"));
  EXPECT_NE(tkn_cli("bench --model both.tknc --repetitions 1", dir_).status, 0);
}

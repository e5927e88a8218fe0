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

// tkn: data generation, two-step training, prediction, evaluation, benchmarks.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "tkn/tkn.hpp"

namespace fs = std::filesystem;
using namespace tkn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFailure = 1;

/// A missing flag or file that an earlier step should have produced.
struct Prerequisite : Error {
  using Error::Error;
};

/// Directory built beside its destination and swapped in only when complete.
class StagedDir {
 public:
  explicit StagedDir(fs::path dest) : dest_(std::move(dest)) {
    if (dest_.filename().empty()) dest_ = dest_.parent_path();
    stage_ = dest_;
    stage_ += ".partial." + std::to_string(::getpid());
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(stage_, ec);
  }

  fs::path operator/(const std::string& name) const { return stage_ / name; }

  void commit() {
    fs::path old = dest_;
    old += ".old." + std::to_string(::getpid());
    const bool had = fs::exists(dest_);
    if (had) fs::rename(dest_, old);
    fs::rename(stage_, dest_);
    committed_ = true;
    if (had) fs::remove_all(old);
  }

 private:
  fs::path dest_, stage_;
  bool committed_ = false;
};

fs::path manifest_path(const fs::path& artifact) {
  fs::path p = artifact;
  p += ".manifest.json";
  return p;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw Prerequisite(what + " '" + p.string() + "' does not exist");
}

std::vector<Tensor> load_split(const fs::path& dir, const char* split) {
  const fs::path f = dir / (std::string(split) + ".tknseq");
  require_file(f, std::string("dataset split (run gen-data first)"));
  return load_sequences(f);
}

EpochCallback progress(const char* who, std::size_t epochs, std::size_t every, bool quiet) {
  return [=](std::size_t e, double loss) {
    if (quiet) return;
    if ((e + 1) % every == 0 || e == 0 || e + 1 == epochs) {
      std::fprintf(stderr, "%s: epoch %zu/%zu loss %.6g\n", who, e + 1, epochs, loss);
    }
  };
}

/// Frames [start, start+t) of a sequence.
Tensor input_window(const Tensor& seq, std::size_t start, std::size_t t) {
  if (seq.dim(0) < start + t) {
    throw Error("input sequence has " + std::to_string(seq.dim(0)) + " frames, need " + std::to_string(start + t));
  }
  const std::size_t fsz = seq.size() / seq.dim(0);
  Tensor out({t, seq.dim(1), seq.dim(2), seq.dim(3)});
  std::copy(seq.raw() + start * fsz, seq.raw() + (start + t) * fsz, out.raw());
  return out;
}

WindowPredictor make_predictor(Model& m, Mode mode, std::size_t horizon) {
  Detector& det = m.require_detector();
  if (mode == Mode::parallel) {
    Predictor& p = m.require_parallel();
    return [&det, &p](const Tensor& x) { return predict_parallel(det, p, x); };
  }
  SequentialPredictor& s = m.require_sequential();
  return [&det, &s, horizon](const Tensor& x) { return predict_sequential(det, s, x, horizon); };
}

std::size_t frames_per_pass(const Model& m, Mode mode, std::size_t horizon) {
  return mode == Mode::parallel ? m.config.predictor.seq_len : horizon;
}

FlopLedger pipeline_ledger(const RunConfig& c, Mode mode, std::size_t horizon) {
  return mode == Mode::parallel ? parallel_pipeline_ledger(c.detector, c.predictor)
                                : sequential_pipeline_ledger(c.detector, c.predictor, horizon);
}

Json bench_json(const BenchResult& r) {
  return Json{{"median", r.median_ms}, {"p95", r.p95_ms}};
}

// ---------------------------------------------------------------------------

struct GenData {
  std::string config, out;
  std::uint64_t seed = 0;

  int run() {
    const RunConfig cfg = load_config(config);
    StagedDir dir(out);
    const SpriteDataset train = generate_split(cfg.data, seed, Split::train);
    const SpriteDataset test = generate_split(cfg.data, seed, Split::test);
    save_sequences(dir / "train.tknseq", train.sequences);
    save_sequences(dir / "test.tknseq", test.sequences);
    Manifest man("gen-data", seed, cfg);
    man.output("train", dir / "train.tknseq").output("test", dir / "test.tknseq");
    man.write(dir / "manifest.json");
    dir.commit();
    std::printf("wrote %zu train and %zu test sequences to %s\n", train.sequences.size(), test.sequences.size(),
                out.c_str());
    return 0;
  }
};

struct TrainDetectorCmd {
  std::string config, data, out;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  bool quiet = false;

  int run() {
    const RunConfig cfg = load_config(config);
    const auto seqs = load_split(data, "train");
    Model m;
    m.config = cfg;
    m.seeds["detector"] = seed;
    m.detector.emplace(cfg.detector, seed);
    const auto h = train_detector(*m.detector, seqs, cfg.training, seed,
                                  progress("train-detector", cfg.training.detector_epochs, log_every, quiet));
    save_model(out, m);
    Manifest man("train-detector", seed, cfg);
    man.input("train", fs::path(data) / "train.tknseq").output("checkpoint", out);
    man.result("epoch_loss", h.epoch_loss);
    man.write(manifest_path(out));
    std::printf("detector saved to %s (final loss %.6g)\n", out.c_str(),
                h.epoch_loss.empty() ? 0.0 : h.epoch_loss.back());
    return 0;
  }
};

struct TrainPredictorCmd {
  std::string config, data, detector, out, mode = "parallel";
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  bool quiet = false;

  int run() {
    if (detector.empty()) {
      throw Prerequisite("train-predictor needs a trained detector checkpoint (--detector); run train-detector first");
    }
    require_file(detector, "detector checkpoint (run train-detector first)");
    const Mode md = parse_mode(mode);
    const RunConfig cfg = load_config(config);
    Model m = load_model(detector);
    if (!m.detector) throw Prerequisite("'" + detector + "' holds no detector; run train-detector first");
    if (config_to_json(m.config)["detector"] != config_to_json(cfg)["detector"]) {
      throw ConfigError({"detector: section differs from the one stored in '" + detector + "'"});
    }
    m.config = cfg;
    const auto seqs = load_split(data, "train");
    m.detector->set_frozen(true);
    TrainHistory h;
    const auto cb = progress("train-predictor", cfg.training.predictor_epochs, log_every, quiet);
    if (md == Mode::parallel) {
      m.parallel.emplace(cfg.predictor, cfg.detector.keypoints, seed);
      h = train_predictor(*m.parallel, *m.detector, seqs, cfg.training, seed, cb);
      m.seeds["parallel"] = seed;
    } else {
      m.sequential.emplace(cfg.predictor, cfg.detector.keypoints, seed);
      h = train_sequential(*m.sequential, *m.detector, seqs, cfg.training, seed, cb);
      m.seeds["sequential"] = seed;
    }
    save_model(out, m);
    Manifest man("train-predictor", seed, cfg);
    man.option("mode", mode).input("detector", detector).input("train", fs::path(data) / "train.tknseq");
    man.output("checkpoint", out).result("epoch_loss", h.epoch_loss);
    man.write(manifest_path(out));
    std::printf("%s predictor saved to %s (final loss %.6g)\n", to_string(md), out.c_str(),
                h.epoch_loss.empty() ? 0.0 : h.epoch_loss.back());
    return 0;
  }
};

struct PredictCmd {
  std::string model, input, out, mode = "parallel", export_dir;
  std::size_t start = 0, horizon = 0;

  int run() {
    require_file(model, "model checkpoint");
    require_file(input, "input sequence file");
    const Mode md = parse_mode(mode);
    Model m = load_model(model);
    const std::size_t hz = horizon ? horizon : m.config.bench.horizon;
    const auto predict = make_predictor(m, md, hz);
    const auto seqs = load_sequences(input);
    std::vector<Tensor> outs;
    for (const Tensor& s : seqs) outs.push_back(predict(input_window(s, start, m.config.predictor.seq_len)));
    save_sequences(out, outs);
    if (!export_dir.empty()) {
      StagedDir dir(export_dir);
      for (std::size_t i = 0; i < outs.size(); ++i) {
        for (std::size_t f = 0; f < outs[i].dim(0); ++f) {
          const Tensor frame = detail::frame_of(outs[i], f);
          const std::string ext = frame.dim(1) == 1 ? ".pgm" : ".ppm";
          char name[64];
          std::snprintf(name, sizeof name, "seq%04zu_frame%03zu", i, f);
          export_frame_pnm(dir / (name + ext), frame.reshaped({frame.dim(1), frame.dim(2), frame.dim(3)}));
        }
      }
      dir.commit();
    }
    Manifest man("predict", 0, m.config);
    man.option("mode", mode).option("start", start).option("horizon", hz);
    man.input("model", model).input("input", input).output("prediction", out);
    man.write(manifest_path(out));
    std::printf("predicted %zu sequence(s) of %zu frames into %s\n", outs.size(), outs.front().dim(0), out.c_str());
    return 0;
  }
};

struct EvalCmd {
  std::string model, data, out, mode = "parallel";
  std::size_t horizon = 0, reps = 0;

  int run() {
    require_file(model, "model checkpoint");
    const Mode md = parse_mode(mode);
    Model m = load_model(model);
    const RunConfig& c = m.config;
    const std::size_t hz = horizon ? horizon : c.bench.horizon;
    const std::size_t t = c.predictor.seq_len, frames = frames_per_pass(m, md, hz);
    const auto predict = make_predictor(m, md, hz);
    const auto seqs = load_split(data, "test");
    const Quality q = evaluate_prediction(predict, seqs, t, frames);
    const Tensor window = input_window(seqs.front(), 0, t);
    const BenchResult b = benchmark([&] { predict(window); }, frames, c.bench.warmup, reps ? reps : c.bench.repetitions);
    const FlopLedger L = pipeline_ledger(c, md, hz);
    const Json report{{"mode", to_string(md)},
                      {"ssim", q.ssim},
                      {"psnr", q.psnr},
                      {"psnr_cap_db", kPsnrCap},
                      {"latency_ms", bench_json(b)},
                      {"fps", b.fps},
                      {"flops", L.total_flops()},
                      {"params", L.total_params()},
                      {"frames_scored", q.frames},
                      {"predicted_frames", frames},
                      {"ssim_per_step", q.ssim_per_step}};
    write_text_atomic(out, report.dump(2) + "\n");
    Manifest man("eval", 0, c);
    man.option("mode", mode).option("horizon", hz).input("model", model);
    man.input("test", fs::path(data) / "test.tknseq").output("report", out);
    man.write(manifest_path(out));
    std::printf("%s: ssim %.4f psnr %.2f dB latency %.3f ms (p95 %.3f) fps %.1f flops %llu params %llu\n",
                to_string(md), q.ssim, q.psnr, b.median_ms, b.p95_ms, b.fps,
                static_cast<unsigned long long>(L.total_flops()), static_cast<unsigned long long>(L.total_params()));
    return 0;
  }
};

struct BenchCmd {
  std::string model, config, out, mode = "both";
  std::uint64_t seed = 0;
  std::size_t horizon = 0, reps = 0, warmup = 0;

  int run(int threads) {
    Model m;
    if (!model.empty()) {
      require_file(model, "model checkpoint");
      m = load_model(model);
    } else {
      if (config.empty()) throw Prerequisite("bench needs --model or --config");
      m.config = load_config(config);
      m.detector.emplace(m.config.detector, seed);
      m.parallel.emplace(m.config.predictor, m.config.detector.keypoints, seed + 1);
      m.sequential.emplace(m.config.predictor, m.config.detector.keypoints, seed + 2);
    }
    const RunConfig& c = m.config;
    const std::size_t hz = horizon ? horizon : c.bench.horizon, t = c.predictor.seq_len;
    Rng rng(seed);
    const Tensor window = rng.uniform_tensor({t, c.detector.channels, c.detector.height, c.detector.width}, 0, 1);
    std::vector<Mode> modes;
    if (mode == "both") {
      modes = {Mode::parallel, Mode::sequential};
    } else {
      modes = {parse_mode(mode)};
    }
    Json report{{"threads", threads}, {"horizon", hz}, {"modes", Json::object()}};
    std::map<Mode, double> med;
    for (Mode md : modes) {
      const auto predict = make_predictor(m, md, hz);
      const std::size_t frames = frames_per_pass(m, md, hz);
      PassCounters n;
      if (md == Mode::parallel) {
        predict_parallel(*m.detector, *m.parallel, window, &n);
      } else {
        predict_sequential(*m.detector, *m.sequential, window, hz, &n);
      }
      const BenchResult b = benchmark([&] { predict(window); }, frames, warmup ? warmup : c.bench.warmup,
                                      reps ? reps : c.bench.repetitions);
      med[md] = b.median_ms;
      const FlopLedger L = pipeline_ledger(c, md, hz);
      report["modes"][to_string(md)] = Json{{"latency_ms", bench_json(b)},
                                            {"fps", b.fps},
                                            {"frames", frames},
                                            {"repetitions", b.samples_ms.size()},
                                            {"flops", L.total_flops()},
                                            {"params", L.total_params()},
                                            {"passes", {{"encoder", n.encoder}, {"predictor", n.predictor},
                                                        {"decoder", n.decoder}}}};
      std::printf("%-10s median %.3f ms  p95 %.3f ms  fps %.1f  predictor passes %zu\n", to_string(md), b.median_ms,
                  b.p95_ms, b.fps, n.predictor);
    }
    if (med.size() == 2) {
      const double ratio = med[Mode::parallel] / med[Mode::sequential];
      report["parallel_over_sequential"] = ratio;
      std::printf("parallel/sequential median ratio %.3f\n", ratio);
    }
    if (!out.empty()) {
      write_text_atomic(out, report.dump(2) + "\n");
      Manifest man("bench", seed, c);
      man.option("mode", mode).option("horizon", hz);
      if (!model.empty()) man.input("model", model);
      man.output("report", out).write(manifest_path(out));
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-based video prediction: data, training, prediction, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(TKN_VERSION));

  const std::vector<std::string> modes{"parallel", "sequential"};

  GenData gen;
  auto* g = app.add_subcommand("gen-data", "Generate a sprite dataset (train/test .tknseq + manifest)");
  g->add_option("--config", gen.config, "JSON config")->required()->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainDetectorCmd td;
  auto* d = app.add_subcommand("train-detector", "Train the keypoint detector on frame pairs");
  d->add_option("--config", td.config, "JSON config")->required()->check(CLI::ExistingFile);
  d->add_option("--data", td.data, "Dataset directory from gen-data")->required();
  d->add_option("--seed", td.seed, "Initialization and sampling seed");
  d->add_option("--out", td.out, "Checkpoint to write (.tknc)")->required();
  d->add_option("--log-every", td.log_every, "Epochs between progress lines")->check(CLI::PositiveNumber);
  d->add_flag("--quiet", td.quiet, "No progress output");

  TrainPredictorCmd tp;
  auto* p = app.add_subcommand("train-predictor", "Train a predictor on a frozen detector's keypoints");
  p->add_option("--config", tp.config, "JSON config")->required()->check(CLI::ExistingFile);
  p->add_option("--data", tp.data, "Dataset directory from gen-data")->required();
  p->add_option("--detector", tp.detector, "Checkpoint holding the trained detector");
  p->add_option("--mode", tp.mode, "parallel or sequential")->check(CLI::IsMember(modes));
  p->add_option("--seed", tp.seed, "Initialization and sampling seed");
  p->add_option("--out", tp.out, "Checkpoint to write (.tknc)")->required();
  p->add_option("--log-every", tp.log_every, "Epochs between progress lines")->check(CLI::PositiveNumber);
  p->add_flag("--quiet", tp.quiet, "No progress output");

  PredictCmd pr;
  auto* q = app.add_subcommand("predict", "Predict future frames for every sequence in a .tknseq file");
  q->add_option("--model", pr.model, "Trained checkpoint")->required();
  q->add_option("--input", pr.input, "Input .tknseq")->required();
  q->add_option("--mode", pr.mode, "parallel or sequential")->check(CLI::IsMember(modes));
  q->add_option("--start", pr.start, "First input frame");
  q->add_option("--horizon", pr.horizon, "Frames to predict in sequential mode (default bench.horizon)");
  q->add_option("--out", pr.out, "Output .tknseq")->required();
  q->add_option("--export", pr.export_dir, "Also write each predicted frame as PGM/PPM into this directory");

  EvalCmd ev;
  auto* e = app.add_subcommand("eval", "Score predictions on the test split and time the pipeline");
  e->add_option("--model", ev.model, "Trained checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory from gen-data")->required();
  e->add_option("--mode", ev.mode, "parallel or sequential")->check(CLI::IsMember(modes));
  e->add_option("--horizon", ev.horizon, "Frames to predict in sequential mode (default bench.horizon)");
  e->add_option("--repetitions", ev.reps, "Timed runs (>= 100)");
  e->add_option("--out", ev.out, "Report JSON")->required();

  BenchCmd bc;
  auto* b = app.add_subcommand("bench", "Latency of parallel and sequential prediction");
  b->add_option("--model", bc.model, "Trained checkpoint (otherwise random weights from --config)");
  b->add_option("--config", bc.config, "JSON config for random weights")->check(CLI::ExistingFile);
  b->add_option("--mode", bc.mode, "parallel, sequential or both")
      ->check(CLI::IsMember({"parallel", "sequential", "both"}));
  b->add_option("--seed", bc.seed, "Seed for the input window and random weights");
  b->add_option("--horizon", bc.horizon, "Sequential horizon (default bench.horizon)");
  b->add_option("--repetitions", bc.reps, "Timed runs (>= 100)");
  b->add_option("--warmup", bc.warmup, "Untimed runs (>= 10)");
  b->add_option("--out", bc.out, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  const int threads = configure_runtime();
  try {
    if (*g) return gen.run();
    if (*d) return td.run();
    if (*p) return tp.run();
    if (*q) return pr.run();
    if (*e) return ev.run();
    if (*b) return bc.run(threads);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitUsage;
  } catch (const Prerequisite& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitUsage;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitFailure;
  }
  return kExitFailure;
}

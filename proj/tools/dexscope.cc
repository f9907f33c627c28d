// Copyright 2026 The Dexscope Authors
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

// dexscope: generate demonstrations, train the tracker, distill the student,
// evaluate checkpoints and dump trajectories.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dexscope/demos.h"
#include "dexscope/distill.h"
#include "dexscope/errors.h"
#include "dexscope/eval.h"
#include "dexscope/nn.h"
#include "dexscope/ppo.h"

namespace dexscope {
namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericalExit = 3;
constexpr int kIoExit = 4;

struct Globals {
  std::string config;
  uint64_t seed = 0;
  std::string out = ".";
  int threads = 1;
};

PipelineConfig LoadConfig(const Globals& g) {
  PipelineConfig c = g.config.empty()
                         ? PipelineConfig::FromJson(nlohmann::json::object())
                         : PipelineConfig::Load(g.config);
  c.tracker.ppo.threads = g.threads;
  c.distill.threads = g.threads;
  c.eval.threads = g.threads;
  c.Validate();
  return c;
}

std::filesystem::path OutDir(const Globals& g) {
  std::error_code ec;
  std::filesystem::create_directories(g.out, ec);
  if (ec) throw IoError("cannot create '" + g.out + "': " + ec.message());
  return g.out;
}

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void GenDemos(const Globals& g, const std::string& tasks_path) {
  std::vector<TaskSpec> tasks;
  if (tasks_path.empty()) {
    tasks = StandardTasks();
  } else {
    std::ifstream in(tasks_path);
    if (!in) throw IoError("cannot read tasks " + tasks_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("tasks file is not valid JSON: " +
                        std::string(e.what()));
    }
    if (!j.is_array()) throw ConfigError("tasks file must hold an array");
    for (const auto& t : j) tasks.push_back(TaskSpec::FromJson(t));
  }
  const std::vector<ReferenceClip> corpus = GenerateCorpus(tasks, g.seed);
  const auto dir = OutDir(g);
  SaveCorpus(corpus, dir.string());
  nlohmann::json tj = nlohmann::json::array();
  for (const auto& t : tasks) tj.push_back(t.ToJson());
  WriteText(dir / "tasks.json", tj.dump(2) + "\n");
  std::printf("wrote %zu clips to %s\n", corpus.size(), dir.c_str());
}

void TrainTrackerVerb(const Globals& g, const std::string& clips) {
  const PipelineConfig cfg = LoadConfig(g);
  const std::vector<ReferenceClip> corpus = LoadCorpus(clips);
  const auto dir = OutDir(g);
  std::ofstream log(dir / "train_log.csv", std::ios::trunc);
  if (!log) throw IoError("cannot write train_log.csv");
  log << TrainLogHeader() << '\n';
  const TrainResult r =
      TrainTracker(cfg.tracker, corpus, g.seed, [&](const TrainLogRow& row) {
        log << TrainLogLine(row) << '\n' << std::flush;
      });
  r.checkpoint.Save((dir / "tracker.json").string());
  std::printf("wrote %s\n", (dir / "tracker.json").c_str());
}

void DistillVerb(const Globals& g, const std::string& clips,
                 const std::string& teacher_path, double gate) {
  const PipelineConfig cfg = LoadConfig(g);
  const std::vector<ReferenceClip> corpus = LoadCorpus(clips);
  const PolicyCheckpoint teacher = PolicyCheckpoint::Load(teacher_path);
  if (gate > 0.0) {
    const EvalReport report = Evaluate(teacher, corpus, cfg.eval, g.seed);
    const double s = report.aggregate.tracking_success;
    std::printf("teacher tracking success %.3f (gate %.3f)\n", s, gate);
    if (s < gate) {
      throw ConfigError("teacher fails its evaluation gate");
    }
  }
  const auto dir = OutDir(g);
  std::ofstream log(dir / "distill_log.csv", std::ios::trunc);
  if (!log) throw IoError("cannot write distill_log.csv");
  log << DistillLogHeader() << '\n';
  const DistillResult r = DaggerTrain(
      teacher, corpus, cfg.distill, g.seed, [&](const DistillLogRow& row) {
        log << DistillLogLine(row) << '\n' << std::flush;
      });
  r.checkpoint.Save((dir / "student.json").string());
  std::printf("wrote %s\n", (dir / "student.json").c_str());
}

void EvalVerb(const Globals& g, const std::string& clips,
              const std::string& checkpoint) {
  const PipelineConfig cfg = LoadConfig(g);
  const std::vector<ReferenceClip> corpus = LoadCorpus(clips);
  const EvalReport report =
      Evaluate(PolicyCheckpoint::Load(checkpoint), corpus, cfg.eval, g.seed);
  WriteReport(report, OutDir(g).string());
  std::fputs(report.ToCsv().c_str(), stdout);
}

void RolloutVerb(const Globals& g, const std::string& clips,
                 const std::string& checkpoint, int clip) {
  const std::vector<ReferenceClip> corpus = LoadCorpus(clips);
  if (clip < 0 || clip >= static_cast<int>(corpus.size())) {
    throw ConfigError("clip index out of range");
  }
  const PolicyCheckpoint c = PolicyCheckpoint::Load(checkpoint);
  Rng rng(g.seed);
  Rollout r;
  if (c.kind == "student") {
    const Student student = Student::FromCheckpoint(c);
    if (!c.config.contains("tracker")) {
      throw ConfigError("student checkpoint lacks its tracker config");
    }
    const TrackerConfig tcfg = TrackerConfig::FromJson(c.config["tracker"]);
    r = RolloutStudent(student, tcfg, corpus, clip, &rng);
  } else {
    TrackerConfig tcfg;
    const TrackerPolicy policy = LoadTrackerPolicy(c, &tcfg);
    r = RolloutTracker(policy, tcfg, corpus, clip, &rng);
  }
  const auto path = OutDir(g) / "rollout.jsonl";
  WriteText(path, RolloutToJsonl(r));
  std::printf("wrote %zu frames to %s\n", r.frames.size(), path.c_str());
}

int Run(int argc, char** argv) {
  CLI::App app{"Demonstration-guided dexterous manipulation pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration document");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads")
      ->check(CLI::PositiveNumber);

  std::string tasks, clips = "clips", teacher, checkpoint;
  double gate = 0.5;
  int clip = 0;
  auto* gen = app.add_subcommand("gen-demos", "Generate a clip corpus");
  gen->add_option("--tasks", tasks, "JSON array of task specs");
  auto* train = app.add_subcommand("train-tracker", "Train the tracker");
  train->add_option("--clips", clips, "Corpus directory");
  auto* distill = app.add_subcommand("distill", "Distill the student");
  distill->add_option("--clips", clips, "Corpus directory");
  distill->add_option("--teacher", teacher, "Tracker checkpoint")->required();
  distill->add_option("--teacher-gate", gate,
                      "Minimum teacher tracking success (0 disables)");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--clips", clips, "Corpus directory");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  auto* rollout = app.add_subcommand("rollout", "Dump one trajectory");
  rollout->add_option("--clips", clips, "Corpus directory");
  rollout->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  rollout->add_option("--clip", clip, "Clip index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*gen) GenDemos(g, tasks);
    if (*train) TrainTrackerVerb(g, clips);
    if (*distill) DistillVerb(g, clips, teacher, gate);
    if (*eval) EvalVerb(g, clips, checkpoint);
    if (*rollout) RolloutVerb(g, clips, checkpoint, clip);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigExit;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kNumericalExit;
  } catch (const IoError& e) {
    // Includes the version, malformed-record and truncation errors.
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIoExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace
}  // namespace dexscope

int main(int argc, char** argv) { return dexscope::Run(argc, argv); }

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

#ifndef DEXSCOPE_EVAL_H_
#define DEXSCOPE_EVAL_H_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/demos.h"
#include "dexscope/distill.h"
#include "dexscope/nn.h"
#include "dexscope/ppo.h"
#include "dexscope/reward.h"
#include "dexscope/sim.h"

namespace dexscope {

struct EvalConfig {
  int rollouts_per_clip = 1;
  // Frozen envelope that decides tracking success; the contact criterion is
  // off.
  std::array<double, 4> kappa = {0.1, 0.1, 0.1, 0.1};
  bool contact_criterion = false;
  double max_translation_error = 0.10;  // m
  double below_table_margin = 0.01;     // m
  double lift_height = 0.05;            // m
  int hold_steps = 30;
  double rest_speed = 0.05;      // m/s
  double rest_tolerance = 0.01;  // m above the resting height
  int threads = 1;

  void Validate() const;
  nlohmann::json ToJson() const;
  static EvalConfig FromJson(const nlohmann::json& j);
  bool operator==(const EvalConfig&) const = default;
};

// The whole configuration document: {env, robot, reward, rse, ppo, distill,
// eval}, every block optional.
struct PipelineConfig {
  TrackerConfig tracker;
  DistillConfig distill;
  EvalConfig eval;

  void Validate() const;
  nlohmann::json ToJson() const;
  static PipelineConfig FromJson(const nlohmann::json& j);
  static PipelineConfig Load(const std::string& path);
};

struct RolloutFrame {
  int t = 0;
  SimState state;
  Eigen::VectorXd action;  // empty for the first frame
  Eigen::VectorXd eps;     // student episode noise, empty for the tracker
  RewardBreakdown reward;  // against clip frame t; default on the first frame
  bool contacts_match = true;
};

// A policy run from frame 0 to the end of the clip without early stopping.
struct Rollout {
  int clip = 0;
  ObjectShape shape;  // as simulated
  double table_height = 0.0;
  std::vector<RolloutFrame> frames;
  bool aborted = false;  // non-finite simulation

  bool reached_end(const ReferenceClip& clip) const;
};

struct TrackingMetrics {
  std::vector<double> rotation_error;     // rad, per frame
  std::vector<double> translation_error;  // m
  std::vector<double> finger_error;       // m
  double mean_rotation_error = 0.0;
  double mean_translation_error = 0.0;
  double mean_finger_error = 0.0;
};

TrackingMetrics ComputeTrackingMetrics(const Rollout& r,
                                       const ReferenceClip& clip,
                                       const RobotModel& model,
                                       const KeyJointMap& map);
// Replays the frozen envelope over the recorded rewards.
bool TrackingSuccess(const Rollout& r, const ReferenceClip& clip,
                     const TerminationEnvelope& envelope,
                     const EvalConfig& cfg);
bool VisionSuccess(const Rollout& r, const ReferenceClip& clip,
                   const EvalConfig& cfg);
// Fraction of frames at or after grasp onset with any contact flag set.
double ContactRatio(const Rollout& r, const ReferenceClip& clip);

// Deterministic rollouts of the tracker (mean actions) and of the student
// (prior only, camera and eps drawn from rng once per episode).
Rollout RolloutTracker(const TrackerPolicy& policy, const TrackerConfig& cfg,
                       const std::vector<ReferenceClip>& corpus, int clip,
                       Rng* rng);
Rollout RolloutStudent(const Student& student, const TrackerConfig& cfg,
                       const std::vector<ReferenceClip>& corpus, int clip,
                       Rng* rng);

struct EvalRow {
  std::string label;  // clip index or "mean"
  int rollouts = 0;
  int successful = 0;  // tracking successes
  double tracking_success = 0.0;
  double vision_success = 0.0;
  double contact_ratio = 0.0;
  // Averages over all frames of all rollouts.
  double rotation_error_all = 0.0;
  double translation_error_all = 0.0;
  double finger_error_all = 0.0;
  // Averages over tracking-successful rollouts only; empty without any.
  std::optional<double> rotation_error_success;
  std::optional<double> translation_error_success;
  std::optional<double> finger_error_success;
};

struct EvalReport {
  std::string policy;  // "tracker" or "student"
  uint64_t seed = 0;
  int rollouts_per_clip = 0;
  std::vector<EvalRow> clips;
  EvalRow aggregate;  // mean of the per-clip rows

  std::string ToCsv() const;
  nlohmann::json ToJson() const;
};

// Loads the policy from a tracker or student checkpoint and evaluates
// rollouts_per_clip episodes per clip. Throws ConfigError when the
// checkpoint's action dimension does not match its robot.
EvalReport Evaluate(const PolicyCheckpoint& checkpoint,
                    const std::vector<ReferenceClip>& corpus,
                    const EvalConfig& cfg, uint64_t seed);
// Writes <dir>/eval.csv and <dir>/eval.json.
void WriteReport(const EvalReport& report, const std::string& dir);

// Trajectory dump, one JSON record per frame.
std::string RolloutToJsonl(const Rollout& r);

}  // namespace dexscope

#endif  // DEXSCOPE_EVAL_H_

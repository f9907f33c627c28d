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

#ifndef DEXSCOPE_RSE_H_
#define DEXSCOPE_RSE_H_

#include <array>
#include <deque>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dexscope/demos.h"
#include "dexscope/reward.h"
#include "dexscope/rng.h"
#include "dexscope/sim.h"

namespace dexscope {

// Early-termination criteria in checking order. The first four compare a
// reward component with its per-frame threshold.
enum class Criterion {
  kNone = -1,
  kJointPosition = 0,
  kObjectPosition = 1,
  kObjectRotation = 2,
  kSurfaceVector = 3,
  kContact = 4,
};
inline constexpr int kNumThresholds = 4;
const char* CriterionName(Criterion c);

enum class ScheduleMode {
  kFailRatio,     // kappa = kappa_init * fails / total
  kSuccessRatio,  // kappa = kappa_init * (1 - fails / total)
};

struct RseConfig {
  // When false the thresholds stay at kappa_init (fixed tight scope).
  bool adaptive = true;
  ScheduleMode mode = ScheduleMode::kSuccessRatio;
  std::array<double, kNumThresholds> kappa_init = {0.5, 0.5, 0.5, 0.5};
  // Threshold before any statistics exist for a frame, as a fraction of
  // kappa_init.
  double initial_fraction = 0.0;
  double decay = 0.99;
  bool contact_criterion = true;
  int contact_window = 11;
  double priority_epsilon = 0.05;
  double pre_onset_weight = 0.25;
  int cache_capacity = 16;
  double cache_threshold = 0.5;

  void Validate() const;
  nlohmann::json ToJson() const;
  static RseConfig FromJson(const nlohmann::json& j);
  bool operator==(const RseConfig&) const = default;
};

// Per-frame termination thresholds with rollout statistics.
class TerminationEnvelope {
 public:
  TerminationEnvelope() = default;
  TerminationEnvelope(int num_frames, const RseConfig& cfg);
  // Constant thresholds that are never updated.
  static TerminationEnvelope Frozen(int num_frames,
                                    const std::array<double, 4>& kappa,
                                    bool contact_criterion, int window = 11);

  int num_frames() const { return static_cast<int>(n_total_.size()); }
  double kappa(int c, int t) const { return kappa_[c][t]; }
  void set_kappa(int c, int t, double v) { kappa_[c][t] = v; }
  double kappa_init(int c) const { return kappa_init_[c]; }
  double n_fail(int t) const { return n_fail_[t]; }
  double n_total(int t) const { return n_total_[t]; }
  bool contact_criterion() const { return contact_criterion_; }
  int contact_window() const { return window_; }
  double MeanKappa() const;

  // Counts one rollout that visited frames [first, last]; a failure is
  // charged to fail_frame only.
  void RecordRollout(int first, int last, bool failed, int fail_frame);
  // Recomputes thresholds of frames with statistics, then decays counters.
  void Update(ScheduleMode mode, double decay);

  nlohmann::json ToJson() const;
  static TerminationEnvelope FromJson(const nlohmann::json& j);
  bool operator==(const TerminationEnvelope&) const = default;

 private:
  std::array<std::vector<double>, kNumThresholds> kappa_;
  std::array<double, kNumThresholds> kappa_init_ = {};
  std::vector<double> n_fail_;
  std::vector<double> n_total_;
  bool contact_criterion_ = true;
  int window_ = 11;
};

struct Termination {
  bool terminate = false;
  Criterion reason = Criterion::kNone;
};

// Whether every mapped contact flag of the state equals the reference.
bool ContactsMatch(const SimState& s, const RobotModel& model,
                   const ReferenceClip& clip, int t, const KeyJointMap& map);

// `contact_match` holds the most recent match results, newest at the back.
Termination CheckTermination(const RewardBreakdown& b,
                             const TerminationEnvelope& env, int t,
                             const std::deque<bool>& contact_match);

// Wrist at the demonstrator wrist pose of the frame, fingers at zero, object
// at its reference pose, everything at rest.
SimState InitialState(const ReferenceClip& clip, const World& world,
                      int frame);

// Bounded FIFO of good rollout states per frame.
class InitStateCache {
 public:
  InitStateCache() = default;
  InitStateCache(int num_frames, int capacity, double threshold);

  // Stores the state iff quality >= threshold. Returns whether it did.
  bool Insert(int frame, const SimState& s, double quality);
  const std::deque<SimState>& At(int frame) const { return slots_[frame]; }
  int num_frames() const { return static_cast<int>(slots_.size()); }
  size_t TotalSize() const;

 private:
  std::vector<std::deque<SimState>> slots_;
  int capacity_ = 16;
  double threshold_ = 0.5;
};

// Draws an index with probability proportional to the weights; uniform when
// they are all zero.
int SampleIndex(const std::vector<double>& weights, Rng* rng);

std::vector<double> InitPriorities(const TerminationEnvelope& env,
                                   const ReferenceClip& clip,
                                   const RseConfig& cfg);

// Picks a start frame (never the last) by priority and returns a cached
// state for it when one exists, else InitialState.
std::pair<int, SimState> SampleInit(const InitStateCache& cache,
                                    const TerminationEnvelope& env,
                                    const ReferenceClip& clip,
                                    const World& world, const RseConfig& cfg,
                                    Rng* rng);

}  // namespace dexscope

#endif  // DEXSCOPE_RSE_H_

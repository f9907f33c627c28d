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

#include "dexscope/rse.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"

namespace dexscope {

const char* CriterionName(Criterion c) {
  switch (c) {
    case Criterion::kNone:
      return "NONE";
    case Criterion::kJointPosition:
      return "JOINT_POS";
    case Criterion::kObjectPosition:
      return "OBJECT_POS";
    case Criterion::kObjectRotation:
      return "OBJECT_ROT";
    case Criterion::kSurfaceVector:
      return "SURFACE";
    case Criterion::kContact:
      return "CONTACT";
  }
  return "?";
}

void RseConfig::Validate() const {
  for (double k : kappa_init) {
    if (!(k >= 0.0 && k <= 1.0)) {
      throw ConfigError("rse kappa_init entries must lie in [0, 1]");
    }
  }
  if (!(initial_fraction >= 0.0 && initial_fraction <= 1.0)) {
    throw ConfigError("rse initial_fraction must lie in [0, 1]");
  }
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw ConfigError("rse decay must lie in (0, 1]");
  }
  if (contact_window < 1) throw ConfigError("rse contact_window must be >= 1");
  if (!(priority_epsilon >= 0.0) || !(pre_onset_weight >= 0.0)) {
    throw ConfigError("rse priority weights must be >= 0");
  }
  if (cache_capacity < 0) throw ConfigError("rse cache_capacity must be >= 0");
  if (!(cache_threshold >= 0.0 && cache_threshold <= 1.0)) {
    throw ConfigError("rse cache_threshold must lie in [0, 1]");
  }
}

nlohmann::json RseConfig::ToJson() const {
  return {{"adaptive", adaptive},
          {"mode", mode == ScheduleMode::kFailRatio ? "fail_ratio"
                                                    : "success_ratio"},
          {"kappa_init", kappa_init},
          {"initial_fraction", initial_fraction},
          {"decay", decay},
          {"contact_criterion", contact_criterion},
          {"contact_window", contact_window},
          {"priority_epsilon", priority_epsilon},
          {"pre_onset_weight", pre_onset_weight},
          {"cache_capacity", cache_capacity},
          {"cache_threshold", cache_threshold}};
}

RseConfig RseConfig::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j,
                    {"adaptive", "mode", "kappa_init", "initial_fraction",
                     "decay", "contact_criterion", "contact_window",
                     "priority_epsilon", "pre_onset_weight", "cache_capacity",
                     "cache_threshold"},
                    "rse");
  RseConfig c;
  ReadOptional(j, "adaptive", &c.adaptive);
  std::string mode;
  if (ReadOptional(j, "mode", &mode)) {
    if (mode == "fail_ratio") {
      c.mode = ScheduleMode::kFailRatio;
    } else if (mode == "success_ratio") {
      c.mode = ScheduleMode::kSuccessRatio;
    } else {
      throw ConfigError("rse mode must be fail_ratio|success_ratio");
    }
  }
  ReadOptional(j, "kappa_init", &c.kappa_init);
  ReadOptional(j, "initial_fraction", &c.initial_fraction);
  ReadOptional(j, "decay", &c.decay);
  ReadOptional(j, "contact_criterion", &c.contact_criterion);
  ReadOptional(j, "contact_window", &c.contact_window);
  ReadOptional(j, "priority_epsilon", &c.priority_epsilon);
  ReadOptional(j, "pre_onset_weight", &c.pre_onset_weight);
  ReadOptional(j, "cache_capacity", &c.cache_capacity);
  ReadOptional(j, "cache_threshold", &c.cache_threshold);
  c.Validate();
  return c;
}

TerminationEnvelope::TerminationEnvelope(int num_frames, const RseConfig& cfg)
    : kappa_init_(cfg.kappa_init),
      n_fail_(num_frames, 0.0),
      n_total_(num_frames, 0.0),
      contact_criterion_(cfg.contact_criterion),
      window_(cfg.contact_window) {
  const double start = cfg.adaptive ? cfg.initial_fraction : 1.0;
  for (int c = 0; c < kNumThresholds; ++c) {
    kappa_[c].assign(num_frames, start * kappa_init_[c]);
  }
}

TerminationEnvelope TerminationEnvelope::Frozen(
    int num_frames, const std::array<double, 4>& kappa,
    bool contact_criterion, int window) {
  RseConfig cfg;
  cfg.adaptive = false;
  cfg.kappa_init = kappa;
  cfg.contact_criterion = contact_criterion;
  cfg.contact_window = window;
  return TerminationEnvelope(num_frames, cfg);
}

double TerminationEnvelope::MeanKappa() const {
  double sum = 0.0;
  for (const auto& k : kappa_) {
    for (double v : k) sum += v;
  }
  return num_frames() ? sum / (kNumThresholds * num_frames()) : 0.0;
}

void TerminationEnvelope::RecordRollout(int first, int last, bool failed,
                                        int fail_frame) {
  first = std::max(first, 0);
  last = std::min(last, num_frames() - 1);
  for (int t = first; t <= last; ++t) n_total_[t] += 1.0;
  if (failed && fail_frame >= first && fail_frame <= last) {
    n_fail_[fail_frame] += 1.0;
  }
}

void TerminationEnvelope::Update(ScheduleMode mode, double decay) {
  for (int t = 0; t < num_frames(); ++t) {
    if (!(n_total_[t] > 0.0)) continue;
    const double ratio = std::clamp(n_fail_[t] / n_total_[t], 0.0, 1.0);
    const double scale =
        mode == ScheduleMode::kFailRatio ? ratio : 1.0 - ratio;
    for (int c = 0; c < kNumThresholds; ++c) {
      kappa_[c][t] = kappa_init_[c] * scale;
    }
    n_fail_[t] *= decay;
    n_total_[t] *= decay;
  }
}

nlohmann::json TerminationEnvelope::ToJson() const {
  nlohmann::json kappa = nlohmann::json::array();
  for (const auto& k : kappa_) kappa.push_back(k);
  return {{"kappa", kappa},
          {"kappa_init", kappa_init_},
          {"n_fail", n_fail_},
          {"n_total", n_total_},
          {"contact_criterion", contact_criterion_},
          {"contact_window", window_}};
}

TerminationEnvelope TerminationEnvelope::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j,
                    {"kappa", "kappa_init", "n_fail", "n_total",
                     "contact_criterion", "contact_window"},
                    "envelope");
  TerminationEnvelope e;
  try {
    const auto& kappa = j.at("kappa");
    if (kappa.size() != kNumThresholds) {
      throw ConfigError("envelope needs 4 threshold arrays");
    }
    for (int c = 0; c < kNumThresholds; ++c) {
      e.kappa_[c] = kappa[c].get<std::vector<double>>();
    }
    e.kappa_init_ = j.at("kappa_init").get<std::array<double, 4>>();
    e.n_fail_ = j.at("n_fail").get<std::vector<double>>();
    e.n_total_ = j.at("n_total").get<std::vector<double>>();
    e.contact_criterion_ = j.at("contact_criterion").get<bool>();
    e.window_ = j.at("contact_window").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("envelope: ") + ex.what());
  }
  const size_t n = e.n_total_.size();
  for (int c = 0; c < kNumThresholds; ++c) {
    if (e.kappa_[c].size() != n) {
      throw ConfigError("envelope arrays have different lengths");
    }
    for (double k : e.kappa_[c]) {
      if (!(k >= 0.0 && k <= e.kappa_init_[c])) {
        throw ConfigError("envelope threshold outside [0, kappa_init]");
      }
    }
  }
  if (e.n_fail_.size() != n || e.window_ < 1) {
    throw ConfigError("envelope counters are inconsistent");
  }
  for (size_t t = 0; t < n; ++t) {
    if (!(e.n_fail_[t] >= 0.0 && e.n_fail_[t] <= e.n_total_[t])) {
      throw ConfigError("envelope has more failures than rollouts");
    }
  }
  return e;
}

bool ContactsMatch(const SimState& s, const RobotModel& model,
                   const ReferenceClip& clip, int t, const KeyJointMap& map) {
  const KeyJointFeatures cur = ProjectKeyJoints(map, s, model);
  const KeyJointFeatures ref = ProjectKeyJoints(map, clip, t);
  return cur.contact == ref.contact;
}

Termination CheckTermination(const RewardBreakdown& b,
                             const TerminationEnvelope& env, int t,
                             const std::deque<bool>& contact_match) {
  const double values[kNumThresholds] = {b.joint_position, b.object_position,
                                         b.object_rotation, b.surface_vector};
  for (int c = 0; c < kNumThresholds; ++c) {
    if (values[c] < env.kappa(c, t)) {
      return {true, static_cast<Criterion>(c)};
    }
  }
  const int w = env.contact_window();
  if (env.contact_criterion() && static_cast<int>(contact_match.size()) >= w &&
      std::none_of(contact_match.end() - w, contact_match.end(),
                   [](bool m) { return m; })) {
    return {true, Criterion::kContact};
  }
  return {};
}

SimState InitialState(const ReferenceClip& clip, const World& world,
                      int frame) {
  if (clip.frames.empty()) throw ConfigError("empty clip");
  const ReferenceFrame& f = clip.frames.at(frame);
  const Pose2 wrist(f.joint_position[0], f.joint_rotation[0]);
  SimState s = world.MakeState(
      wrist, Eigen::VectorXd::Zero(world.model().num_dofs() - 3),
      f.object_pose);
  s.t = frame;
  return s;
}

InitStateCache::InitStateCache(int num_frames, int capacity, double threshold)
    : slots_(num_frames), capacity_(capacity), threshold_(threshold) {}

bool InitStateCache::Insert(int frame, const SimState& s, double quality) {
  if (capacity_ == 0 || !(quality >= threshold_)) return false;
  if (!s.q.allFinite() || !s.v.allFinite()) return false;
  auto& slot = slots_.at(frame);
  slot.push_back(s);
  if (static_cast<int>(slot.size()) > capacity_) slot.pop_front();
  return true;
}

size_t InitStateCache::TotalSize() const {
  size_t n = 0;
  for (const auto& s : slots_) n += s.size();
  return n;
}

int SampleIndex(const std::vector<double>& weights, Rng* rng) {
  if (weights.empty()) throw ConfigError("cannot sample from no weights");
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) {
    return static_cast<int>(rng->UniformInt(weights.size()));
  }
  const double u = rng->Uniform01() * total;
  double acc = 0.0;
  int last_positive = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

std::vector<double> InitPriorities(const TerminationEnvelope& env,
                                   const ReferenceClip& clip,
                                   const RseConfig& cfg) {
  const int n = std::max(clip.length() - 1, 1);
  std::vector<double> p(n);
  for (int t = 0; t < n; ++t) {
    p[t] = cfg.priority_epsilon +
           env.n_fail(t) / std::max(1.0, env.n_total(t));
    if (t < clip.grasp_onset) p[t] *= cfg.pre_onset_weight;
  }
  return p;
}

std::pair<int, SimState> SampleInit(const InitStateCache& cache,
                                    const TerminationEnvelope& env,
                                    const ReferenceClip& clip,
                                    const World& world, const RseConfig& cfg,
                                    Rng* rng) {
  if (clip.frames.empty()) throw ConfigError("empty clip");
  const int frame = SampleIndex(InitPriorities(env, clip, cfg), rng);
  if (frame < cache.num_frames() && !cache.At(frame).empty()) {
    const auto& slot = cache.At(frame);
    const size_t i = rng->UniformInt(slot.size());
    return {frame, slot[i]};
  }
  return {frame, InitialState(clip, world, frame)};
}

}  // namespace dexscope

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

#include "dexscope/reward.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"

namespace dexscope {

void RewardWeights::Validate() const {
  const double values[] = {joint_position, joint_rotation, object_position,
                           object_rotation, surface_vector, contact,
                           action_change,  acceleration,   velocity,
                           energy_base,    mix[0],         mix[1],
                           mix[2],         mix[3],         mix[4],
                           mix[5]};
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("reward weights must be finite and >= 0");
    }
  }
  if (!(distance_scale > 0.0)) {
    throw ConfigError("reward distance_scale must be > 0");
  }
}

nlohmann::json RewardWeights::ToJson() const {
  return {{"joint_position", joint_position},
          {"joint_rotation", joint_rotation},
          {"object_position", object_position},
          {"object_rotation", object_rotation},
          {"surface_vector", surface_vector},
          {"contact", contact},
          {"mix", std::vector<double>(mix, mix + 6)},
          {"action_change", action_change},
          {"acceleration", acceleration},
          {"velocity", velocity},
          {"energy_base", energy_base},
          {"distance_scale", distance_scale},
          {"distance_modulation", distance_modulation},
          {"distance_source", distance_source == DistanceSource::kReference
                                  ? "reference"
                                  : "rollout"}};
}

RewardWeights RewardWeights::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j,
                    {"joint_position", "joint_rotation", "object_position",
                     "object_rotation", "surface_vector", "contact", "mix",
                     "action_change", "acceleration", "velocity",
                     "energy_base", "distance_scale", "distance_modulation",
                     "distance_source"},
                    "reward");
  RewardWeights w;
  ReadOptional(j, "joint_position", &w.joint_position);
  ReadOptional(j, "joint_rotation", &w.joint_rotation);
  ReadOptional(j, "object_position", &w.object_position);
  ReadOptional(j, "object_rotation", &w.object_rotation);
  ReadOptional(j, "surface_vector", &w.surface_vector);
  ReadOptional(j, "contact", &w.contact);
  std::vector<double> mix;
  if (ReadOptional(j, "mix", &mix)) {
    if (mix.size() != 6) throw ConfigError("reward mix needs 6 entries");
    std::copy(mix.begin(), mix.end(), w.mix);
  }
  ReadOptional(j, "action_change", &w.action_change);
  ReadOptional(j, "acceleration", &w.acceleration);
  ReadOptional(j, "velocity", &w.velocity);
  ReadOptional(j, "energy_base", &w.energy_base);
  ReadOptional(j, "distance_scale", &w.distance_scale);
  ReadOptional(j, "distance_modulation", &w.distance_modulation);
  std::string source;
  if (ReadOptional(j, "distance_source", &source)) {
    if (source == "reference") {
      w.distance_source = DistanceSource::kReference;
    } else if (source == "rollout") {
      w.distance_source = DistanceSource::kRollout;
    } else {
      throw ConfigError("reward distance_source must be reference|rollout");
    }
  }
  w.Validate();
  return w;
}

double DistanceWeight(double d, double d0) {
  return std::clamp(d / d0, 0.0, 1.0);
}

double ReferenceDistanceWeight(const ReferenceClip& clip, int t,
                               const KeyJointMap& map,
                               const RewardWeights& w) {
  if (!w.distance_modulation) return 1.0;
  const KeyJointFeatures ref = ProjectKeyJoints(map, clip, t);
  double sum = 0.0;
  for (double d : ref.surface_distance) sum += d;
  return DistanceWeight(sum / map.size(), w.distance_scale);
}

double EffectiveDistanceWeight(const SimState& s, const ReferenceClip& clip,
                               int t, const KeyJointMap& map,
                               const RewardWeights& w) {
  if (!w.distance_modulation) return 1.0;
  if (w.distance_source == DistanceSource::kReference) {
    return ReferenceDistanceWeight(clip, t, map, w);
  }
  double sum = 0.0;
  for (const auto& [r, d] : map.pairs) sum += s.surface_distance.at(r);
  return DistanceWeight(sum / map.size(), w.distance_scale);
}

void MatchRewards(const SimState& s, const RobotModel& model,
                  const ReferenceClip& clip, int t, const KeyJointMap& map,
                  const RewardWeights& w, double wd, RewardBreakdown* out) {
  const KeyJointFeatures cur = ProjectKeyJoints(map, s, model);
  const KeyJointFeatures ref = ProjectKeyJoints(map, clip, t);
  const ReferenceFrame& f = clip.frames[t];
  double ej = 0.0, er = 0.0, ed = 0.0, ec = 0.0;
  for (int i = 0; i < map.size(); ++i) {
    ej += (ref.position[i] - cur.position[i]).squaredNorm();
    const double dr = RotDiff(ref.rotation[i], cur.rotation[i]).value();
    er += dr * dr;
    ed += (ref.surface_vector[i] - cur.surface_vector[i]).squaredNorm();
    ec += ref.contact[i] != cur.contact[i] ? 1.0 : 0.0;
  }
  ec /= map.size();
  const double dro =
      RotDiff(f.object_pose.rotation, s.object_pose.rotation).value();
  out->joint_position = std::exp(-wd * w.joint_position * ej);
  out->joint_rotation = std::exp(-wd * w.joint_rotation * er);
  out->object_position = std::exp(
      -w.object_position *
      (f.object_pose.position - s.object_pose.position).squaredNorm());
  out->object_rotation = std::exp(-w.object_rotation * dro * dro);
  out->surface_vector = std::exp(-w.surface_vector * ed);
  out->contact = std::exp(-w.contact * ec);
}

double EnergyMultiplier(double wd, const RewardWeights& w) {
  return w.energy_base + (1.0 - wd);
}

double EnergyPenalty(const Eigen::VectorXd& cmd, const Eigen::VectorXd& prev,
                     const Eigen::VectorXd& velocity,
                     const Eigen::VectorXd& acceleration,
                     const RewardWeights& w, double wd) {
  if (cmd.size() != prev.size()) {
    throw ConfigError("energy penalty: command sizes differ");
  }
  return -EnergyMultiplier(wd, w) *
         (w.action_change * (cmd - prev).squaredNorm() +
          w.acceleration * acceleration.squaredNorm() +
          w.velocity * velocity.squaredNorm());
}

double TotalReward(const RewardBreakdown& b, const RewardWeights& w) {
  return w.mix[0] * b.joint_position + w.mix[1] * b.joint_rotation +
         w.mix[2] * b.object_position + w.mix[3] * b.object_rotation +
         w.mix[4] * b.surface_vector + w.mix[5] * b.contact + b.energy;
}

RewardBreakdown ComputeReward(const SimState& s, const RobotModel& model,
                              const ReferenceClip& clip, int t,
                              const KeyJointMap& map, const RewardWeights& w,
                              const Eigen::VectorXd& cmd,
                              const Eigen::VectorXd& prev_cmd,
                              const Eigen::VectorXd& prev_velocity,
                              double control_dt) {
  RewardBreakdown b;
  b.distance_weight = EffectiveDistanceWeight(s, clip, t, map, w);
  b.energy_multiplier = EnergyMultiplier(b.distance_weight, w);
  MatchRewards(s, model, clip, t, map, w, b.distance_weight, &b);
  const Eigen::VectorXd acc = (s.v - prev_velocity) / control_dt;
  b.energy = EnergyPenalty(cmd, prev_cmd, s.v, acc, w, b.distance_weight);
  b.total = TotalReward(b, w);
  return b;
}

}  // namespace dexscope

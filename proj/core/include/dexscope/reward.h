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

#ifndef DEXSCOPE_REWARD_H_
#define DEXSCOPE_REWARD_H_

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/demos.h"
#include "dexscope/robot.h"
#include "dexscope/sim.h"

namespace dexscope {

// Source of the hand-object distance used by the distance weight.
enum class DistanceSource { kReference, kRollout };

struct RewardWeights {
  double joint_position = 50.0;    // 1/m^2
  double joint_rotation = 2.0;     // 1/rad^2
  double object_position = 100.0;  // 1/m^2
  double object_rotation = 2.0;    // 1/rad^2
  double surface_vector = 100.0;   // 1/m^2
  double contact = 0.5;
  // Mixing coefficients for the six matching terms, in breakdown order.
  double mix[6] = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
  double action_change = 0.05;
  double acceleration = 1e-4;
  double velocity = 1e-3;
  double energy_base = 0.1;
  double distance_scale = 0.20;  // m
  // When false the distance weight is pinned to 1.
  bool distance_modulation = true;
  DistanceSource distance_source = DistanceSource::kReference;

  // Throws ConfigError.
  void Validate() const;
  nlohmann::json ToJson() const;
  static RewardWeights FromJson(const nlohmann::json& j);
  bool operator==(const RewardWeights&) const = default;
};

struct RewardBreakdown {
  double joint_position = 1.0;   // R_J
  double joint_rotation = 1.0;   // R_R
  double object_position = 1.0;  // R_p^o
  double object_rotation = 1.0;  // R_R^o
  double surface_vector = 1.0;   // R_D
  double contact = 1.0;          // R_C
  double energy = 0.0;
  double distance_weight = 1.0;     // w(D)
  double energy_multiplier = 0.0;  // w_E0 + (1 - w(D))
  double total = 0.0;
};

// clamp(d / d0, 0, 1).
double DistanceWeight(double d, double d0);

// w(D) at reference frame t: the mean signed distance of the demonstrator
// key joints, so it depends on the clip and t only.
double ReferenceDistanceWeight(const ReferenceClip& clip, int t,
                               const KeyJointMap& map,
                               const RewardWeights& w);

// w(D) per the weights' distance source and modulation switch.
double EffectiveDistanceWeight(const SimState& s, const ReferenceClip& clip,
                               int t, const KeyJointMap& map,
                               const RewardWeights& w);

// Fills the six matching terms, comparing s with reference frame t. The hand
// kinematic weights are scaled by wd.
void MatchRewards(const SimState& s, const RobotModel& model,
                  const ReferenceClip& clip, int t, const KeyJointMap& map,
                  const RewardWeights& w, double wd, RewardBreakdown* out);

double EnergyMultiplier(double wd, const RewardWeights& w);

// -(w_E0 + 1 - wd) (w_da |a - a_prev|^2 + w_acc |acc|^2 + w_vel |vel|^2).
double EnergyPenalty(const Eigen::VectorXd& cmd, const Eigen::VectorXd& prev,
                     const Eigen::VectorXd& velocity,
                     const Eigen::VectorXd& acceleration,
                     const RewardWeights& w, double wd);

// sum_i mix_i * component_i + energy.
double TotalReward(const RewardBreakdown& b, const RewardWeights& w);

// Full evaluation for one control step. `prev_velocity` is the generalized
// velocity before the step; the acceleration is the finite difference over
// control_dt.
RewardBreakdown ComputeReward(const SimState& s, const RobotModel& model,
                              const ReferenceClip& clip, int t,
                              const KeyJointMap& map, const RewardWeights& w,
                              const Eigen::VectorXd& cmd,
                              const Eigen::VectorXd& prev_cmd,
                              const Eigen::VectorXd& prev_velocity,
                              double control_dt);

}  // namespace dexscope

#endif  // DEXSCOPE_REWARD_H_

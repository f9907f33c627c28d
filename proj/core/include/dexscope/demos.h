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

#ifndef DEXSCOPE_DEMOS_H_
#define DEXSCOPE_DEMOS_H_

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/geom.h"
#include "dexscope/rng.h"
#include "dexscope/robot.h"
#include "dexscope/shape.h"
#include "dexscope/sim.h"

namespace dexscope {

// Kinematic three-finger demonstrator: joint 0 is the wrist, then thumb
// (1-4), index (5-8) and middle (9-12) with three revolute joints and a tip
// each. Every finger joint is independently articulated.
struct DemoHand {
  static constexpr int kNumJoints = 13;
  static constexpr int kNumFingers = 3;
  static constexpr int kThumbTip = 4;
  static constexpr int kIndexTip = 8;
  static constexpr int kMiddleTip = 12;

  double palm_length = 0.05;
  double base_offset[kNumFingers] = {0.05, 0.0, -0.05};
  // Curl direction of each finger (+1 rotates towards +y of the wrist).
  double curl_sign[kNumFingers] = {-1.0, 1.0, 1.0};
  double link_length[3] = {0.045, 0.035, 0.03};
  // Share of a finger's closure assigned to each of its joints.
  double curl_share[3] = {0.45, 0.35, 0.2};
  double link_radius = 0.008;

  static const std::vector<std::string>& JointNames();
  // First joint id of finger f (its base joint); tip is FingerBase(f) + 3.
  static int FingerBase(int f) { return 1 + 4 * f; }

  // Joint world rotations and positions for a wrist pose and one closure
  // angle per finger.
  void Pose(const Pose2& wrist, const double closure[kNumFingers],
            std::vector<Angle>* rotations, std::vector<Vec2>* positions) const;
};

struct TaskSpec {
  ObjectShape shape = ObjectShape::Circle(0.03);
  Pose2 start;
  Pose2 goal;
  double duration = 4.0;  // s
  double fps = 30.0;
  double lift_height = 0.10;
  double approach_height = 0.12;
  double jitter = 0.0;            // m, uniform per coordinate
  double penetration_bias = 0.0;  // m, into the object while in contact
  double max_reach = 0.5;         // m, largest start-goal distance
  // Phase boundaries as fractions of the clip.
  double approach_end = 0.25;
  double grasp_end = 0.375;
  double transport_end = 0.75;
  double release_end = 0.85;

  // Throws ConfigError, including for an out-of-reach goal.
  void Validate() const;
  int NumFrames() const;
  nlohmann::json ToJson() const;
  static TaskSpec FromJson(const nlohmann::json& j);
  // Object resting on the table line y = 0 at horizontal position x.
  static Pose2 RestingPose(const ObjectShape& shape, double x,
                           double rotation = 0.0);
  bool operator==(const TaskSpec&) const = default;
};

struct ReferenceFrame {
  std::vector<Angle> joint_rotation;  // R^h, per demonstrator joint.
  std::vector<Vec2> joint_position;   // J^h.
  Pose2 object_pose;                  // R^o, p^o.
  std::vector<Vec2> surface_vector;   // D, per demonstrator joint.
  std::vector<double> surface_distance;
  std::vector<bool> contact;  // C, per distal link (thumb, index, middle).
  bool operator==(const ReferenceFrame&) const = default;
};

struct KeyJointMap {
  // (robot joint id, demonstrator joint id).
  std::vector<std::pair<int, int>> pairs;

  static KeyJointMap Default();
  int size() const { return static_cast<int>(pairs.size()); }
  // Throws ConfigError for invalid or repeated ids.
  void Validate(int robot_joints, int demo_joints) const;
  bool operator==(const KeyJointMap&) const = default;
};

struct ReferenceClip {
  static constexpr int kVersion = 1;

  double fps = 30.0;
  ObjectShape shape;
  TaskSpec task;
  int grasp_onset = 0;
  // Contact flag index of each demonstrator joint, or -1.
  std::vector<int> joint_contact_flag;
  KeyJointMap map_hint;
  std::vector<ReferenceFrame> frames;

  int length() const { return static_cast<int>(frames.size()); }
  // Throws ConfigError when the invariants do not hold.
  void Validate() const;
  bool operator==(const ReferenceClip&) const = default;
};

ReferenceClip GenerateDemo(const TaskSpec& task, Rng* rng);

// Standard corpus: circle (r 0.03 m), square (0.05 m) and thin bar
// (0.08 x 0.015 m), each moved to three goals, once clean and once with
// 3 mm noise. 18 tasks.
std::vector<TaskSpec> StandardTasks();
// One clip per task, each with its own generator forked from `seed`.
std::vector<ReferenceClip> GenerateCorpus(const std::vector<TaskSpec>& tasks,
                                          uint64_t seed);

// JSONL: a header record then one record per frame. Load errors:
// VersionError, MalformedRecordError (with frame index), TruncatedFileError,
// IoError for unreadable paths.
void SaveClip(const ReferenceClip& clip, const std::string& path);
ReferenceClip LoadClip(const std::string& path);
// A corpus directory holds clip_000.jsonl, clip_001.jsonl, ... Loading reads
// every clip_*.jsonl in name order; an empty or missing directory is an
// IoError.
void SaveCorpus(const std::vector<ReferenceClip>& corpus,
                const std::string& dir);
std::vector<ReferenceClip> LoadCorpus(const std::string& dir);

// Key-joint features in map order.
struct KeyJointFeatures {
  std::vector<Angle> rotation;
  std::vector<Vec2> position;
  std::vector<Vec2> surface_vector;
  std::vector<double> surface_distance;
  std::vector<bool> contact;
};

KeyJointFeatures ProjectKeyJoints(const KeyJointMap& map, const SimState& s,
                                  const RobotModel& model);
KeyJointFeatures ProjectKeyJoints(const KeyJointMap& map,
                                  const ReferenceClip& clip, int frame);

// Goal horizons in control steps.
inline const std::vector<int>& DefaultHorizons() {
  static const std::vector<int> k = {1, 5, 15};
  return k;
}

// Concatenation over k of: key-joint rotation deltas, key-joint position
// deltas, object rotation and position deltas, D deltas (vector and signed
// distance), C deltas, then the absolute future reference pose (all
// demonstrator joint rotations and positions, object rotation and position).
// Everything is expressed relative to the current robot wrist.
int GoalFeatureSize(int map_size, int num_horizons);
Eigen::VectorXd GoalFeatures(const SimState& s, const RobotModel& model,
                             const ReferenceClip& clip, int t,
                             const std::vector<int>& horizons,
                             const KeyJointMap& map);

}  // namespace dexscope

#endif  // DEXSCOPE_DEMOS_H_

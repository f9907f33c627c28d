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

#ifndef DEXSCOPE_TESTS_UNIT_FIXTURES_H_
#define DEXSCOPE_TESTS_UNIT_FIXTURES_H_

#include "dexscope/demos.h"
#include "dexscope/rng.h"
#include "dexscope/sim.h"

namespace dexscope::testing {

inline TaskSpec CircleTask(double jitter = 0.0, double bias = 0.0) {
  TaskSpec t;
  t.shape = ObjectShape::Circle(0.03);
  t.start = TaskSpec::RestingPose(t.shape, 0.0);
  t.goal = TaskSpec::RestingPose(t.shape, 0.2, 0.5);
  t.jitter = jitter;
  t.penetration_bias = bias;
  return t;
}

inline ReferenceClip CircleClip(uint64_t seed = 1, double jitter = 0.0) {
  Rng rng(seed);
  return GenerateDemo(CircleTask(jitter), &rng);
}

inline World GripperWorld(const ObjectShape& shape = ObjectShape::Circle(0.03)) {
  return World(RobotModel::DefaultGripper(), shape, EnvParams());
}

// Copies the mapped key-joint features and the object pose of clip frame i
// into a gripper state, so that every matching error is zero.
inline SimState MatchFrame(const World& world, const SimState& base,
                           const ReferenceClip& clip, int i,
                           const KeyJointMap& map) {
  SimState s = base;
  const ReferenceFrame& f = clip.frames[i];
  for (const auto& [r, d] : map.pairs) {
    s.joint_rotation[r] = f.joint_rotation[d];
    s.joint_position[r] = f.joint_position[d];
    s.surface_vector[r] = f.surface_vector[d];
    s.surface_distance[r] = f.surface_distance[d];
    const int flag = clip.joint_contact_flag[d];
    s.contact[world.model().joint_link(r)] = flag >= 0 && f.contact[flag];
  }
  s.object_pose = f.object_pose;
  return s;
}

inline SimState SomeState(const World& world) {
  return world.MakeState(Pose2(0.02, 0.2, -1.4),
                         Eigen::VectorXd::Constant(4, 0.3),
                         TaskSpec::RestingPose(world.shape(), 0.01));
}

}  // namespace dexscope::testing

#endif  // DEXSCOPE_TESTS_UNIT_FIXTURES_H_

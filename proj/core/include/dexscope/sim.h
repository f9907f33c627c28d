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

#ifndef DEXSCOPE_SIM_H_
#define DEXSCOPE_SIM_H_

#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/geom.h"
#include "dexscope/rng.h"
#include "dexscope/robot.h"
#include "dexscope/shape.h"

namespace dexscope {

struct UniformRange {
  double low = 0.0;
  double high = 0.0;
  bool operator==(const UniformRange&) const = default;
};

struct Randomization {
  bool enabled = true;
  // Multiplicative scales on the nominal value, except shape_scale (absolute
  // factor on the object outline) and point_noise (absolute amplitude, m).
  UniformRange friction_scale{0.7, 1.1};
  UniformRange restitution_scale{0.7, 1.1};
  UniformRange density_scale{0.5, 2.0};
  UniformRange shape_scale{0.512, 1.0};
  UniformRange point_noise{0.0, 0.01};
  bool operator==(const Randomization&) const = default;
};

struct EnvParams {
  double gravity = 9.81;
  double sim_dt = 1.0 / 60.0;
  double control_dt = 1.0 / 30.0;
  int substeps = 8;
  double friction = 0.9;
  double restitution = 0.7;
  double density = 50.0;  // kg/m^2
  double contact_offset = 0.02;
  double contact_stiffness = 5000.0;
  double contact_damping = 50.0;
  // Slip speed below which Coulomb friction is treated as viscous.
  double friction_velocity = 0.002;
  double shape_scale = 1.0;
  double point_noise = 0.0;
  double table_height = 0.0;
  bool table = true;
  Randomization randomization;

  // Throws ConfigError.
  void Validate() const;
  int SimStepsPerControl() const;
  // Damping actually applied: the nominal damping is calibrated for the
  // nominal restitution 0.7 and scales with (1 - e).
  double EffectiveDamping() const;

  nlohmann::json ToJson() const;
  static EnvParams FromJson(const nlohmann::json& j);
  bool operator==(const EnvParams&) const = default;
};

// Residual wrist offset (in the current wrist frame) and absolute targets for
// the actuated finger joints.
struct PdCommand {
  Vec2 wrist_offset = Vec2::Zero();
  double wrist_rotation = 0.0;
  Eigen::VectorXd finger_targets;

  Eigen::VectorXd ToVector() const;
  static PdCommand FromVector(const Eigen::VectorXd& v);
};

struct SimState {
  // Hand generalized coordinates and velocities (see RobotModel).
  Eigen::VectorXd q;
  Eigen::VectorXd v;
  Pose2 object_pose;
  double object_omega = 0.0;
  Vec2 object_velocity = Vec2::Zero();

  // Derived per joint: world rotation, position, angular and linear velocity.
  std::vector<Angle> joint_rotation;
  std::vector<Vec2> joint_position;
  std::vector<double> joint_omega;
  std::vector<Vec2> joint_velocity;
  // Per joint: vector to the nearest object surface point and the signed
  // distance (negative inside the object).
  std::vector<Vec2> surface_vector;
  std::vector<double> surface_distance;
  // Per link: peak normal force against the object during the last sim step.
  std::vector<double> contact_force;
  std::vector<bool> contact;

  int t = 0;
  // Deepest contact penetration seen during the last control step.
  double max_penetration = 0.0;

  Pose2 WristPose() const { return Pose2(q[0], q[1], q[2]); }
  bool operator==(const SimState& o) const;
};

struct SurfaceVectors {
  std::vector<Vec2> vectors;
  std::vector<double> distances;
};

// A robot, one object, a table line and fixed physical parameters.
class World {
 public:
  // `shape` is the nominal outline; params.shape_scale is applied here.
  World(RobotModel model, const ObjectShape& shape, EnvParams params);

  const RobotModel& model() const { return model_; }
  const ObjectShape& shape() const { return shape_; }
  const EnvParams& params() const { return params_; }
  double object_mass() const { return object_mass_; }
  double object_inertia() const { return object_inertia_; }

  // State at rest with the given wrist pose, revolute joint angles (size
  // num_dofs - 3) and object pose.
  SimState MakeState(const Pose2& wrist, const Eigen::VectorXd& joint_angles,
                     const Pose2& object) const;
  // Advances one control step. Throws NumericalError on non-finite state.
  SimState Step(const SimState& state, const PdCommand& cmd) const;
  // Recomputes joint kinematics and surface vectors from q, v, object pose.
  void Refresh(SimState* state) const;

  // Capsule endpoints of every link in world coordinates.
  std::vector<std::pair<Vec2, Vec2>> LinkSegments(const SimState& s) const;

 private:
  void Substep(SimState* s, const Eigen::Vector3d& wrist_target,
               const Eigen::VectorXd& joint_targets, double h,
               bool record_forces) const;

  RobotModel model_;
  ObjectShape shape_;
  EnvParams params_;
  double object_mass_ = 0.0;
  double object_inertia_ = 0.0;
};

// Free-function forms of the World API.
Eigen::VectorXd ApplyMimic(const RobotModel& model,
                           const Eigen::VectorXd& actuated_targets);
SimState Step(const SimState& state, const PdCommand& cmd,
              const EnvParams& params, const RobotModel& model,
              const ObjectShape& shape);
// One entry per joint; joint -> nearest surface point of the object.
SurfaceVectors NearestSurfaceVectors(const SimState& state,
                                     const RobotModel& model,
                                     const ObjectShape& shape);
std::vector<bool> ContactFlags(const SimState& state, const RobotModel& model);
EnvParams Randomize(const EnvParams& params, Rng* rng);
// Fan of `n_rays` rays centred on the camera heading. Returns object hits
// that are not occluded by the hand, perturbed by uniform noise of amplitude
// params.point_noise (rng may be null when the amplitude is zero).
std::vector<Vec2> RaycastDepth(const SimState& state, const World& world,
                               const Pose2& camera, double fov, int n_rays,
                               Rng* rng);

}  // namespace dexscope

#endif  // DEXSCOPE_SIM_H_

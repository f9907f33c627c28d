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

#ifndef DEXSCOPE_ROBOT_H_
#define DEXSCOPE_ROBOT_H_

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/geom.h"

namespace dexscope {

enum class JointType { kFloating, kRevolute, kFixed };

// Capsule collision link rigidly attached to the frame of joint `joint`.
struct Link {
  std::string name;
  int joint = 0;
  Vec2 start = Vec2::Zero();  // Segment endpoints in the joint frame.
  Vec2 end = Vec2::Zero();
  double radius = 0.0;
  double mass = 0.0;
  Vec2 com = Vec2::Zero();
  double inertia = 0.0;  // About the centre of mass.
};

struct Joint {
  std::string name;
  JointType type = JointType::kRevolute;
  int parent = -1;
  Vec2 offset = Vec2::Zero();  // Origin in the parent frame.
  double axis = 1.0;           // +1 or -1: sign of rotation per unit angle.
  bool actuated = false;
  double lower = -kPi;
  double upper = kPi;
  double effort = 1.0;  // Torque limit (N m).
};

struct MimicCoupling {
  int driver = 0;
  int mimic = 0;
  double coefficient = 1.0;
};

struct PdGains {
  double kp_linear = 100.0;  // N/m
  double kd_linear = 10.0;   // N s/m
  double kp_angular = 100.0;  // N m/rad
  double kd_angular = 10.0;
  // Finger joints keep the wrist's kd/kp = 0.1 s time constant at a tenth of
  // the stiffness, sized for the short finger levers.
  double kp_joint = 10.0;
  double kd_joint = 1.0;
  double force_limit = 20.0;   // Wrist translation (N).
  double torque_limit = 10.0;  // Wrist rotation (N m).
};

// Planar articulated hand with a floating root (joint 0). Generalized
// coordinates are [x, y, theta] of the root followed by one angle per
// revolute joint, in joint order.
class RobotModel {
 public:
  RobotModel() = default;
  // Validates and derives index tables; throws ConfigError.
  RobotModel(std::string name, std::vector<Link> links,
             std::vector<Joint> joints, std::vector<MimicCoupling> mimics,
             std::vector<int> key_joints, PdGains gains);

  // Two fingers with two links each, the distal link mimic-coupled to the
  // proximal one; key joints are the fingertips.
  static RobotModel DefaultGripper();

  const std::string& name() const { return name_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<MimicCoupling>& mimics() const { return mimics_; }
  const std::vector<int>& key_joints() const { return key_joints_; }
  const PdGains& gains() const { return gains_; }

  int num_joints() const { return static_cast<int>(joints_.size()); }
  int num_links() const { return static_cast<int>(links_.size()); }
  int num_dofs() const { return num_dofs_; }
  int num_actuated() const { return static_cast<int>(actuated_.size()); }
  // Joint ids of actuated revolute joints, in joint order.
  const std::vector<int>& actuated() const { return actuated_; }
  // Generalized-coordinate index of a joint (-1 for fixed, 0 for the root).
  int dof(int joint) const { return dof_[joint]; }
  // Joint whose dof is `dof_index` (>= 3).
  int dof_joint(int dof_index) const { return dof_joint_[dof_index]; }
  // Link carrying the frame of `joint` (walks up through fixed joints).
  int joint_link(int joint) const { return joint_link_[joint]; }
  // Revolute joints on the path root -> joint (inclusive), root first.
  const std::vector<int>& revolute_chain(int joint) const {
    return chains_[joint];
  }
  int FindJoint(const std::string& name) const;

  // Full per-revolute-joint target vector from actuated targets; mimic joint
  // target = coefficient * driver target. Indexed by dof - 3.
  Eigen::VectorXd ApplyMimic(const Eigen::VectorXd& actuated_targets) const;

  nlohmann::json ToJson() const;
  // Throws ConfigError on schema or consistency violations.
  static RobotModel FromJson(const nlohmann::json& j);

 private:
  static RobotModel ParseRobot(const nlohmann::json& j);
  void Build();

  std::string name_;
  std::vector<Link> links_;
  std::vector<Joint> joints_;
  std::vector<MimicCoupling> mimics_;
  std::vector<int> key_joints_;
  PdGains gains_;

  int num_dofs_ = 0;
  std::vector<int> actuated_;
  std::vector<int> dof_;
  std::vector<int> dof_joint_;
  std::vector<int> joint_link_;
  std::vector<std::vector<int>> chains_;
  // For every revolute joint (indexed by dof - 3): actuated slot or -1, and
  // mimic source slot / coefficient.
  std::vector<int> actuated_slot_;
  std::vector<int> mimic_source_;
  std::vector<double> mimic_coefficient_;
};

// Forward kinematics of a configuration: frame poses and velocities of every
// joint plus the velocity-product (bias) acceleration of each frame origin.
struct FrameState {
  Vec2 position = Vec2::Zero();
  double angle = 0.0;  // Unwrapped sum of joint angles.
  double omega = 0.0;
  Vec2 velocity = Vec2::Zero();
  Vec2 bias_accel = Vec2::Zero();
};

struct HandKinematics {
  std::vector<FrameState> frames;

  // World position / velocity / bias acceleration of a point fixed in the
  // frame of `joint` at local coordinates `local`.
  Vec2 Point(int joint, const Vec2& local) const;
  Vec2 PointVelocity(int joint, const Vec2& world_point) const;
};

HandKinematics ComputeKinematics(const RobotModel& model,
                                 const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& v);

// 2 x num_dofs Jacobian of a world point rigidly attached to `joint`.
void PointJacobian(const RobotModel& model, const HandKinematics& kin,
                   int joint, const Vec2& world_point,
                   Eigen::Matrix<double, 2, Eigen::Dynamic>* jac);

// Joint-space mass matrix and velocity-product bias forces.
void MassMatrixAndBias(const RobotModel& model, const HandKinematics& kin,
                       Eigen::MatrixXd* mass, Eigen::VectorXd* bias);

}  // namespace dexscope

#endif  // DEXSCOPE_ROBOT_H_

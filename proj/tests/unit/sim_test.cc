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

#include "dexscope/sim.h"

#include <cmath>

#include <Eigen/Cholesky>

#include "dexscope/errors.h"
#include "gtest/gtest.h"

namespace dexscope {
namespace {

RobotModel GripperWithMimic(double coefficient) {
  const RobotModel base = RobotModel::DefaultGripper();
  return RobotModel("custom", base.links(), base.joints(),
                    {{1, 2, coefficient}, {4, 5, coefficient}},
                    base.key_joints(), base.gains());
}

PdCommand ZeroCommand(const RobotModel& model) {
  PdCommand c;
  c.finger_targets = Eigen::VectorXd::Zero(model.num_actuated());
  return c;
}

// Residual command that drives the wrist back to `pose`.
PdCommand HoldCommand(const RobotModel& model, const SimState& s,
                      const Pose2& pose) {
  PdCommand c = ZeroCommand(model);
  c.wrist_offset =
      VectorToFrame(s.WristPose(), pose.position - s.WristPose().position);
  c.wrist_rotation = RotDiff(pose.rotation, s.WristPose().rotation).value();
  return c;
}

EnvParams QuietParams() {
  EnvParams p;
  p.randomization.enabled = false;
  return p;
}

TEST(ApplyMimicTest, ScalesDriverTarget) {
  Eigen::VectorXd targets(2);
  targets << 0.5, -0.25;
  Eigen::VectorXd full = GripperWithMimic(1.2).ApplyMimic(targets);
  ASSERT_EQ(full.size(), 4);
  EXPECT_DOUBLE_EQ(full[0], 0.5);
  EXPECT_DOUBLE_EQ(full[1], 0.6);
  EXPECT_DOUBLE_EQ(full[3], -0.3);
  full = GripperWithMimic(0.0).ApplyMimic(targets);
  EXPECT_EQ(full[1], 0.0);
  full = GripperWithMimic(1.0).ApplyMimic(targets);
  EXPECT_EQ(full[1], full[0]);
}

TEST(ApplyMimicTest, IsLinear) {
  const RobotModel m = GripperWithMimic(0.7);
  const Eigen::Vector2d a(0.3, -1.1), b(0.9, 0.4);
  const Eigen::VectorXd lhs = m.ApplyMimic(2.0 * a - 3.0 * b);
  const Eigen::VectorXd rhs = 2.0 * m.ApplyMimic(a) - 3.0 * m.ApplyMimic(b);
  EXPECT_LE((lhs - rhs).norm(), 1e-15);
}

TEST(ApplyMimicTest, RejectsWrongLength) {
  EXPECT_THROW(RobotModel::DefaultGripper().ApplyMimic(Eigen::VectorXd(3)),
               ConfigError);
}

TEST(RobotModelTest, RejectsInvalidModels) {
  const RobotModel base = RobotModel::DefaultGripper();
  // Mimic joint that is actuated.
  EXPECT_THROW(RobotModel("x", base.links(), base.joints(), {{1, 4, 1.0}},
                          base.key_joints(), base.gains()),
               ConfigError);
  // Non-finite coefficient.
  EXPECT_THROW(RobotModel("x", base.links(), base.joints(),
                          {{1, 2, std::nan("")}}, base.key_joints(),
                          base.gains()),
               ConfigError);
  // Bad key joint.
  EXPECT_THROW(RobotModel("x", base.links(), base.joints(), base.mimics(),
                          {3, 42}, base.gains()),
               ConfigError);
  // Parent after child (cycle-free ordering violated).
  std::vector<Joint> joints = base.joints();
  joints[1].parent = 5;
  EXPECT_THROW(RobotModel("x", base.links(), joints, base.mimics(),
                          base.key_joints(), base.gains()),
               ConfigError);
}

TEST(RobotModelTest, JsonRoundTrip) {
  const RobotModel m = RobotModel::DefaultGripper();
  const RobotModel back = RobotModel::FromJson(m.ToJson());
  EXPECT_EQ(back.ToJson(), m.ToJson());
  nlohmann::json j = m.ToJson();
  j["mimic"]["nonexistent"] = nlohmann::json::array();
  EXPECT_THROW(RobotModel::FromJson(j), ConfigError);
  j = m.ToJson();
  j["extra"] = 1;
  EXPECT_THROW(RobotModel::FromJson(j), ConfigError);
}

TEST(KinematicsTest, BiasAccelerationMatchesFiniteDifference) {
  const RobotModel m = RobotModel::DefaultGripper();
  Eigen::VectorXd q(7), v(7);
  q << 0.1, 0.2, 0.3, 0.4, -0.2, 0.8, 0.1;
  v << 0.5, -0.3, 1.7, -2.0, 0.9, 1.3, -0.4;
  const double eps = 1e-6;
  const HandKinematics k0 = ComputeKinematics(m, q, v);
  const HandKinematics kp = ComputeKinematics(m, q + eps * v, v);
  const HandKinematics km = ComputeKinematics(m, q - eps * v, v);
  for (int j = 0; j < m.num_joints(); ++j) {
    const Vec2 fd =
        (kp.frames[j].velocity - km.frames[j].velocity) / (2.0 * eps);
    EXPECT_LE((fd - k0.frames[j].bias_accel).norm(), 1e-6) << "joint " << j;
  }
}

TEST(KinematicsTest, JacobianMatchesFrameVelocity) {
  const RobotModel m = RobotModel::DefaultGripper();
  Eigen::VectorXd q(7), v(7);
  q << -0.4, 0.7, -2.0, 1.0, 0.3, 0.2, 1.4;
  v << 0.1, 0.2, -0.3, 0.4, -0.5, 0.6, 0.7;
  const HandKinematics k = ComputeKinematics(m, q, v);
  Eigen::Matrix<double, 2, Eigen::Dynamic> jac;
  for (int j = 0; j < m.num_joints(); ++j) {
    const Vec2 p = k.Point(j, Vec2(0.01, -0.02));
    PointJacobian(m, k, j, p, &jac);
    EXPECT_LE((jac * v - k.PointVelocity(j, p)).norm(), 1e-12);
  }
  Eigen::MatrixXd mass;
  Eigen::VectorXd bias;
  MassMatrixAndBias(m, k, &mass, &bias);
  EXPECT_LE((mass - mass.transpose()).norm(), 1e-12);
  EXPECT_GT(mass.llt().matrixL().toDenseMatrix().diagonal().minCoeff(), 0.0);
}

class SimTest : public ::testing::Test {
 protected:
  SimTest() : model_(RobotModel::DefaultGripper()) {}

  // Hand parked far from the object, fingers straight.
  SimState FarState(const World& world, const Pose2& object) const {
    return world.MakeState(Pose2(5.0, 5.0, 0.0), Eigen::VectorXd::Zero(4),
                           object);
  }

  RobotModel model_;
};

TEST_F(SimTest, BallisticVelocityChange) {
  EnvParams p = QuietParams();
  p.table = false;
  const World world(model_, ObjectShape::Circle(0.03), p);
  const SimState s0 = FarState(world, Pose2(0.0, 1.0, 0.0));
  const SimState s1 = world.Step(s0, ZeroCommand(model_));
  // Oracle: free fall for one control period.
  const double expected = -p.gravity * p.control_dt;
  EXPECT_NEAR(s1.object_velocity.y() - s0.object_velocity.y(), expected, 1e-6);
  EXPECT_NEAR(expected, -0.327, 1e-12);
  EXPECT_EQ(s1.object_velocity.x(), 0.0);
  EXPECT_EQ(s1.t, 1);
}

TEST_F(SimTest, RestIsFixedPoint) {
  EnvParams p = QuietParams();
  p.gravity = 0.0;
  const World world(model_, ObjectShape::Box(0.05, 0.05), p);
  const SimState s0 =
      world.MakeState(Pose2(0.0, 0.3, -kPi / 2), Eigen::VectorXd::Zero(4),
                      Pose2(0.4, 0.1, 0.2));
  SimState s = s0;
  for (int i = 0; i < 30; ++i) s = world.Step(s, ZeroCommand(model_));
  EXPECT_LE((s.q - s0.q).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(s.v.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((s.object_pose.position - s0.object_pose.position).norm(), 1e-9);
  EXPECT_LE(std::abs(s.object_omega), 1e-9);
}

TEST_F(SimTest, ObjectRestsOnFingerLink) {
  EnvParams p = QuietParams();
  p.table = false;
  const World world(model_, ObjectShape::Box(0.03, 0.02), p);
  // Fingers point along +x; finger 1's distal link spans x in [0.1, 0.14]
  // at height 0.3 + 0.055. The box sits on top of it.
  const double link_top = 0.3 + 0.055 + 0.008;
  const Pose2 wrist(0.0, 0.3, 0.0);
  SimState s = world.MakeState(wrist, Eigen::VectorXd::Zero(4),
                               Pose2(0.125, link_top + 0.01, 0.0));
  double worst = 0.0;
  for (int i = 0; i < 90; ++i) {
    s = world.Step(s, HoldCommand(model_, s, wrist));
    worst = std::max(worst, s.max_penetration);
  }
  EXPECT_LE(worst, p.contact_offset);
  // Static equilibrium oracle: the spring carries the weight.
  const double weight = world.object_mass() * p.gravity;
  EXPECT_LE(s.max_penetration, 2.0 * weight / p.contact_stiffness);
  EXPECT_LT(s.object_velocity.norm(), 1e-3);
  const std::vector<bool> flags = ContactFlags(s, model_);
  EXPECT_EQ(flags, (std::vector<bool>{false, false, true, false, false}));
  EXPECT_EQ(s.contact, flags);
}

TEST_F(SimTest, SeparatedHandHasNoContacts) {
  const World world(model_, ObjectShape::Circle(0.03), QuietParams());
  SimState s = FarState(world, Pose2(0.0, 0.03, 0.0));
  s = world.Step(s, ZeroCommand(model_));
  for (bool c : ContactFlags(s, model_)) EXPECT_FALSE(c);
}

TEST_F(SimTest, GrazingPassHasNoForce) {
  EnvParams p = QuietParams();
  p.gravity = 0.0;
  p.table = false;
  const World world(model_, ObjectShape::Circle(0.03), p);
  // Object slides past the fingertip with a gap larger than the radius.
  SimState s = world.MakeState(Pose2(0.0, 0.0, 0.0), Eigen::VectorXd::Zero(4),
                               Pose2(0.075, 0.055 + 0.008 + 0.03 + 1e-4, 0.0));
  s.object_velocity = Vec2(0.3, 0.0);
  for (int i = 0; i < 20; ++i) {
    s = world.Step(s, ZeroCommand(model_));
    for (bool c : ContactFlags(s, model_)) EXPECT_FALSE(c);
  }
}

TEST_F(SimTest, MomentumConservedWithoutForces) {
  EnvParams p = QuietParams();
  p.gravity = 0.0;
  p.friction = 0.0;
  p.table = false;
  const World world(model_, ObjectShape::Box(0.05, 0.03), p);
  SimState s = FarState(world, Pose2(0.0, 0.0, 0.0));
  s.object_velocity = Vec2(0.1, -0.05);
  s.object_omega = 0.7;
  const Vec2 momentum0 = world.object_mass() * s.object_velocity;
  for (int i = 0; i < 1000; ++i) s = world.Step(s, ZeroCommand(model_));
  const Vec2 momentum1 = world.object_mass() * s.object_velocity;
  EXPECT_LE((momentum1 - momentum0).norm(), 1e-8);
}

TEST_F(SimTest, FingerReachesTarget) {
  EnvParams p = QuietParams();
  p.table = false;
  const World world(model_, ObjectShape::Circle(0.03), p);
  SimState s = FarState(world, Pose2(0.0, 0.0, 0.0));
  PdCommand c = ZeroCommand(model_);
  c.finger_targets << 0.5, 0.2;
  for (int i = 0; i < 60; ++i) s = world.Step(s, c);
  EXPECT_NEAR(s.q[3], 0.5, 1e-3);
  EXPECT_NEAR(s.q[4], 0.5, 1e-3);  // Mimic follows its driver.
  EXPECT_NEAR(s.q[5], 0.2, 1e-3);
}

TEST_F(SimTest, WristOffsetIsInWristFrame) {
  EnvParams p = QuietParams();
  p.table = false;
  const World world(model_, ObjectShape::Circle(0.03), p);
  SimState s = world.MakeState(Pose2(0.0, 0.0, kPi / 2),
                               Eigen::VectorXd::Zero(4), Pose2(3, 3, 0));
  PdCommand c = ZeroCommand(model_);
  c.wrist_offset = Vec2(0.02, 0.0);
  s = world.Step(s, c);
  EXPECT_GT(s.q[1], 1e-3);
  EXPECT_LT(std::abs(s.q[0]), 1e-9);
}

TEST_F(SimTest, DeterministicSequences) {
  const World world(model_, ObjectShape::Box(0.05, 0.05), QuietParams());
  auto run = [&]() {
    SimState s = world.MakeState(Pose2(0.0, 0.12, -kPi / 2),
                                 Eigen::VectorXd::Zero(4),
                                 Pose2(0.0, 0.025, 0.0));
    PdCommand c = ZeroCommand(model_);
    std::vector<SimState> out;
    for (int i = 0; i < 40; ++i) {
      c.finger_targets << 0.03 * i, 0.025 * i;
      c.wrist_offset = Vec2(0.001 * (i % 3), 0.0);
      s = world.Step(s, c);
      out.push_back(s);
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST_F(SimTest, NonFiniteStateAborts) {
  const World world(model_, ObjectShape::Circle(0.03), QuietParams());
  SimState s = FarState(world, Pose2(0.0, 0.5, 0.0));
  s.object_velocity.x() = std::nan("");
  EXPECT_THROW(world.Step(s, ZeroCommand(model_)), NumericalError);
}

TEST(NearestSurfaceTest, CircleExamples) {
  const RobotModel m = RobotModel::DefaultGripper();
  SimState s;
  s.object_pose = Pose2();
  s.joint_position.assign(m.num_joints(), Vec2(100.0, 0.0));
  s.joint_position[3] = Vec2(0.0, 2.0);
  s.joint_position[6] = Vec2(3.0, 4.0);
  s.joint_position[0] = Vec2(0.0, 0.0);
  const SurfaceVectors sv =
      NearestSurfaceVectors(s, m, ObjectShape::Circle(1.0));
  EXPECT_LE((sv.vectors[3] - Vec2(0.0, -1.0)).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(sv.distances[3], 1.0);
  EXPECT_LE((sv.vectors[6] - Vec2(-2.4, -3.2)).norm(), 1e-12);
  EXPECT_DOUBLE_EQ(sv.distances[6], 4.0);
  EXPECT_EQ(sv.vectors[0], Vec2(1.0, 0.0));
  EXPECT_EQ(sv.distances[0], -1.0);
}

TEST(RandomizeTest, DegenerateRangeIsExact) {
  EnvParams p;
  p.friction = 1.0;
  p.randomization.friction_scale = {0.9, 0.9};
  Rng rng(1);
  EXPECT_EQ(Randomize(p, &rng).friction, 0.9);
}

TEST(RandomizeTest, FrictionWithinTableBounds) {
  EnvParams p;
  Rng rng(2);
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < 100000; ++i) {
    const EnvParams r = Randomize(p, &rng);
    lo = std::min(lo, r.friction);
    hi = std::max(hi, r.friction);
    ASSERT_GE(r.shape_scale, 0.512);
    ASSERT_LE(r.shape_scale, 1.0);
    ASSERT_GE(r.density, 25.0);
    ASSERT_LE(r.density, 100.0);
    ASSERT_LE(r.point_noise, 0.01);
  }
  EXPECT_GE(lo, 0.7 * p.friction);
  EXPECT_LE(hi, 1.1 * p.friction);
  EXPECT_LT(lo, 0.71 * p.friction);
  EXPECT_GT(hi, 1.09 * p.friction);
}

TEST(RandomizeTest, SameSeedSameParams) {
  EnvParams p;
  Rng a(42), b(42);
  EXPECT_EQ(Randomize(p, &a), Randomize(p, &b));
}

TEST(RandomizeTest, RejectsInvertedRange) {
  EnvParams p;
  p.randomization.density_scale = {2.0, 0.5};
  Rng rng(0);
  EXPECT_THROW(Randomize(p, &rng), ConfigError);
}

TEST(EnvParamsTest, JsonRoundTripAndValidation) {
  EnvParams p;
  p.friction = 0.5;
  p.randomization.point_noise = {0.0, 0.002};
  EXPECT_EQ(EnvParams::FromJson(p.ToJson()), p);
  nlohmann::json j = p.ToJson();
  j["sim_dt"] = 0.025;  // 1/30 is not a multiple of 0.025.
  EXPECT_THROW(EnvParams::FromJson(j), ConfigError);
  j = p.ToJson();
  j["substeps"] = 0;
  EXPECT_THROW(EnvParams::FromJson(j), ConfigError);
  j = p.ToJson();
  j["bogus"] = true;
  EXPECT_THROW(EnvParams::FromJson(j), ConfigError);
}

class RaycastTest : public ::testing::Test {
 protected:
  RaycastTest()
      : model_(RobotModel::DefaultGripper()),
        world_(model_, ObjectShape::Circle(0.05), QuietParams()) {}

  RobotModel model_;
  World world_;
};

TEST_F(RaycastTest, EmptySceneGivesNoPoints) {
  const SimState s = world_.MakeState(
      Pose2(5.0, 5.0, 0.0), Eigen::VectorXd::Zero(4), Pose2(0.0, 0.3, 0.0));
  // Camera looks away from the object.
  const auto pts = RaycastDepth(s, world_, Pose2(0.0, 1.0, kPi / 2), 0.8, 64,
                                nullptr);
  EXPECT_TRUE(pts.empty());
}

TEST_F(RaycastTest, OnlyCameraFacingArcVisible) {
  const Vec2 center(0.0, 0.3);
  const SimState s = world_.MakeState(
      Pose2(5.0, 5.0, 0.0), Eigen::VectorXd::Zero(4), Pose2(center, Angle()));
  const auto pts = RaycastDepth(s, world_, Pose2(0.0, 1.0, -kPi / 2), 0.3,
                                128, nullptr);
  ASSERT_FALSE(pts.empty());
  for (const Vec2& p : pts) {
    EXPECT_NEAR((p - center).norm(), 0.05, 1e-9);
    // Oracle: a camera at distance 0.7 sees only points whose outward
    // normal has a positive component towards it.
    EXPECT_GT(p.y(), center.y());
  }
}

TEST_F(RaycastTest, OccludedByHandLink) {
  const Vec2 center(0.0, 0.3);
  // Palm capsule lies across the line of sight between camera and object:
  // wrist frame rotated so the palm segment runs along x at y = 0.5.
  const SimState s =
      world_.MakeState(Pose2(0.0, 0.45, kPi / 2), Eigen::VectorXd::Zero(4),
                       Pose2(center, Angle()));
  const auto pts = RaycastDepth(s, world_, Pose2(0.0, 1.0, -kPi / 2), 0.05,
                                32, nullptr);
  EXPECT_TRUE(pts.empty());
}

TEST_F(RaycastTest, NoiseBoundedByAmplitude) {
  EnvParams p = QuietParams();
  p.point_noise = 0.004;
  const World world(model_, ObjectShape::Circle(0.05), p);
  const SimState s = world.MakeState(
      Pose2(5.0, 5.0, 0.0), Eigen::VectorXd::Zero(4), Pose2(0.0, 0.3, 0.0));
  Rng rng(3);
  const auto pts =
      RaycastDepth(s, world, Pose2(0.0, 1.0, -kPi / 2), 0.3, 64, &rng);
  ASSERT_FALSE(pts.empty());
  for (const Vec2& q : pts) {
    EXPECT_LE(std::abs((q - Vec2(0.0, 0.3)).norm() - 0.05), 0.004 * std::sqrt(2.0) + 1e-12);
  }
}

}  // namespace
}  // namespace dexscope

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

#include "dexscope/robot.h"

#include <cmath>
#include <set>
#include <utility>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"

namespace dexscope {
namespace {

constexpr int kSchemaVersion = 1;

const char* JointTypeName(JointType t) {
  switch (t) {
    case JointType::kFloating:
      return "floating";
    case JointType::kRevolute:
      return "revolute";
    case JointType::kFixed:
      return "fixed";
  }
  return "?";
}

JointType ParseJointType(const std::string& s) {
  if (s == "floating") return JointType::kFloating;
  if (s == "revolute") return JointType::kRevolute;
  if (s == "fixed") return JointType::kFixed;
  throw ConfigError("unknown joint type '" + s + "'");
}

Link Capsule(std::string name, int joint, double length, double radius,
             double mass) {
  Link l;
  l.name = std::move(name);
  l.joint = joint;
  l.start = Vec2::Zero();
  l.end = Vec2(length, 0.0);
  l.radius = radius;
  l.mass = mass;
  l.com = Vec2(0.5 * length, 0.0);
  l.inertia = mass * (length * length + 3.0 * radius * radius) / 12.0;
  return l;
}

}  // namespace

RobotModel::RobotModel(std::string name, std::vector<Link> links,
                       std::vector<Joint> joints,
                       std::vector<MimicCoupling> mimics,
                       std::vector<int> key_joints, PdGains gains)
    : name_(std::move(name)),
      links_(std::move(links)),
      joints_(std::move(joints)),
      mimics_(std::move(mimics)),
      key_joints_(std::move(key_joints)),
      gains_(gains) {
  Build();
}

void RobotModel::Build() {
  const int nj = num_joints();
  if (nj == 0 || joints_[0].type != JointType::kFloating ||
      joints_[0].parent != -1) {
    throw ConfigError("joint 0 must be the floating root without parent");
  }
  std::set<std::string> names;
  dof_.assign(nj, -1);
  dof_joint_.assign(3, 0);
  chains_.assign(nj, {});
  num_dofs_ = 3;
  dof_[0] = 0;
  actuated_.clear();
  for (int i = 0; i < nj; ++i) {
    const Joint& jt = joints_[i];
    if (!names.insert(jt.name).second) {
      throw ConfigError("duplicate joint name '" + jt.name + "'");
    }
    if (i == 0) continue;
    // Parents must precede children, which also rules out cycles.
    if (jt.parent < 0 || jt.parent >= i) {
      throw ConfigError("joint '" + jt.name + "' must have an earlier parent");
    }
    if (jt.type == JointType::kFloating) {
      throw ConfigError("only the root joint may be floating");
    }
    if (!jt.offset.allFinite()) throw ConfigError("non-finite joint offset");
    chains_[i] = chains_[jt.parent];
    if (jt.type == JointType::kRevolute) {
      if (std::abs(std::abs(jt.axis) - 1.0) > 0.0) {
        throw ConfigError("joint axis must be +1 or -1");
      }
      if (!(jt.lower <= jt.upper) || !(jt.effort > 0.0)) {
        throw ConfigError("joint '" + jt.name + "' has invalid limits");
      }
      dof_[i] = num_dofs_++;
      dof_joint_.push_back(i);
      chains_[i].push_back(i);
      if (jt.actuated) actuated_.push_back(i);
    } else if (jt.actuated) {
      throw ConfigError("fixed joint '" + jt.name + "' cannot be actuated");
    }
  }

  joint_link_.assign(nj, -1);
  for (int l = num_links() - 1; l >= 0; --l) {
    const Link& link = links_[l];
    if (link.joint < 0 || link.joint >= nj) {
      throw ConfigError("link '" + link.name + "' references invalid joint");
    }
    if (!(link.radius > 0.0) || !(link.mass > 0.0) || !(link.inertia >= 0.0)) {
      throw ConfigError("link '" + link.name + "' has invalid mass/shape");
    }
    joint_link_[link.joint] = l;
  }
  for (int i = 1; i < nj; ++i) {
    if (joint_link_[i] < 0) joint_link_[i] = joint_link_[joints_[i].parent];
  }

  const int nr = num_dofs_ - 3;
  actuated_slot_.assign(nr, -1);
  mimic_source_.assign(nr, -1);
  mimic_coefficient_.assign(nr, 0.0);
  for (int a = 0; a < num_actuated(); ++a) actuated_slot_[dof_[actuated_[a]] - 3] = a;
  for (const MimicCoupling& m : mimics_) {
    if (m.driver < 0 || m.driver >= nj || m.mimic < 0 || m.mimic >= nj) {
      throw ConfigError("mimic coupling references unknown joint");
    }
    const Joint& d = joints_[m.driver];
    const Joint& mj = joints_[m.mimic];
    if (d.type != JointType::kRevolute || !d.actuated) {
      throw ConfigError("mimic driver '" + d.name + "' must be actuated");
    }
    if (mj.type != JointType::kRevolute || mj.actuated) {
      throw ConfigError("mimic joint '" + mj.name +
                        "' must be an unactuated revolute joint");
    }
    if (!std::isfinite(m.coefficient)) {
      throw ConfigError("mimic coefficient must be finite");
    }
    const int slot = dof_[m.mimic] - 3;
    if (mimic_source_[slot] >= 0) {
      throw ConfigError("joint '" + mj.name + "' is mimicked twice");
    }
    mimic_source_[slot] = actuated_slot_[dof_[m.driver] - 3];
    mimic_coefficient_[slot] = m.coefficient;
  }
  for (int k : key_joints_) {
    if (k < 0 || k >= nj) throw ConfigError("invalid key-joint id");
  }
  const PdGains& g = gains_;
  for (double v : {g.kp_linear, g.kd_linear, g.kp_angular, g.kd_angular,
                   g.kp_joint, g.kd_joint, g.force_limit, g.torque_limit}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("PD gains and limits must be finite and >= 0");
    }
  }
}

int RobotModel::FindJoint(const std::string& name) const {
  for (int i = 0; i < num_joints(); ++i) {
    if (joints_[i].name == name) return i;
  }
  throw ConfigError("unknown joint '" + name + "'");
}

Eigen::VectorXd RobotModel::ApplyMimic(
    const Eigen::VectorXd& actuated_targets) const {
  if (actuated_targets.size() != num_actuated()) {
    throw ConfigError("actuated target vector has wrong length");
  }
  const int nr = num_dofs_ - 3;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nr);
  for (int s = 0; s < nr; ++s) {
    if (actuated_slot_[s] >= 0) {
      out[s] = actuated_targets[actuated_slot_[s]];
    } else if (mimic_source_[s] >= 0) {
      out[s] = mimic_coefficient_[s] * actuated_targets[mimic_source_[s]];
    }
  }
  return out;
}

RobotModel RobotModel::DefaultGripper() {
  constexpr double kPalmLength = 0.05;
  constexpr double kHalfWidth = 0.055;
  constexpr double kProximal = 0.05;
  constexpr double kDistal = 0.04;
  constexpr double kRadius = 0.008;
  constexpr double kLinkMass = 0.03;

  std::vector<Joint> joints(7);
  joints[0] = {"wrist", JointType::kFloating, -1, Vec2::Zero(), 1.0, true,
               -kPi, kPi, 1.0};
  // Finger 1 sits on the +y side and flexes towards -y; finger 2 mirrors it.
  joints[1] = {"f1_prox", JointType::kRevolute, 0, Vec2(kPalmLength, kHalfWidth),
               -1.0, true, -0.3, 1.6, 1.0};
  joints[2] = {"f1_dist", JointType::kRevolute, 1, Vec2(kProximal, 0.0), -1.0,
               false, -0.3, 1.6, 1.0};
  joints[3] = {"f1_tip", JointType::kFixed, 2, Vec2(kDistal, 0.0), 1.0, false,
               0.0, 0.0, 1.0};
  joints[4] = {"f2_prox", JointType::kRevolute, 0,
               Vec2(kPalmLength, -kHalfWidth), 1.0, true, -0.3, 1.6, 1.0};
  joints[5] = {"f2_dist", JointType::kRevolute, 4, Vec2(kProximal, 0.0), 1.0,
               false, -0.3, 1.6, 1.0};
  joints[6] = {"f2_tip", JointType::kFixed, 5, Vec2(kDistal, 0.0), 1.0, false,
               0.0, 0.0, 1.0};

  std::vector<Link> links;
  Link palm;
  palm.name = "palm";
  palm.joint = 0;
  palm.start = Vec2(kPalmLength, -kHalfWidth);
  palm.end = Vec2(kPalmLength, kHalfWidth);
  palm.radius = 0.012;
  palm.mass = 0.5;
  palm.com = Vec2(0.5 * kPalmLength, 0.0);
  palm.inertia = 2e-3;
  links.push_back(palm);
  links.push_back(Capsule("f1_proximal", 1, kProximal, kRadius, kLinkMass));
  links.push_back(Capsule("f1_distal", 2, kDistal, kRadius, kLinkMass));
  links.push_back(Capsule("f2_proximal", 4, kProximal, kRadius, kLinkMass));
  links.push_back(Capsule("f2_distal", 5, kDistal, kRadius, kLinkMass));

  return RobotModel("planar_gripper", std::move(links), std::move(joints),
                    {{1, 2, 1.0}, {4, 5, 1.0}}, {3, 6}, PdGains{});
}

nlohmann::json RobotModel::ToJson() const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["name"] = name_;
  j["links"] = nlohmann::json::array();
  for (const Link& l : links_) {
    j["links"].push_back({{"name", l.name},
                          {"joint", joints_[l.joint].name},
                          {"start", VecToJson(l.start)},
                          {"end", VecToJson(l.end)},
                          {"radius", l.radius},
                          {"mass", l.mass},
                          {"com", VecToJson(l.com)},
                          {"inertia", l.inertia}});
  }
  j["joints"] = nlohmann::json::array();
  for (const Joint& jt : joints_) {
    nlohmann::json e = {{"name", jt.name},
                        {"type", JointTypeName(jt.type)},
                        {"offset", VecToJson(jt.offset)},
                        {"axis", jt.axis},
                        {"actuated", jt.actuated},
                        {"lower", jt.lower},
                        {"upper", jt.upper},
                        {"effort", jt.effort}};
    e["parent"] = jt.parent < 0 ? nlohmann::json(nullptr)
                                : nlohmann::json(joints_[jt.parent].name);
    j["joints"].push_back(e);
  }
  j["mimic"] = nlohmann::json::object();
  for (const MimicCoupling& m : mimics_) {
    j["mimic"][joints_[m.driver].name].push_back(
        {{"joint", joints_[m.mimic].name}, {"coefficient", m.coefficient}});
  }
  j["key_joints"] = nlohmann::json::array();
  for (int k : key_joints_) j["key_joints"].push_back(joints_[k].name);
  j["pd_gains"] = {{"kp_linear", gains_.kp_linear},
                   {"kd_linear", gains_.kd_linear},
                   {"kp_angular", gains_.kp_angular},
                   {"kd_angular", gains_.kd_angular},
                   {"kp_joint", gains_.kp_joint},
                   {"kd_joint", gains_.kd_joint},
                   {"force_limit", gains_.force_limit},
                   {"torque_limit", gains_.torque_limit}};
  return j;
}

RobotModel RobotModel::FromJson(const nlohmann::json& j) {
  try {
    return ParseRobot(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("robot: ") + e.what());
  }
}

RobotModel RobotModel::ParseRobot(const nlohmann::json& j) {
  RejectUnknownKeys(j, {"schema_version", "name", "links", "joints", "mimic",
                        "key_joints", "pd_gains"},
                    "robot");
  if (ReadRequired<int>(j, "schema_version") != kSchemaVersion) {
    throw ConfigError("unsupported robot schema_version");
  }
  std::string name = "robot";
  ReadOptional(j, "name", &name);

  std::vector<Joint> joints;
  const nlohmann::json& jj = j.at("joints");
  if (!jj.is_array()) throw ConfigError("robot.joints must be an array");
  auto find = [&joints](const std::string& n) {
    for (size_t i = 0; i < joints.size(); ++i) {
      if (joints[i].name == n) return static_cast<int>(i);
    }
    throw ConfigError("unknown joint '" + n + "'");
  };
  for (const auto& e : jj) {
    RejectUnknownKeys(e, {"name", "type", "parent", "offset", "axis",
                          "actuated", "lower", "upper", "effort"},
                      "robot.joints[]");
    Joint jt;
    jt.name = ReadRequired<std::string>(e, "name");
    jt.type = ParseJointType(ReadRequired<std::string>(e, "type"));
    if (e.contains("parent") && !e["parent"].is_null()) {
      // Parents must already be declared.
      jt.parent = find(e["parent"].get<std::string>());
    }
    if (e.contains("offset")) jt.offset = VecFromJson(e["offset"]);
    ReadOptional(e, "axis", &jt.axis);
    ReadOptional(e, "actuated", &jt.actuated);
    ReadOptional(e, "lower", &jt.lower);
    ReadOptional(e, "upper", &jt.upper);
    ReadOptional(e, "effort", &jt.effort);
    joints.push_back(jt);
  }

  std::vector<Link> links;
  for (const auto& e : j.at("links")) {
    RejectUnknownKeys(e, {"name", "joint", "start", "end", "radius", "mass",
                          "com", "inertia"},
                      "robot.links[]");
    Link l;
    l.name = ReadRequired<std::string>(e, "name");
    l.joint = find(ReadRequired<std::string>(e, "joint"));
    l.start = VecFromJson(e.at("start"));
    l.end = VecFromJson(e.at("end"));
    l.radius = ReadRequired<double>(e, "radius");
    l.mass = ReadRequired<double>(e, "mass");
    l.com = e.contains("com") ? VecFromJson(e["com"]) : Vec2(0.5 * (l.start + l.end));
    l.inertia = ReadRequired<double>(e, "inertia");
    links.push_back(l);
  }

  std::vector<MimicCoupling> mimics;
  if (j.contains("mimic")) {
    for (const auto& item : j["mimic"].items()) {
      const int driver = find(item.key());
      for (const auto& e : item.value()) {
        RejectUnknownKeys(e, {"joint", "coefficient"}, "robot.mimic[]");
        mimics.push_back({driver, find(ReadRequired<std::string>(e, "joint")),
                          ReadRequired<double>(e, "coefficient")});
      }
    }
  }
  std::vector<int> keys;
  for (const auto& k : j.at("key_joints")) keys.push_back(find(k.get<std::string>()));

  PdGains g;
  if (j.contains("pd_gains")) {
    const auto& e = j["pd_gains"];
    RejectUnknownKeys(e, {"kp_linear", "kd_linear", "kp_angular", "kd_angular",
                          "kp_joint", "kd_joint", "force_limit",
                          "torque_limit"},
                      "robot.pd_gains");
    ReadOptional(e, "kp_linear", &g.kp_linear);
    ReadOptional(e, "kd_linear", &g.kd_linear);
    ReadOptional(e, "kp_angular", &g.kp_angular);
    ReadOptional(e, "kd_angular", &g.kd_angular);
    ReadOptional(e, "kp_joint", &g.kp_joint);
    ReadOptional(e, "kd_joint", &g.kd_joint);
    ReadOptional(e, "force_limit", &g.force_limit);
    ReadOptional(e, "torque_limit", &g.torque_limit);
  }
  return RobotModel(std::move(name), std::move(links), std::move(joints),
                    std::move(mimics), std::move(keys), g);
}

Vec2 HandKinematics::Point(int joint, const Vec2& local) const {
  const FrameState& f = frames[joint];
  return f.position + Rotation(f.angle) * local;
}

Vec2 HandKinematics::PointVelocity(int joint, const Vec2& world_point) const {
  const FrameState& f = frames[joint];
  return f.velocity + f.omega * Perp(world_point - f.position);
}

HandKinematics ComputeKinematics(const RobotModel& model,
                                 const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& v) {
  HandKinematics kin;
  const int nj = model.num_joints();
  kin.frames.resize(nj);
  FrameState& root = kin.frames[0];
  root.position = Vec2(q[0], q[1]);
  root.angle = q[2];
  root.velocity = Vec2(v[0], v[1]);
  root.omega = v[2];
  for (int i = 1; i < nj; ++i) {
    const Joint& jt = model.joints()[i];
    const FrameState& p = kin.frames[jt.parent];
    FrameState& f = kin.frames[i];
    const Vec2 r = Rotation(p.angle) * jt.offset;
    f.position = p.position + r;
    f.velocity = p.velocity + p.omega * Perp(r);
    f.bias_accel = p.bias_accel - p.omega * p.omega * r;
    f.angle = p.angle;
    f.omega = p.omega;
    const int d = model.dof(i);
    if (jt.type == JointType::kRevolute) {
      f.angle += jt.axis * q[d];
      f.omega += jt.axis * v[d];
    }
  }
  return kin;
}

void PointJacobian(const RobotModel& model, const HandKinematics& kin,
                   int joint, const Vec2& world_point,
                   Eigen::Matrix<double, 2, Eigen::Dynamic>* jac) {
  jac->setZero(2, model.num_dofs());
  (*jac)(0, 0) = 1.0;
  (*jac)(1, 1) = 1.0;
  jac->col(2) = Perp(world_point - kin.frames[0].position);
  for (int j : model.revolute_chain(joint)) {
    jac->col(model.dof(j)) =
        model.joints()[j].axis * Perp(world_point - kin.frames[j].position);
  }
}

void MassMatrixAndBias(const RobotModel& model, const HandKinematics& kin,
                       Eigen::MatrixXd* mass, Eigen::VectorXd* bias) {
  const int n = model.num_dofs();
  mass->setZero(n, n);
  bias->setZero(n);
  Eigen::Matrix<double, 2, Eigen::Dynamic> jac(2, n);
  Eigen::RowVectorXd jw(n);
  for (const Link& link : model.links()) {
    const FrameState& f = kin.frames[link.joint];
    const Vec2 com = kin.Point(link.joint, link.com);
    PointJacobian(model, kin, link.joint, com, &jac);
    jw.setZero();
    jw[2] = 1.0;
    for (int j : model.revolute_chain(link.joint)) {
      jw[model.dof(j)] = model.joints()[j].axis;
    }
    mass->noalias() += link.mass * jac.transpose() * jac;
    mass->noalias() += link.inertia * jw.transpose() * jw;
    const Vec2 a_bias = f.bias_accel - f.omega * f.omega * (com - f.position);
    bias->noalias() += link.mass * jac.transpose() * a_bias;
  }
}

}  // namespace dexscope

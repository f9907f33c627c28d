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

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Cholesky>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"

namespace dexscope {
namespace {

constexpr int kSchemaVersion = 1;

// Contact between body A (a hand link, or the object against the table) and
// body B (the object or the table). `normal` points from B towards A.
struct Contact {
  int link = -1;         // Hand link on side A, or -1.
  bool object_a = false;  // Object is body A (object-table contact).
  bool object_b = false;  // Object is body B.
  Vec2 point = Vec2::Zero();
  Vec2 normal = Vec2::UnitY();
  double depth = 0.0;
  double friction = 0.0;
};

void CheckRange(const UniformRange& r, const char* name) {
  if (!(r.low <= r.high) || !std::isfinite(r.low) || !std::isfinite(r.high)) {
    throw ConfigError(std::string("randomization range '") + name +
                      "' must satisfy low <= high");
  }
}

nlohmann::json RangeToJson(const UniformRange& r) {
  return nlohmann::json::array({r.low, r.high});
}

void ReadRange(const nlohmann::json& j, const char* key, UniformRange* r) {
  if (!j.contains(key)) return;
  const Vec2 v = VecFromJson(j[key]);
  r->low = v.x();
  r->high = v.y();
}

bool AllFinite(const SimState& s) {
  return s.q.allFinite() && s.v.allFinite() &&
         s.object_pose.position.allFinite() && std::isfinite(s.object_omega) &&
         s.object_velocity.allFinite();
}

}  // namespace

void EnvParams::Validate() const {
  if (!(sim_dt > 0.0) || !(control_dt > 0.0)) {
    throw ConfigError("timesteps must be positive");
  }
  const double ratio = control_dt / sim_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || ratio < 0.5) {
    throw ConfigError("control timestep must be an integer multiple of the "
                      "sim timestep");
  }
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(friction >= 0.0) || !(restitution >= 0.0)) {
    throw ConfigError("friction and restitution must be >= 0");
  }
  if (!(density > 0.0) || !(contact_stiffness > 0.0) ||
      !(contact_damping >= 0.0) || !(friction_velocity > 0.0) ||
      !(shape_scale > 0.0) || !(point_noise >= 0.0) ||
      !(contact_offset > 0.0) || !std::isfinite(gravity)) {
    throw ConfigError("invalid physical parameter");
  }
  CheckRange(randomization.friction_scale, "friction_scale");
  CheckRange(randomization.restitution_scale, "restitution_scale");
  CheckRange(randomization.density_scale, "density_scale");
  CheckRange(randomization.shape_scale, "shape_scale");
  CheckRange(randomization.point_noise, "point_noise");
}

int EnvParams::SimStepsPerControl() const {
  return static_cast<int>(std::lround(control_dt / sim_dt));
}

double EnvParams::EffectiveDamping() const {
  return contact_damping * std::max(0.0, 1.0 - restitution) / 0.3;
}

nlohmann::json EnvParams::ToJson() const {
  const Randomization& r = randomization;
  return {{"schema_version", kSchemaVersion},
          {"gravity", gravity},
          {"sim_dt", sim_dt},
          {"control_dt", control_dt},
          {"substeps", substeps},
          {"friction", friction},
          {"restitution", restitution},
          {"density", density},
          {"contact_offset", contact_offset},
          {"contact_stiffness", contact_stiffness},
          {"contact_damping", contact_damping},
          {"friction_velocity", friction_velocity},
          {"shape_scale", shape_scale},
          {"point_noise", point_noise},
          {"table_height", table_height},
          {"table", table},
          {"randomization",
           {{"enabled", r.enabled},
            {"friction_scale", RangeToJson(r.friction_scale)},
            {"restitution_scale", RangeToJson(r.restitution_scale)},
            {"density_scale", RangeToJson(r.density_scale)},
            {"shape_scale", RangeToJson(r.shape_scale)},
            {"point_noise", RangeToJson(r.point_noise)}}}};
}

EnvParams EnvParams::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j, {"schema_version", "gravity", "sim_dt", "control_dt",
                        "substeps", "friction", "restitution", "density",
                        "contact_offset", "contact_stiffness",
                        "contact_damping", "friction_velocity", "shape_scale",
                        "point_noise", "table_height", "table",
                        "randomization"},
                    "env");
  EnvParams p;
  int version = kSchemaVersion;
  ReadOptional(j, "schema_version", &version);
  if (version != kSchemaVersion) throw ConfigError("unsupported env schema");
  ReadOptional(j, "gravity", &p.gravity);
  ReadOptional(j, "sim_dt", &p.sim_dt);
  ReadOptional(j, "control_dt", &p.control_dt);
  ReadOptional(j, "substeps", &p.substeps);
  ReadOptional(j, "friction", &p.friction);
  ReadOptional(j, "restitution", &p.restitution);
  ReadOptional(j, "density", &p.density);
  ReadOptional(j, "contact_offset", &p.contact_offset);
  ReadOptional(j, "contact_stiffness", &p.contact_stiffness);
  ReadOptional(j, "contact_damping", &p.contact_damping);
  ReadOptional(j, "friction_velocity", &p.friction_velocity);
  ReadOptional(j, "shape_scale", &p.shape_scale);
  ReadOptional(j, "point_noise", &p.point_noise);
  ReadOptional(j, "table_height", &p.table_height);
  ReadOptional(j, "table", &p.table);
  if (j.contains("randomization")) {
    const auto& r = j["randomization"];
    RejectUnknownKeys(r, {"enabled", "friction_scale", "restitution_scale",
                          "density_scale", "shape_scale", "point_noise"},
                      "env.randomization");
    ReadOptional(r, "enabled", &p.randomization.enabled);
    ReadRange(r, "friction_scale", &p.randomization.friction_scale);
    ReadRange(r, "restitution_scale", &p.randomization.restitution_scale);
    ReadRange(r, "density_scale", &p.randomization.density_scale);
    ReadRange(r, "shape_scale", &p.randomization.shape_scale);
    ReadRange(r, "point_noise", &p.randomization.point_noise);
  }
  p.Validate();
  return p;
}

Eigen::VectorXd PdCommand::ToVector() const {
  Eigen::VectorXd out(3 + finger_targets.size());
  out << wrist_offset.x(), wrist_offset.y(), wrist_rotation, finger_targets;
  return out;
}

PdCommand PdCommand::FromVector(const Eigen::VectorXd& v) {
  if (v.size() < 3) throw ConfigError("command vector too short");
  PdCommand c;
  c.wrist_offset = Vec2(v[0], v[1]);
  c.wrist_rotation = v[2];
  c.finger_targets = v.tail(v.size() - 3);
  return c;
}

bool SimState::operator==(const SimState& o) const {
  return q == o.q && v == o.v &&
         object_pose.position == o.object_pose.position &&
         object_pose.rotation == o.object_pose.rotation &&
         object_omega == o.object_omega &&
         object_velocity == o.object_velocity &&
         joint_rotation == o.joint_rotation &&
         joint_position == o.joint_position && joint_omega == o.joint_omega &&
         joint_velocity == o.joint_velocity &&
         surface_vector == o.surface_vector &&
         surface_distance == o.surface_distance &&
         contact_force == o.contact_force && contact == o.contact && t == o.t &&
         max_penetration == o.max_penetration;
}

World::World(RobotModel model, const ObjectShape& shape, EnvParams params)
    : model_(std::move(model)),
      shape_(shape.Scaled(params.shape_scale)),
      params_(std::move(params)) {
  params_.Validate();
  object_mass_ = params_.density * shape_.Area();
  object_inertia_ = params_.density * shape_.SecondMoment();
}

SimState World::MakeState(const Pose2& wrist,
                          const Eigen::VectorXd& joint_angles,
                          const Pose2& object) const {
  const int n = model_.num_dofs();
  if (joint_angles.size() != n - 3) {
    throw ConfigError("joint angle vector has wrong length");
  }
  SimState s;
  s.q.resize(n);
  s.q << wrist.position, wrist.rotation.value(), joint_angles;
  s.v = Eigen::VectorXd::Zero(n);
  s.object_pose = object;
  s.contact_force.assign(model_.num_links(), 0.0);
  s.contact.assign(model_.num_links(), false);
  Refresh(&s);
  return s;
}

void World::Refresh(SimState* s) const {
  const HandKinematics kin = ComputeKinematics(model_, s->q, s->v);
  const int nj = model_.num_joints();
  s->joint_rotation.resize(nj);
  s->joint_position.resize(nj);
  s->joint_omega.resize(nj);
  s->joint_velocity.resize(nj);
  for (int i = 0; i < nj; ++i) {
    const FrameState& f = kin.frames[i];
    s->joint_rotation[i] = Angle(f.angle);
    s->joint_position[i] = f.position;
    s->joint_omega[i] = f.omega;
    s->joint_velocity[i] = f.velocity;
  }
  SurfaceVectors sv = NearestSurfaceVectors(*s, model_, shape_);
  s->surface_vector = std::move(sv.vectors);
  s->surface_distance = std::move(sv.distances);
  s->contact.resize(model_.num_links());
  s->contact_force.resize(model_.num_links(), 0.0);
  for (int l = 0; l < model_.num_links(); ++l) {
    s->contact[l] = s->contact_force[l] > 0.0;
  }
}

std::vector<std::pair<Vec2, Vec2>> World::LinkSegments(
    const SimState& s) const {
  const HandKinematics kin = ComputeKinematics(model_, s.q, s.v);
  std::vector<std::pair<Vec2, Vec2>> out;
  out.reserve(model_.num_links());
  for (const Link& l : model_.links()) {
    out.emplace_back(kin.Point(l.joint, l.start), kin.Point(l.joint, l.end));
  }
  return out;
}

SimState World::Step(const SimState& state, const PdCommand& cmd) const {
  if (cmd.finger_targets.size() != model_.num_actuated()) {
    throw ConfigError("command dimension does not match the robot");
  }
  if (!AllFinite(state) || !cmd.ToVector().allFinite()) {
    throw NumericalError("non-finite state or command at t=" +
                         std::to_string(state.t));
  }
  SimState s = state;
  const Pose2 wrist = state.WristPose();
  const Vec2 target_xy =
      wrist.position + VectorFromFrame(wrist, cmd.wrist_offset);
  const Eigen::Vector3d wrist_target(target_xy.x(), target_xy.y(),
                                     state.q[2] + cmd.wrist_rotation);
  Eigen::VectorXd joint_targets = model_.ApplyMimic(cmd.finger_targets);
  for (int k = 0; k < joint_targets.size(); ++k) {
    const Joint& jt = model_.joints()[model_.dof_joint(k + 3)];
    joint_targets[k] = std::clamp(joint_targets[k], jt.lower, jt.upper);
  }
  const int n_sim = params_.SimStepsPerControl();
  const double h = params_.sim_dt / params_.substeps;
  s.max_penetration = 0.0;
  for (int step = 0; step < n_sim; ++step) {
    const bool last = step == n_sim - 1;
    if (last) std::fill(s.contact_force.begin(), s.contact_force.end(), 0.0);
    for (int sub = 0; sub < params_.substeps; ++sub) {
      Substep(&s, wrist_target, joint_targets, h, last);
    }
  }
  if (!AllFinite(s)) {
    throw NumericalError("simulation diverged at t=" +
                         std::to_string(state.t));
  }
  s.t = state.t + 1;
  Refresh(&s);
  return s;
}

void World::Substep(SimState* s, const Eigen::Vector3d& wrist_target,
                    const Eigen::VectorXd& joint_targets, double h,
                    bool record_forces) const {
  const int nh = model_.num_dofs();
  const int n = nh + 3;
  const PdGains& g = model_.gains();
  const HandKinematics kin = ComputeKinematics(model_, s->q, s->v);

  Eigen::MatrixXd mass_h;
  Eigen::VectorXd bias_h;
  MassMatrixAndBias(model_, kin, &mass_h, &bias_h);

  Eigen::VectorXd u(n);
  u << s->v, s->object_velocity, s->object_omega;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs(n);
  a.topLeftCorner(nh, nh) = mass_h;
  rhs.head(nh) = mass_h * s->v - h * bias_h;
  const double m_o = object_mass_;
  a(nh, nh) = m_o;
  a(nh + 1, nh + 1) = m_o;
  a(nh + 2, nh + 2) = object_inertia_;
  rhs.tail(3) = Eigen::Vector3d(m_o * s->object_velocity.x(),
                                m_o * (s->object_velocity.y() -
                                       h * params_.gravity),
                                object_inertia_ * s->object_omega);

  // Stable PD: stiffness and damping are treated implicitly; the position
  // error is clamped so the static torque never exceeds the effort limit.
  auto add_pd = [&](int d, double kp, double kd, double err) {
    a(d, d) += h * kd + h * h * kp;
    rhs[d] += h * kp * err;
  };
  Vec2 err_xy(wrist_target.x() - s->q[0], wrist_target.y() - s->q[1]);
  if (g.kp_linear > 0.0) {
    const double max_err = g.force_limit / g.kp_linear;
    const double norm = err_xy.norm();
    if (norm > max_err) err_xy *= max_err / norm;
  }
  add_pd(0, g.kp_linear, g.kd_linear, err_xy.x());
  add_pd(1, g.kp_linear, g.kd_linear, err_xy.y());
  double err_th = std::remainder(wrist_target.z() - s->q[2], kTwoPi);
  if (g.kp_angular > 0.0) {
    const double max_err = g.torque_limit / g.kp_angular;
    err_th = std::clamp(err_th, -max_err, max_err);
  }
  add_pd(2, g.kp_angular, g.kd_angular, err_th);
  for (int d = 3; d < nh; ++d) {
    const Joint& jt = model_.joints()[model_.dof_joint(d)];
    double err = joint_targets[d - 3] - s->q[d];
    if (g.kp_joint > 0.0) {
      const double max_err = jt.effort / g.kp_joint;
      err = std::clamp(err, -max_err, max_err);
    }
    add_pd(d, g.kp_joint, g.kd_joint, err);
  }

  // Contact generation.
  std::vector<Contact> contacts;
  const double mu = params_.friction;
  const Pose2& op = s->object_pose;
  for (int l = 0; l < model_.num_links(); ++l) {
    const Link& link = model_.links()[l];
    const Vec2 wa = kin.Point(link.joint, link.start);
    const Vec2 wb = kin.Point(link.joint, link.end);
    if (params_.table) {
      for (const Vec2& p : {wa, wb}) {
        const double depth = params_.table_height - (p.y() - link.radius);
        if (depth > 0.0) {
          contacts.push_back({l, false, false,
                              Vec2(p.x(), p.y() - link.radius + 0.5 * depth),
                              Vec2::UnitY(), depth, 0.0});
        }
      }
    }
    const Vec2 la = ToFrame(op, wa);
    const Vec2 lb = ToFrame(op, wb);
    const double s_center = ClosestSegmentParam(la, lb, Vec2::Zero());
    if ((la + s_center * (lb - la)).norm() >
        link.radius + shape_.BoundingRadius()) {
      continue;
    }
    auto add_object_contact = [&](const Vec2& seg_point, const Vec2& closest,
                                  const Vec2& normal, double distance) {
      const double depth = link.radius - distance;
      if (depth <= 0.0) return;
      const Vec2 cap_surface = seg_point - link.radius * normal;
      const Vec2 mid = 0.5 * (closest + cap_surface);
      contacts.push_back({l, false, true, FromFrame(op, mid),
                          VectorFromFrame(op, normal), depth, mu});
    };
    const SegmentQuery sq = shape_.QuerySegment(la, lb);
    if (sq.distance >= link.radius) continue;
    if (shape_.kind() == ObjectShape::Kind::kCircle) {
      add_object_contact(sq.segment_point, sq.closest, sq.normal,
                         sq.distance);
      continue;
    }
    // Flat faces: contacts at penetrating capsule endpoints and at polygon
    // vertices that dip into the capsule, so a link under a face supports it
    // at both ends of the overlap. A segment cutting through the outline with
    // neither falls back to its deepest point.
    const size_t before = contacts.size();
    for (const Vec2& e : {la, lb}) {
      const SurfaceQuery q = shape_.Query(e);
      if (q.distance < link.radius) {
        add_object_contact(e, q.closest, q.normal, q.distance);
      }
    }
    for (const Vec2& v : shape_.vertices()) {
      const double t = ClosestSegmentParam(la, lb, v);
      if (t <= 0.0 || t >= 1.0) continue;
      const Vec2 on_seg = la + t * (lb - la);
      const double d = (on_seg - v).norm();
      if (d >= link.radius || d <= 0.0 || shape_.SignedDistance(on_seg) < 0.0) {
        continue;
      }
      add_object_contact(on_seg, v, (on_seg - v) / d, d);
    }
    if (contacts.size() == before) {
      add_object_contact(sq.segment_point, sq.closest, sq.normal,
                         sq.distance);
    }
  }
  if (params_.table) {
    auto add_table = [&](const Vec2& p_low) {
      const double depth = params_.table_height - p_low.y();
      if (depth > 0.0) {
        contacts.push_back({-1, true, false,
                            Vec2(p_low.x(), p_low.y() + 0.5 * depth),
                            Vec2::UnitY(), depth, mu});
      }
    };
    if (shape_.kind() == ObjectShape::Kind::kCircle) {
      add_table(op.position - Vec2(0.0, shape_.radius()));
    } else {
      for (const Vec2& v : shape_.vertices()) add_table(FromFrame(op, v));
    }
  }

  // Relative-velocity Jacobians and the linearly implicit contact terms.
  const double k = params_.contact_stiffness;
  const double c = params_.EffectiveDamping();
  const double v_eps = params_.friction_velocity;
  std::vector<Eigen::Matrix<double, 2, Eigen::Dynamic>> jacs(contacts.size());
  std::vector<double> gammas(contacts.size(), 0.0);
  Eigen::Matrix<double, 2, Eigen::Dynamic> jh(2, nh);
  for (size_t i = 0; i < contacts.size(); ++i) {
    const Contact& ct = contacts[i];
    auto& jc = jacs[i];
    jc.setZero(2, n);
    if (ct.link >= 0) {
      PointJacobian(model_, kin, model_.links()[ct.link].joint, ct.point, &jh);
      jc.leftCols(nh) = jh;
    }
    const Vec2 r = ct.point - op.position;
    const double sign = ct.object_a ? 1.0 : (ct.object_b ? -1.0 : 0.0);
    if (sign != 0.0) {
      jc(0, nh) = sign;
      jc(1, nh + 1) = sign;
      jc.col(nh + 2) = sign * Perp(r);
    }
    const Vec2 vrel = jc * u;
    const Vec2 t = Perp(ct.normal);
    const double vn = ct.normal.dot(vrel);
    const double normal_est = std::max(0.0, k * ct.depth - c * vn);
    gammas[i] = ct.friction * normal_est / std::max(std::abs(t.dot(vrel)), v_eps);
    const Eigen::Matrix2d p = (c + h * k) * ct.normal * ct.normal.transpose() +
                              gammas[i] * t * t.transpose();
    a.noalias() += h * jc.transpose() * p * jc;
    rhs.noalias() += h * k * ct.depth * (jc.transpose() * ct.normal);
  }

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  Eigen::VectorXd u_new = ldlt.solve(rhs);

  // Enforce unilateral normals and the Coulomb cone on the solved forces.
  Eigen::VectorXd correction = Eigen::VectorXd::Zero(n);
  bool corrected = false;
  std::vector<double> normal_forces(contacts.size());
  for (size_t i = 0; i < contacts.size(); ++i) {
    const Contact& ct = contacts[i];
    const Vec2 vrel = jacs[i] * u_new;
    const Vec2 t = Perp(ct.normal);
    const double n_lin = k * ct.depth - (c + h * k) * ct.normal.dot(vrel);
    const double f_lin = -gammas[i] * t.dot(vrel);
    const double n_act = std::max(0.0, n_lin);
    const double f_max = ct.friction * n_act;
    const double f_act = std::clamp(f_lin, -f_max, f_max);
    normal_forces[i] = n_act;
    if (n_act != n_lin || f_act != f_lin) {
      const Vec2 df = (n_act - n_lin) * ct.normal + (f_act - f_lin) * t;
      correction.noalias() += h * (jacs[i].transpose() * df);
      corrected = true;
    }
  }
  if (corrected) u_new += ldlt.solve(correction);

  for (size_t i = 0; i < contacts.size(); ++i) {
    const Contact& ct = contacts[i];
    s->max_penetration = std::max(s->max_penetration, ct.depth);
    if (record_forces && ct.link >= 0 && ct.object_b) {
      s->contact_force[ct.link] =
          std::max(s->contact_force[ct.link], normal_forces[i]);
    }
  }

  s->v = u_new.head(nh);
  s->object_velocity = u_new.segment<2>(nh);
  s->object_omega = u_new[nh + 2];
  s->q += h * s->v;
  s->q[2] = std::remainder(s->q[2], kTwoPi);
  for (int d = 3; d < nh; ++d) {
    const Joint& jt = model_.joints()[model_.dof_joint(d)];
    if (s->q[d] < jt.lower) {
      s->q[d] = jt.lower;
      s->v[d] = std::max(0.0, s->v[d]);
    } else if (s->q[d] > jt.upper) {
      s->q[d] = jt.upper;
      s->v[d] = std::min(0.0, s->v[d]);
    }
  }
  s->object_pose.position += h * s->object_velocity;
  s->object_pose.rotation =
      Angle(s->object_pose.rotation.value() + h * s->object_omega);
}

Eigen::VectorXd ApplyMimic(const RobotModel& model,
                           const Eigen::VectorXd& actuated_targets) {
  return model.ApplyMimic(actuated_targets);
}

SimState Step(const SimState& state, const PdCommand& cmd,
              const EnvParams& params, const RobotModel& model,
              const ObjectShape& shape) {
  return World(model, shape, params).Step(state, cmd);
}

SurfaceVectors NearestSurfaceVectors(const SimState& state,
                                     const RobotModel& model,
                                     const ObjectShape& shape) {
  SurfaceVectors out;
  const int nj = model.num_joints();
  out.vectors.resize(nj);
  out.distances.resize(nj);
  for (int i = 0; i < nj; ++i) {
    const Vec2& p = state.joint_position[i];
    const SurfaceQuery q = shape.Query(ToFrame(state.object_pose, p));
    out.vectors[i] = FromFrame(state.object_pose, q.closest) - p;
    out.distances[i] = q.distance;
  }
  return out;
}

std::vector<bool> ContactFlags(const SimState& state, const RobotModel& model) {
  std::vector<bool> flags(model.num_links(), false);
  for (int l = 0; l < model.num_links() &&
                  l < static_cast<int>(state.contact_force.size());
       ++l) {
    flags[l] = state.contact_force[l] > 0.0;
  }
  return flags;
}

EnvParams Randomize(const EnvParams& params, Rng* rng) {
  params.Validate();
  const Randomization& r = params.randomization;
  if (!r.enabled) return params;
  auto draw = [rng](const UniformRange& range) {
    return rng->Uniform(range.low, range.high);
  };
  EnvParams out = params;
  out.friction = params.friction * draw(r.friction_scale);
  out.restitution = params.restitution * draw(r.restitution_scale);
  out.density = params.density * draw(r.density_scale);
  out.shape_scale = params.shape_scale * draw(r.shape_scale);
  out.point_noise = draw(r.point_noise);
  return out;
}

std::vector<Vec2> RaycastDepth(const SimState& state, const World& world,
                               const Pose2& camera, double fov, int n_rays,
                               Rng* rng) {
  if (n_rays < 1) throw ConfigError("n_rays must be >= 1");
  const auto segments = world.LinkSegments(state);
  const auto& links = world.model().links();
  const Pose2& op = state.object_pose;
  const double noise = world.params().point_noise;
  std::vector<Vec2> points;
  for (int i = 0; i < n_rays; ++i) {
    const double offset =
        n_rays == 1 ? 0.0 : fov * ((i + 0.5) / n_rays - 0.5);
    const double heading = camera.rotation.value() + offset;
    const Vec2 dir(std::cos(heading), std::sin(heading));
    const auto t_obj = world.shape().Raycast(ToFrame(op, camera.position),
                                             VectorToFrame(op, dir));
    if (!t_obj) continue;
    bool occluded = false;
    for (size_t l = 0; l < segments.size() && !occluded; ++l) {
      const auto t_hand =
          RaycastCapsule(camera.position, dir, segments[l].first,
                         segments[l].second, links[l].radius);
      occluded = t_hand && *t_hand < *t_obj;
    }
    if (occluded) continue;
    Vec2 p = camera.position + *t_obj * dir;
    if (noise > 0.0) {
      p.x() += rng->Uniform(-noise, noise);
      p.y() += rng->Uniform(-noise, noise);
    }
    points.push_back(p);
  }
  return points;
}

}  // namespace dexscope

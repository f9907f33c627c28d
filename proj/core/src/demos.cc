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

#include "dexscope/demos.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"

namespace dexscope {
namespace {

constexpr double kContactProximity = 0.005;

double Smooth(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

double HighestPoint(const ObjectShape& shape, const Pose2& pose) {
  if (shape.kind() == ObjectShape::Kind::kCircle) {
    return pose.position.y() + shape.radius();
  }
  double high = -1e300;
  for (const Vec2& v : shape.vertices()) {
    high = std::max(high, FromFrame(pose, v).y());
  }
  return high;
}

nlohmann::json PoseToJson(const Pose2& p) {
  return nlohmann::json::array(
      {p.position.x(), p.position.y(), p.rotation.value()});
}

Pose2 PoseFromJson(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError("pose must be [x, y, theta]");
  }
  return Pose2(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

// Signed clearance between a segment and the object, minus the link radius.
double LinkClearance(const ObjectShape& shape, const Pose2& object,
                     const Vec2& a, const Vec2& b, double radius) {
  return shape.QuerySegment(ToFrame(object, a), ToFrame(object, b)).distance -
         radius;
}

// Closure angle at which finger f first touches the object moving from
// `from` to `to`. Throws ConfigError if it never does.
double FirstContactClosure(const DemoHand& hand, const ObjectShape& shape,
                           const Pose2& object, const Pose2& wrist, int f,
                           double from, double to) {
  auto clearance = [&](double beta) {
    double closure[DemoHand::kNumFingers] = {0.0, 0.0, 0.0};
    closure[f] = beta;
    std::vector<Angle> rot;
    std::vector<Vec2> pos;
    hand.Pose(wrist, closure, &rot, &pos);
    const int b = DemoHand::FingerBase(f);
    double c = 1e300;
    for (int j = 0; j < 3; ++j) {
      c = std::min(c, LinkClearance(shape, object, pos[b + j], pos[b + j + 1],
                                    hand.link_radius));
    }
    return c;
  };
  constexpr int kScan = 400;
  double prev = from;
  if (clearance(from) <= 0.0) return from;
  for (int i = 1; i <= kScan; ++i) {
    const double beta = from + (to - from) * i / kScan;
    if (clearance(beta) <= 0.0) {
      double lo = prev, hi = beta;  // clearance(lo) > 0 >= clearance(hi)
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (clearance(mid) > 0.0 ? lo : hi) = mid;
      }
      return hi;
    }
    prev = beta;
  }
  throw ConfigError("demonstrator finger " + std::to_string(f) +
                    " cannot reach the object");
}

void FillGeometry(const DemoHand& hand, const ObjectShape& shape,
                  ReferenceFrame* fr) {
  const int n = DemoHand::kNumJoints;
  fr->surface_vector.resize(n);
  fr->surface_distance.resize(n);
  for (int j = 0; j < n; ++j) {
    const Vec2& p = fr->joint_position[j];
    const SurfaceQuery q = shape.Query(ToFrame(fr->object_pose, p));
    fr->surface_vector[j] = FromFrame(fr->object_pose, q.closest) - p;
    fr->surface_distance[j] = q.distance;
  }
  fr->contact.resize(DemoHand::kNumFingers);
  for (int f = 0; f < DemoHand::kNumFingers; ++f) {
    const int dist = DemoHand::FingerBase(f) + 2;
    fr->contact[f] =
        LinkClearance(shape, fr->object_pose, fr->joint_position[dist],
                      fr->joint_position[dist + 1],
                      hand.link_radius) < kContactProximity;
  }
}

nlohmann::json AnglesToJson(const std::vector<Angle>& a) {
  nlohmann::json out = nlohmann::json::array();
  for (const Angle& x : a) out.push_back(x.value());
  return out;
}

nlohmann::json VecsToJson(const std::vector<Vec2>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const Vec2& x : v) out.push_back(VecToJson(x));
  return out;
}

}  // namespace

const std::vector<std::string>& DemoHand::JointNames() {
  static const std::vector<std::string> names = {
      "wrist",      "thumb_mcp",  "thumb_pip",  "thumb_dip", "thumb_tip",
      "index_mcp",  "index_pip",  "index_dip",  "index_tip", "middle_mcp",
      "middle_pip", "middle_dip", "middle_tip"};
  return names;
}

void DemoHand::Pose(const Pose2& wrist, const double closure[kNumFingers],
                    std::vector<Angle>* rotations,
                    std::vector<Vec2>* positions) const {
  rotations->assign(kNumJoints, Angle());
  positions->assign(kNumJoints, Vec2::Zero());
  (*rotations)[0] = wrist.rotation;
  (*positions)[0] = wrist.position;
  for (int f = 0; f < kNumFingers; ++f) {
    const int b = FingerBase(f);
    Vec2 p = FromFrame(wrist, Vec2(palm_length, base_offset[f]));
    double a = wrist.rotation.value();
    for (int j = 0; j < 3; ++j) {
      a += curl_sign[f] * curl_share[j] * closure[f];
      (*rotations)[b + j] = Angle(a);
      (*positions)[b + j] = p;
      p += Rotation(a) * Vec2(link_length[j], 0.0);
    }
    (*rotations)[b + 3] = Angle(a);
    (*positions)[b + 3] = p;
  }
}

void TaskSpec::Validate() const {
  if (!(fps > 0.0) || !(duration > 0.0) || NumFrames() < 2) {
    throw ConfigError("task needs fps > 0 and at least 2 frames");
  }
  if (!(0.0 < approach_end && approach_end < grasp_end &&
        grasp_end < transport_end && transport_end < release_end &&
        release_end < 1.0)) {
    throw ConfigError("task phase boundaries must increase within (0, 1)");
  }
  if (!(jitter >= 0.0) || !(penetration_bias >= 0.0) ||
      !(lift_height >= 0.0) || !(approach_height >= 0.0)) {
    throw ConfigError("task amplitudes must be >= 0");
  }
  for (const Pose2* p : {&start, &goal}) {
    if (!p->position.allFinite()) throw ConfigError("non-finite task pose");
    if (LowestPoint(shape, *p) < -1e-9) {
      throw ConfigError("task pose places the object below the table");
    }
  }
  if ((goal.position - start.position).norm() > max_reach) {
    throw ConfigError("object goal is out of reach");
  }
}

int TaskSpec::NumFrames() const {
  return static_cast<int>(std::lround(duration * fps));
}

Pose2 TaskSpec::RestingPose(const ObjectShape& shape, double x,
                            double rotation) {
  const Pose2 probe(x, 0.0, rotation);
  return Pose2(x, -LowestPoint(shape, probe), rotation);
}

nlohmann::json TaskSpec::ToJson() const {
  return {{"shape", ShapeToJson(shape)},
          {"start", PoseToJson(start)},
          {"goal", PoseToJson(goal)},
          {"duration", duration},
          {"fps", fps},
          {"lift_height", lift_height},
          {"approach_height", approach_height},
          {"jitter", jitter},
          {"penetration_bias", penetration_bias},
          {"max_reach", max_reach},
          {"approach_end", approach_end},
          {"grasp_end", grasp_end},
          {"transport_end", transport_end},
          {"release_end", release_end}};
}

TaskSpec TaskSpec::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j, {"shape", "start", "goal", "duration", "fps",
                        "lift_height", "approach_height", "jitter",
                        "penetration_bias", "max_reach", "approach_end",
                        "grasp_end", "transport_end", "release_end"},
                    "task");
  TaskSpec t;
  try {
    t.shape = ShapeFromJson(j.at("shape"));
    t.start = PoseFromJson(j.at("start"));
    t.goal = PoseFromJson(j.at("goal"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  ReadOptional(j, "duration", &t.duration);
  ReadOptional(j, "fps", &t.fps);
  ReadOptional(j, "lift_height", &t.lift_height);
  ReadOptional(j, "approach_height", &t.approach_height);
  ReadOptional(j, "jitter", &t.jitter);
  ReadOptional(j, "penetration_bias", &t.penetration_bias);
  ReadOptional(j, "max_reach", &t.max_reach);
  ReadOptional(j, "approach_end", &t.approach_end);
  ReadOptional(j, "grasp_end", &t.grasp_end);
  ReadOptional(j, "transport_end", &t.transport_end);
  ReadOptional(j, "release_end", &t.release_end);
  t.Validate();
  return t;
}

KeyJointMap KeyJointMap::Default() {
  // Robot fingertips f1_tip (+y side) and f2_tip (-y side) follow the thumb
  // and index fingertips.
  return KeyJointMap{{{3, DemoHand::kThumbTip}, {6, DemoHand::kIndexTip}}};
}

void KeyJointMap::Validate(int robot_joints, int demo_joints) const {
  if (pairs.empty()) throw ConfigError("key-joint map is empty");
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& [r, d] = pairs[i];
    if (r < 0 || r >= robot_joints || d < 0 || d >= demo_joints) {
      throw ConfigError("key-joint map id out of range");
    }
    for (size_t k = 0; k < i; ++k) {
      if (pairs[k].first == r || pairs[k].second == d) {
        throw ConfigError("key-joint map repeats a joint");
      }
    }
  }
}

void ReferenceClip::Validate() const {
  if (!(fps > 0.0)) throw ConfigError("clip fps must be positive");
  if (frames.size() < 2) throw ConfigError("clip needs at least 2 frames");
  if (grasp_onset < 0 || grasp_onset >= length()) {
    throw ConfigError("grasp onset outside the clip");
  }
  if (static_cast<int>(joint_contact_flag.size()) != DemoHand::kNumJoints) {
    throw ConfigError("joint contact table has wrong size");
  }
  for (const ReferenceFrame& f : frames) {
    if (static_cast<int>(f.joint_rotation.size()) != DemoHand::kNumJoints ||
        f.joint_position.size() != f.joint_rotation.size() ||
        f.surface_vector.size() != f.joint_rotation.size() ||
        f.surface_distance.size() != f.joint_rotation.size() ||
        static_cast<int>(f.contact.size()) != DemoHand::kNumFingers) {
      throw ConfigError("clip frame arrays have inconsistent lengths");
    }
  }
  map_hint.Validate(1 << 20, DemoHand::kNumJoints);
}

ReferenceClip GenerateDemo(const TaskSpec& task, Rng* rng) {
  task.Validate();
  const DemoHand hand;
  const ObjectShape& shape = task.shape;
  const int n = task.NumFrames();

  // Grasp from above: fingertips of the straight hand end just above the
  // table so the side fingers close below the object's top.
  const double finger_length =
      hand.link_length[0] + hand.link_length[1] + hand.link_length[2];
  const double base_y = LowestPoint(shape, task.start) + finger_length +
                        hand.link_radius + 0.003;
  const Pose2 wrist_grasp(task.start.position.x(), base_y + hand.palm_length,
                          -kPi / 2);
  if (HighestPoint(shape, task.start) + hand.link_radius >= base_y) {
    throw ConfigError("object is too tall for the demonstrator");
  }
  constexpr double kOpen = -0.2, kCurled = 2.2;
  double open[DemoHand::kNumFingers], closed[DemoHand::kNumFingers];
  for (int f = 0; f < DemoHand::kNumFingers; ++f) {
    // The index rests on top: it starts curled and extends onto the object.
    const bool index = f == 1;
    open[f] = index ? kCurled : kOpen;
    closed[f] = FirstContactClosure(hand, shape, task.start, wrist_grasp, f,
                                    open[f], index ? kOpen : kCurled);
  }
  const Pose2 grip = PoseToFrame(task.start, wrist_grasp);
  const double turn = RotDiff(task.goal.rotation, task.start.rotation).value();
  const Pose2 wrist_goal = Compose(task.goal, grip);

  ReferenceClip clip;
  clip.fps = task.fps;
  clip.shape = shape;
  clip.task = task;
  clip.map_hint = KeyJointMap::Default();
  clip.joint_contact_flag.assign(DemoHand::kNumJoints, -1);
  for (int f = 0; f < DemoHand::kNumFingers; ++f) {
    clip.joint_contact_flag[DemoHand::FingerBase(f) + 2] = f;
    clip.joint_contact_flag[DemoHand::FingerBase(f) + 3] = f;
  }
  clip.grasp_onset = n - 1;
  clip.frames.resize(n);
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / (n - 1);
    Pose2 wrist = wrist_grasp;
    Pose2 object = task.start;
    double mix = 0.0;  // 0 = open, 1 = closed on the object.
    if (u <= task.approach_end) {
      const double s = Smooth(u / task.approach_end);
      wrist.position.y() += task.approach_height * (1.0 - s);
    } else if (u <= task.grasp_end) {
      mix = Smooth((u - task.approach_end) /
                   (task.grasp_end - task.approach_end));
    } else if (u <= task.transport_end) {
      clip.grasp_onset = std::min(clip.grasp_onset, i);
      mix = 1.0;
      const double s = Smooth((u - task.grasp_end) /
                              (task.transport_end - task.grasp_end));
      const Vec2 lift(0.0, task.lift_height * 16.0 * s * s * (1 - s) * (1 - s));
      object = Pose2(task.start.position +
                         s * (task.goal.position - task.start.position) + lift,
                     Angle(task.start.rotation.value() + s * turn));
      if (s == 1.0) object = task.goal;
      wrist = Compose(object, grip);
    } else if (u <= task.release_end) {
      object = task.goal;
      wrist = wrist_goal;
      mix = 1.0 - Smooth((u - task.transport_end) /
                         (task.release_end - task.transport_end));
    } else {
      object = task.goal;
      wrist = wrist_goal;
      const double s = Smooth((u - task.release_end) / (1.0 - task.release_end));
      wrist.position.y() += task.approach_height * s;
    }
    double closure[DemoHand::kNumFingers];
    for (int f = 0; f < DemoHand::kNumFingers; ++f) {
      closure[f] = open[f] + mix * (closed[f] - open[f]);
    }
    ReferenceFrame& fr = clip.frames[i];
    fr.object_pose = object;
    hand.Pose(wrist, closure, &fr.joint_rotation, &fr.joint_position);
  }

  // Capture artifacts: fingers sink into the object while touching it, and
  // every joint position carries uniform jitter.
  for (ReferenceFrame& fr : clip.frames) {
    if (task.penetration_bias > 0.0) {
      FillGeometry(hand, shape, &fr);
      for (int f = 0; f < DemoHand::kNumFingers; ++f) {
        if (!fr.contact[f]) continue;
        const int tip = DemoHand::FingerBase(f) + 3;
        const Vec2 nrm = VectorFromFrame(
            fr.object_pose,
            shape.Query(ToFrame(fr.object_pose, fr.joint_position[tip]))
                .normal);
        fr.joint_position[tip] -= task.penetration_bias * nrm;
        fr.joint_position[tip - 1] -= task.penetration_bias * nrm;
      }
    }
    if (task.jitter > 0.0) {
      for (Vec2& p : fr.joint_position) {
        p.x() += rng->Uniform(-task.jitter, task.jitter);
        p.y() += rng->Uniform(-task.jitter, task.jitter);
      }
    }
    FillGeometry(hand, shape, &fr);
  }
  clip.Validate();
  return clip;
}

std::vector<TaskSpec> StandardTasks() {
  const ObjectShape shapes[] = {ObjectShape::Circle(0.03),
                                ObjectShape::Box(0.05, 0.05),
                                ObjectShape::Box(0.08, 0.015)};
  const double starts[] = {0.0, 0.05, -0.05};
  const double moves[] = {0.15, -0.2, 0.3};
  std::vector<TaskSpec> tasks;
  for (const ObjectShape& shape : shapes) {
    for (double noise : {0.0, 0.003}) {
      for (int g = 0; g < 3; ++g) {
        TaskSpec t;
        t.shape = shape;
        const double turn =
            shape.kind() == ObjectShape::Kind::kCircle ? 0.5 * (g + 1) : 0.0;
        t.start = TaskSpec::RestingPose(shape, starts[g]);
        t.goal = TaskSpec::RestingPose(shape, starts[g] + moves[g], turn);
        t.jitter = noise;
        t.penetration_bias = noise;
        tasks.push_back(t);
      }
    }
  }
  return tasks;
}

std::vector<ReferenceClip> GenerateCorpus(const std::vector<TaskSpec>& tasks,
                                          uint64_t seed) {
  Rng root(seed);
  std::vector<ReferenceClip> corpus;
  for (const TaskSpec& t : tasks) {
    Rng rng = root.Fork();
    corpus.push_back(GenerateDemo(t, &rng));
  }
  return corpus;
}

void SaveClip(const ReferenceClip& clip, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  nlohmann::json map = nlohmann::json::array();
  for (const auto& [r, d] : clip.map_hint.pairs) map.push_back({r, d});
  const nlohmann::json header = {
      {"type", "header"},
      {"version", ReferenceClip::kVersion},
      {"fps", clip.fps},
      {"shape", ShapeToJson(clip.shape)},
      {"task", clip.task.ToJson()},
      {"joint_names", DemoHand::JointNames()},
      {"joint_contact_flag", clip.joint_contact_flag},
      {"map_hint", map},
      {"grasp_onset", clip.grasp_onset},
      {"frames", clip.length()}};
  out << header.dump() << '\n';
  for (int i = 0; i < clip.length(); ++i) {
    const ReferenceFrame& f = clip.frames[i];
    nlohmann::json rec = {{"type", "frame"},
                          {"index", i},
                          {"R_h", AnglesToJson(f.joint_rotation)},
                          {"J_h", VecsToJson(f.joint_position)},
                          {"R_o", f.object_pose.rotation.value()},
                          {"p_o", VecToJson(f.object_pose.position)},
                          {"D", VecsToJson(f.surface_vector)},
                          {"D_dist", f.surface_distance},
                          {"C", f.contact}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

ReferenceClip LoadClip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw TruncatedFileError("empty clip file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    if (in.eof()) throw TruncatedFileError("clip header is cut off");
    throw MalformedRecordError("clip header is not JSON", -1);
  }
  if (!header.is_object() || header.value("type", "") != "header") {
    throw MalformedRecordError("first record is not a clip header", -1);
  }
  if (!header.contains("version") || !header["version"].is_number_integer() ||
      header["version"].get<int>() != ReferenceClip::kVersion) {
    throw VersionError("unsupported clip version " +
                       (header.contains("version") ? header["version"].dump()
                                                   : std::string("(none)")));
  }
  ReferenceClip clip;
  int n = 0;
  try {
    clip.fps = header.at("fps").get<double>();
    clip.shape = ShapeFromJson(header.at("shape"));
    clip.task = TaskSpec::FromJson(header.at("task"));
    clip.joint_contact_flag =
        header.at("joint_contact_flag").get<std::vector<int>>();
    for (const auto& p : header.at("map_hint")) {
      clip.map_hint.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
    clip.grasp_onset = header.at("grasp_onset").get<int>();
    n = header.at("frames").get<int>();
  } catch (const std::exception& e) {
    throw MalformedRecordError(std::string("bad clip header: ") + e.what(),
                               -1);
  }
  if (n < 0) throw MalformedRecordError("negative frame count", -1);
  clip.frames.resize(n);
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) {
      throw TruncatedFileError("clip ends after " + std::to_string(i) +
                               " of " + std::to_string(n) + " frames");
    }
    const bool last_line = in.eof();
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      if (last_line) {
        throw TruncatedFileError("frame " + std::to_string(i) + " is cut off");
      }
      throw MalformedRecordError("frame " + std::to_string(i) +
                                     " is not valid JSON",
                                 i);
    }
    ReferenceFrame& f = clip.frames[i];
    try {
      if (rec.at("type").get<std::string>() != "frame" ||
          rec.at("index").get<int>() != i) {
        throw std::runtime_error("unexpected record type or index");
      }
      for (double a : rec.at("R_h").get<std::vector<double>>()) {
        f.joint_rotation.emplace_back(a);
      }
      for (const auto& p : rec.at("J_h")) f.joint_position.push_back(VecFromJson(p));
      f.object_pose = Pose2(VecFromJson(rec.at("p_o")),
                            Angle(rec.at("R_o").get<double>()));
      for (const auto& p : rec.at("D")) f.surface_vector.push_back(VecFromJson(p));
      f.surface_distance = rec.at("D_dist").get<std::vector<double>>();
      f.contact = rec.at("C").get<std::vector<bool>>();
    } catch (const std::exception& e) {
      throw MalformedRecordError(
          "frame " + std::to_string(i) + ": " + e.what(), i);
    }
  }
  try {
    clip.Validate();
  } catch (const ConfigError& e) {
    throw MalformedRecordError(std::string("inconsistent clip: ") + e.what(),
                               -1);
  }
  return clip;
}

KeyJointFeatures ProjectKeyJoints(const KeyJointMap& map, const SimState& s,
                                  const RobotModel& model) {
  KeyJointFeatures out;
  for (const auto& [r, d] : map.pairs) {
    if (r < 0 || r >= model.num_joints() ||
        r >= static_cast<int>(s.joint_position.size())) {
      throw ConfigError("robot key joint " + std::to_string(r) + " missing");
    }
    out.rotation.push_back(s.joint_rotation[r]);
    out.position.push_back(s.joint_position[r]);
    out.surface_vector.push_back(s.surface_vector[r]);
    out.surface_distance.push_back(s.surface_distance[r]);
    const int link = model.joint_link(r);
    out.contact.push_back(link >= 0 && link < static_cast<int>(s.contact.size()) &&
                          s.contact[link]);
  }
  return out;
}

KeyJointFeatures ProjectKeyJoints(const KeyJointMap& map,
                                  const ReferenceClip& clip, int frame) {
  const ReferenceFrame& f = clip.frames.at(frame);
  KeyJointFeatures out;
  for (const auto& [r, d] : map.pairs) {
    if (d < 0 || d >= static_cast<int>(f.joint_position.size())) {
      throw ConfigError("demonstrator key joint " + std::to_string(d) +
                        " missing");
    }
    out.rotation.push_back(f.joint_rotation[d]);
    out.position.push_back(f.joint_position[d]);
    out.surface_vector.push_back(f.surface_vector[d]);
    out.surface_distance.push_back(f.surface_distance[d]);
    const int flag = clip.joint_contact_flag[d];
    out.contact.push_back(flag >= 0 && f.contact[flag]);
  }
  return out;
}

int GoalFeatureSize(int map_size, int num_horizons) {
  return num_horizons * (7 * map_size + 3 + 3 * DemoHand::kNumJoints + 3);
}

Eigen::VectorXd GoalFeatures(const SimState& s, const RobotModel& model,
                             const ReferenceClip& clip, int t,
                             const std::vector<int>& horizons,
                             const KeyJointMap& map) {
  const int m = map.size();
  Eigen::VectorXd out(GoalFeatureSize(m, static_cast<int>(horizons.size())));
  const Pose2 wrist = s.WristPose();
  const KeyJointFeatures cur = ProjectKeyJoints(map, s, model);
  int k = 0;
  auto put = [&out, &k](double v) { out[k++] = v; };
  auto put2 = [&out, &k](const Vec2& v) {
    out[k++] = v.x();
    out[k++] = v.y();
  };
  for (int h : horizons) {
    const int idx = std::clamp(t + h, 0, clip.length() - 1);
    const ReferenceFrame& ref = clip.frames[idx];
    const KeyJointFeatures fut = ProjectKeyJoints(map, clip, idx);
    for (int i = 0; i < m; ++i) put(RotDiff(fut.rotation[i], cur.rotation[i]).value());
    for (int i = 0; i < m; ++i) {
      put2(VectorToFrame(wrist, fut.position[i] - cur.position[i]));
    }
    put(RotDiff(ref.object_pose.rotation, s.object_pose.rotation).value());
    put2(VectorToFrame(wrist,
                       ref.object_pose.position - s.object_pose.position));
    for (int i = 0; i < m; ++i) {
      put2(VectorToFrame(wrist, fut.surface_vector[i] - cur.surface_vector[i]));
    }
    for (int i = 0; i < m; ++i) {
      put(fut.surface_distance[i] - cur.surface_distance[i]);
    }
    for (int i = 0; i < m; ++i) {
      put(static_cast<double>(fut.contact[i]) -
          static_cast<double>(cur.contact[i]));
    }
    for (const Angle& a : ref.joint_rotation) put(RotDiff(a, wrist.rotation).value());
    for (const Vec2& p : ref.joint_position) put2(ToFrame(wrist, p));
    put(RotDiff(ref.object_pose.rotation, wrist.rotation).value());
    put2(ToFrame(wrist, ref.object_pose.position));
  }
  return out;
}

void SaveCorpus(const std::vector<ReferenceClip>& corpus,
                const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  for (size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03zu.jsonl", i);
    SaveClip(corpus[i], (std::filesystem::path(dir) / name).string());
  }
}

std::vector<ReferenceClip> LoadCorpus(const std::string& dir) {
  std::error_code ec;
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("clip_") && name.ends_with(".jsonl")) {
      paths.push_back(e.path());
    }
  }
  if (ec) throw IoError("cannot list '" + dir + "': " + ec.message());
  if (paths.empty()) throw IoError("no clip_*.jsonl files in '" + dir + "'");
  std::sort(paths.begin(), paths.end());
  std::vector<ReferenceClip> corpus;
  for (const auto& p : paths) corpus.push_back(LoadClip(p.string()));
  return corpus;
}

}  // namespace dexscope

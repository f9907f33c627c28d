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

#include "dexscope/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"
#include "dexscope/parallel.h"

namespace dexscope {
namespace {

double Mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double OptionalMean(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  return n ? s / n : std::nan("");
}

std::string Cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", *v);
  return buf;
}

std::string Cell(double v) { return Cell(std::optional<double>(v)); }

nlohmann::json OptionalJson(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json RowJson(const EvalRow& r) {
  return {{"label", r.label},
          {"rollouts", r.rollouts},
          {"successful", r.successful},
          {"tracking_success", r.tracking_success},
          {"vision_success", r.vision_success},
          {"contact_ratio", r.contact_ratio},
          {"all_frames",
           {{"R_err", r.rotation_error_all},
            {"T_err", r.translation_error_all},
            {"E_finger", r.finger_error_all}}},
          {"successful_only",
           {{"R_err", OptionalJson(r.rotation_error_success)},
            {"T_err", OptionalJson(r.translation_error_success)},
            {"E_finger", OptionalJson(r.finger_error_success)}}}};
}

// Shared episode loop: `act` maps (env, frame record) to an action.
template <typename Act>
Rollout RunEpisode(const TrackerConfig& cfg,
                   const std::vector<ReferenceClip>& corpus, int clip,
                   Rng* rng, Act&& act) {
  const ReferenceClip& c = corpus.at(clip);
  const EnvParams params = Randomize(cfg.env, rng);
  const World world(cfg.robot, c.shape, params);
  TrackingEnv env(&cfg, &corpus);
  env.Reset(clip, 0, InitialState(c, world, 0), params);
  const TerminationEnvelope never =
      TerminationEnvelope::Frozen(c.length(), {0.0, 0.0, 0.0, 0.0}, false);
  Rollout r;
  r.clip = clip;
  r.shape = env.world().shape();
  r.table_height = params.table_height;
  RolloutFrame first;
  first.t = 0;
  first.state = env.state();
  r.frames.push_back(std::move(first));
  while (env.frame() < c.length() - 1) {
    RolloutFrame f;
    f.action = act(env, &f);
    const StepOutcome o = env.Step(f.action, never);
    if (o.aborted) {
      r.aborted = true;
      break;
    }
    f.t = env.frame();
    f.state = env.state();
    f.reward = o.reward;
    f.contacts_match = ContactsMatch(f.state, cfg.robot, c, f.t,
                                     cfg.ppo.key_joint_map);
    r.frames.push_back(std::move(f));
  }
  return r;
}

}  // namespace

void EvalConfig::Validate() const {
  if (rollouts_per_clip < 0 || hold_steps < 0 || threads < 1) {
    throw ConfigError("eval counts must be >= 0");
  }
  for (double k : kappa) {
    if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("eval kappa out of [0, 1]");
  }
  if (!(max_translation_error > 0.0) || !(below_table_margin >= 0.0) ||
      !(lift_height >= 0.0) || !(rest_speed > 0.0) ||
      !(rest_tolerance >= 0.0)) {
    throw ConfigError("eval thresholds out of range");
  }
}

nlohmann::json EvalConfig::ToJson() const {
  return {{"rollouts_per_clip", rollouts_per_clip},
          {"kappa", kappa},
          {"contact_criterion", contact_criterion},
          {"max_translation_error", max_translation_error},
          {"below_table_margin", below_table_margin},
          {"lift_height", lift_height},
          {"hold_steps", hold_steps},
          {"rest_speed", rest_speed},
          {"rest_tolerance", rest_tolerance},
          {"threads", threads}};
}

EvalConfig EvalConfig::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j,
                    {"rollouts_per_clip", "kappa", "contact_criterion",
                     "max_translation_error", "below_table_margin",
                     "lift_height", "hold_steps", "rest_speed",
                     "rest_tolerance", "threads"},
                    "eval");
  EvalConfig c;
  ReadOptional(j, "rollouts_per_clip", &c.rollouts_per_clip);
  ReadOptional(j, "kappa", &c.kappa);
  ReadOptional(j, "contact_criterion", &c.contact_criterion);
  ReadOptional(j, "max_translation_error", &c.max_translation_error);
  ReadOptional(j, "below_table_margin", &c.below_table_margin);
  ReadOptional(j, "lift_height", &c.lift_height);
  ReadOptional(j, "hold_steps", &c.hold_steps);
  ReadOptional(j, "rest_speed", &c.rest_speed);
  ReadOptional(j, "rest_tolerance", &c.rest_tolerance);
  ReadOptional(j, "threads", &c.threads);
  c.Validate();
  return c;
}

void PipelineConfig::Validate() const {
  tracker.Validate();
  distill.Validate();
  eval.Validate();
}

nlohmann::json PipelineConfig::ToJson() const {
  nlohmann::json j = tracker.ToJson();
  j["distill"] = distill.ToJson();
  j["eval"] = eval.ToJson();
  return j;
}

PipelineConfig PipelineConfig::FromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RejectUnknownKeys(
      j, {"env", "robot", "reward", "rse", "ppo", "distill", "eval"},
      "config");
  PipelineConfig c;
  nlohmann::json tracker = j;
  tracker.erase("distill");
  tracker.erase("eval");
  c.tracker = TrackerConfig::FromJson(tracker);
  if (j.contains("distill")) c.distill = DistillConfig::FromJson(j["distill"]);
  if (j.contains("eval")) c.eval = EvalConfig::FromJson(j["eval"]);
  c.Validate();
  return c;
}

PipelineConfig PipelineConfig::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return FromJson(j);
}

bool Rollout::reached_end(const ReferenceClip& clip) const {
  return !aborted && !frames.empty() && frames.back().t == clip.length() - 1;
}

TrackingMetrics ComputeTrackingMetrics(const Rollout& r,
                                       const ReferenceClip& clip,
                                       const RobotModel& model,
                                       const KeyJointMap& map) {
  TrackingMetrics m;
  for (const RolloutFrame& f : r.frames) {
    const ReferenceFrame& ref = clip.frames.at(f.t);
    const SimState& s = f.state;
    m.rotation_error.push_back(std::abs(
        RotDiff(s.object_pose.rotation, ref.object_pose.rotation).value()));
    m.translation_error.push_back(
        (s.object_pose.position - ref.object_pose.position).norm());
    double finger = 0.0;
    for (const auto& [rj, dj] : map.pairs) {
      if (rj >= model.num_joints()) throw ConfigError("map exceeds the robot");
      finger += (s.joint_position[rj] - ref.joint_position[dj]).norm();
    }
    m.finger_error.push_back(map.size() ? finger / map.size() : 0.0);
  }
  m.mean_rotation_error = Mean(m.rotation_error);
  m.mean_translation_error = Mean(m.translation_error);
  m.mean_finger_error = Mean(m.finger_error);
  return m;
}

bool TrackingSuccess(const Rollout& r, const ReferenceClip& clip,
                     const TerminationEnvelope& envelope,
                     const EvalConfig& cfg) {
  if (!r.reached_end(clip)) return false;
  std::deque<bool> window;
  for (size_t i = 0; i < r.frames.size(); ++i) {
    const RolloutFrame& f = r.frames[i];
    const Pose2& obj = f.state.object_pose;
    if ((obj.position - clip.frames[f.t].object_pose.position).norm() >=
        cfg.max_translation_error) {
      return false;
    }
    if (LowestPoint(r.shape, obj) < r.table_height - cfg.below_table_margin) {
      return false;
    }
    if (i == 0) continue;
    window.push_back(f.contacts_match);
    while (static_cast<int>(window.size()) > envelope.contact_window()) {
      window.pop_front();
    }
    if (CheckTermination(f.reward, envelope, f.t, window).terminate) {
      return false;
    }
  }
  return true;
}

bool VisionSuccess(const Rollout& r, const ReferenceClip& clip,
                   const EvalConfig& cfg) {
  if (!r.reached_end(clip)) return false;
  int peak = 0;
  double peak_height = -1e300;
  for (size_t i = 0; i < r.frames.size(); ++i) {
    const double h = LowestPoint(r.shape, r.frames[i].state.object_pose);
    if (h > peak_height) {
      peak_height = h;
      peak = static_cast<int>(i);
    }
  }
  if (peak_height < r.table_height + cfg.lift_height) return false;
  auto any_contact = [&r](int i) {
    const auto& c = r.frames[i].state.contact;
    return std::any_of(c.begin(), c.end(), [](bool b) { return b; });
  };
  if (!any_contact(peak)) return false;
  int lo = peak, hi = peak;
  const int n = static_cast<int>(r.frames.size());
  while (lo > 0 && any_contact(lo - 1)) --lo;
  while (hi + 1 < n && any_contact(hi + 1)) ++hi;
  if (hi - lo + 1 < cfg.hold_steps) return false;
  const SimState& end = r.frames.back().state;
  return LowestPoint(r.shape, end.object_pose) <=
             r.table_height + cfg.rest_tolerance &&
         end.object_velocity.norm() < cfg.rest_speed;
}

double ContactRatio(const Rollout& r, const ReferenceClip& clip) {
  int total = 0, touching = 0;
  for (const RolloutFrame& f : r.frames) {
    if (f.t < clip.grasp_onset) continue;
    ++total;
    const auto& c = f.state.contact;
    if (std::any_of(c.begin(), c.end(), [](bool b) { return b; })) ++touching;
  }
  return total ? static_cast<double>(touching) / total : 0.0;
}

Rollout RolloutTracker(const TrackerPolicy& policy, const TrackerConfig& cfg,
                       const std::vector<ReferenceClip>& corpus, int clip,
                       Rng* rng) {
  return RunEpisode(cfg, corpus, clip, rng,
                    [&](const TrackingEnv& env, RolloutFrame*) {
                      return policy.MeanAction(env.Observe());
                    });
}

Rollout RolloutStudent(const Student& student, const TrackerConfig& cfg,
                       const std::vector<ReferenceClip>& corpus, int clip,
                       Rng* rng) {
  const DistillConfig& dc = student.config();
  const ReferenceClip& c = corpus.at(clip);
  const Camera camera = SampleCamera(c, dc, rng);
  const Eigen::VectorXd eps = StandardNormal(student.latent_dim(), rng);
  Rng noise = rng->Fork();
  ProprioHistory history(dc.history);
  const KeyJointMap& map = cfg.ppo.key_joint_map;
  return RunEpisode(
      cfg, corpus, clip, rng, [&](const TrackingEnv& env, RolloutFrame* f) {
        const PartialObs obs = Observe(env.state(), env.world(), camera,
                                       history, c, env.frame(), map, &noise);
        const SparseGoal goal =
            MaskGoal(c, env.frame(), dc.inference_mask, map, dc.goal_window);
        history.Push(obs.proprio);
        f->eps = eps;
        return student.Act(obs, goal, eps);
      });
}

std::string EvalReport::ToCsv() const {
  std::ostringstream out;
  out << "clip,rollouts,successful,tracking_success,vision_success,"
         "contact_ratio,R_err_all_frames,T_err_all_frames,"
         "E_finger_all_frames,R_err_successful,T_err_successful,"
         "E_finger_successful\n";
  auto line = [&out](const EvalRow& r) {
    out << r.label << ',' << r.rollouts << ',' << r.successful << ','
        << Cell(r.tracking_success) << ',' << Cell(r.vision_success) << ','
        << Cell(r.contact_ratio) << ',' << Cell(r.rotation_error_all) << ','
        << Cell(r.translation_error_all) << ',' << Cell(r.finger_error_all)
        << ',' << Cell(r.rotation_error_success) << ','
        << Cell(r.translation_error_success) << ','
        << Cell(r.finger_error_success) << '\n';
  };
  for (const EvalRow& r : clips) line(r);
  if (!clips.empty()) line(aggregate);
  return out.str();
}

nlohmann::json EvalReport::ToJson() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const EvalRow& r : clips) rows.push_back(RowJson(r));
  return {{"policy", policy},
          {"seed", seed},
          {"rollouts_per_clip", rollouts_per_clip},
          {"aggregate", clips.empty() ? nlohmann::json(nullptr)
                                      : RowJson(aggregate)},
          {"clips", rows}};
}

EvalReport Evaluate(const PolicyCheckpoint& checkpoint,
                    const std::vector<ReferenceClip>& corpus,
                    const EvalConfig& cfg, uint64_t seed) {
  cfg.Validate();
  TrackerConfig tcfg;
  std::optional<TrackerPolicy> tracker;
  std::optional<Student> student;
  if (checkpoint.kind == "tracker") {
    tracker = LoadTrackerPolicy(checkpoint, &tcfg);
  } else if (checkpoint.kind == "student") {
    student = Student::FromCheckpoint(checkpoint);
    if (!checkpoint.config.contains("tracker")) {
      throw ConfigError("student checkpoint lacks its tracker config");
    }
    tcfg = TrackerConfig::FromJson(checkpoint.config["tracker"]);
    if (student->action_dim() != ActionDim(tcfg.robot)) {
      throw ConfigError("student action dimension does not match its robot");
    }
  } else {
    throw ConfigError("cannot evaluate a '" + checkpoint.kind + "' checkpoint");
  }
  for (const ReferenceClip& c : corpus) c.Validate();

  EvalReport report;
  report.policy = checkpoint.kind;
  report.seed = seed;
  report.rollouts_per_clip = cfg.rollouts_per_clip;
  const int n = cfg.rollouts_per_clip;
  const int clips = static_cast<int>(corpus.size());
  if (n == 0 || clips == 0) return report;

  Rng root(seed);
  std::vector<Rng> rngs;
  for (int i = 0; i < clips * n; ++i) rngs.push_back(root.Fork());
  std::vector<Rollout> rollouts(clips * n);
  ParallelFor(clips * n, cfg.threads, [&](int i) {
    rollouts[i] = tracker ? RolloutTracker(*tracker, tcfg, corpus, i / n,
                                           &rngs[i])
                          : RolloutStudent(*student, tcfg, corpus, i / n,
                                           &rngs[i]);
  });

  std::vector<std::optional<double>> r_s, t_s, e_s;
  for (int c = 0; c < clips; ++c) {
    const ReferenceClip& clip = corpus[c];
    const TerminationEnvelope envelope = TerminationEnvelope::Frozen(
        clip.length(), cfg.kappa, cfg.contact_criterion,
        tcfg.rse.contact_window);
    EvalRow row;
    row.label = std::to_string(c);
    row.rollouts = n;
    std::vector<double> tracking, vision, contact, ra, ta, ea;
    std::vector<double> rs, ts, es;
    for (int k = 0; k < n; ++k) {
      const Rollout& r = rollouts[c * n + k];
      const TrackingMetrics m = ComputeTrackingMetrics(
          r, clip, tcfg.robot, tcfg.ppo.key_joint_map);
      const bool ok = TrackingSuccess(r, clip, envelope, cfg);
      tracking.push_back(ok);
      vision.push_back(VisionSuccess(r, clip, cfg));
      contact.push_back(ContactRatio(r, clip));
      ra.insert(ra.end(), m.rotation_error.begin(), m.rotation_error.end());
      ta.insert(ta.end(), m.translation_error.begin(),
                m.translation_error.end());
      ea.insert(ea.end(), m.finger_error.begin(), m.finger_error.end());
      if (ok) {
        ++row.successful;
        rs.insert(rs.end(), m.rotation_error.begin(), m.rotation_error.end());
        ts.insert(ts.end(), m.translation_error.begin(),
                  m.translation_error.end());
        es.insert(es.end(), m.finger_error.begin(), m.finger_error.end());
      }
    }
    row.tracking_success = Mean(tracking);
    row.vision_success = Mean(vision);
    row.contact_ratio = Mean(contact);
    row.rotation_error_all = Mean(ra);
    row.translation_error_all = Mean(ta);
    row.finger_error_all = Mean(ea);
    if (!rs.empty()) {
      row.rotation_error_success = Mean(rs);
      row.translation_error_success = Mean(ts);
      row.finger_error_success = Mean(es);
    }
    r_s.push_back(row.rotation_error_success);
    t_s.push_back(row.translation_error_success);
    e_s.push_back(row.finger_error_success);
    report.clips.push_back(std::move(row));
  }

  EvalRow& a = report.aggregate;
  a.label = "mean";
  std::vector<double> cols[6];
  for (const EvalRow& r : report.clips) {
    a.rollouts += r.rollouts;
    a.successful += r.successful;
    cols[0].push_back(r.tracking_success);
    cols[1].push_back(r.vision_success);
    cols[2].push_back(r.contact_ratio);
    cols[3].push_back(r.rotation_error_all);
    cols[4].push_back(r.translation_error_all);
    cols[5].push_back(r.finger_error_all);
  }
  a.tracking_success = Mean(cols[0]);
  a.vision_success = Mean(cols[1]);
  a.contact_ratio = Mean(cols[2]);
  a.rotation_error_all = Mean(cols[3]);
  a.translation_error_all = Mean(cols[4]);
  a.finger_error_all = Mean(cols[5]);
  if (a.successful > 0) {
    a.rotation_error_success = OptionalMean(r_s);
    a.translation_error_success = OptionalMean(t_s);
    a.finger_error_success = OptionalMean(e_s);
  }
  return report;
}

void WriteReport(const EvalReport& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream csv(dir + "/eval.csv");
  std::ofstream json(dir + "/eval.json");
  if (!csv || !json) throw IoError("cannot write the report to " + dir);
  csv << report.ToCsv();
  json << report.ToJson().dump(2) << '\n';
  if (!csv || !json) throw IoError("failed writing the report to " + dir);
}

std::string RolloutToJsonl(const Rollout& r) {
  std::ostringstream out;
  for (const RolloutFrame& f : r.frames) {
    const SimState& s = f.state;
    nlohmann::json j = {
        {"t", f.t},
        {"clip", r.clip},
        {"q", std::vector<double>(s.q.data(), s.q.data() + s.q.size())},
        {"object",
         {s.object_pose.position.x(), s.object_pose.position.y(),
          s.object_pose.rotation.value()}},
        {"contact", s.contact},
        {"action", std::vector<double>(f.action.data(),
                                       f.action.data() + f.action.size())},
        {"reward", f.reward.total}};
    nlohmann::json joints = nlohmann::json::array();
    for (const Vec2& p : s.joint_position) joints.push_back({p.x(), p.y()});
    j["joints"] = joints;
    if (f.eps.size() > 0) {
      j["eps"] = std::vector<double>(f.eps.data(), f.eps.data() + f.eps.size());
    }
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace dexscope

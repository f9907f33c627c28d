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

#include "dexscope/ppo.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"
#include "dexscope/parallel.h"

namespace dexscope {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

nlohmann::json MapToJson(const KeyJointMap& m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [r, d] : m.pairs) out.push_back({r, d});
  return out;
}

KeyJointMap MapFromJson(const nlohmann::json& j) {
  KeyJointMap m;
  try {
    for (const auto& p : j) {
      if (p.size() != 2) throw ConfigError("key-joint pairs need two ids");
      m.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("key_joint_map: ") + e.what());
  }
  return m;
}

template <typename Scalar>
Scalar ClampedLogStd(Scalar v) {
  return std::clamp(v, static_cast<Scalar>(DiagGaussian::kMinLogStd),
                    static_cast<Scalar>(DiagGaussian::kMaxLogStd));
}

double LogProb(const Eigen::VectorXd& a, const Eigen::VectorXd& mean,
               const Eigen::VectorXf& log_std) {
  double lp = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double ls = ClampedLogStd<float>(log_std[i]);
    const double z = (a[i] - mean[i]) * std::exp(-ls);
    lp -= 0.5 * z * z + ls + kHalfLog2Pi;
  }
  return lp;
}

template <typename Scalar>
void ClipGradNorm(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* g, double max) {
  const double n = static_cast<double>(g->norm());
  if (!std::isfinite(n)) throw NumericalError("non-finite gradient in PPO");
  if (n > max) *g *= static_cast<Scalar>(max / n);
}

}  // namespace

void PpoConfig::Validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("ppo gamma and lambda must lie in [0, 1]");
  }
  if (!(clip > 0.0)) throw ConfigError("ppo clip must be > 0");
  if (epochs < 1 || minibatch_size < 1 || num_envs < 1 || horizon < 1 ||
      iterations < 0 || threads < 1) {
    throw ConfigError("ppo counts must be positive");
  }
  if (!(lr > 0.0) || !(max_grad_norm > 0.0) || !(entropy_coef >= 0.0) ||
      !(value_coef >= 0.0) || !(obs_clip > 0.0)) {
    throw ConfigError("ppo coefficients out of range");
  }
  if (hidden.empty() ||
      std::any_of(hidden.begin(), hidden.end(), [](int h) { return h < 1; })) {
    throw ConfigError("ppo hidden sizes must be positive");
  }
  if (!(wrist_offset_limit >= 0.0) || !(wrist_rotation_limit >= 0.0)) {
    throw ConfigError("ppo wrist limits must be >= 0");
  }
  if (horizons.empty() ||
      std::any_of(horizons.begin(), horizons.end(), [](int k) { return k < 0; })) {
    throw ConfigError("ppo goal horizons must be >= 0");
  }
}

nlohmann::json PpoConfig::ToJson() const {
  return {{"gamma", gamma},
          {"lambda", lambda},
          {"clip", clip},
          {"epochs", epochs},
          {"minibatch_size", minibatch_size},
          {"entropy_coef", entropy_coef},
          {"value_coef", value_coef},
          {"lr", lr},
          {"max_grad_norm", max_grad_norm},
          {"num_envs", num_envs},
          {"horizon", horizon},
          {"iterations", iterations},
          {"hidden", hidden},
          {"init_log_std", init_log_std},
          {"wrist_offset_limit", wrist_offset_limit},
          {"wrist_rotation_limit", wrist_rotation_limit},
          {"obs_clip", obs_clip},
          {"threads", threads},
          {"key_joint_map", MapToJson(key_joint_map)},
          {"horizons", horizons}};
}

PpoConfig PpoConfig::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(
      j,
      {"gamma", "lambda", "clip", "epochs", "minibatch_size", "entropy_coef",
       "value_coef", "lr", "max_grad_norm", "num_envs", "horizon",
       "iterations", "hidden", "init_log_std", "wrist_offset_limit",
       "wrist_rotation_limit", "obs_clip", "threads", "key_joint_map",
       "horizons"},
      "ppo");
  PpoConfig c;
  ReadOptional(j, "gamma", &c.gamma);
  ReadOptional(j, "lambda", &c.lambda);
  ReadOptional(j, "clip", &c.clip);
  ReadOptional(j, "epochs", &c.epochs);
  ReadOptional(j, "minibatch_size", &c.minibatch_size);
  ReadOptional(j, "entropy_coef", &c.entropy_coef);
  ReadOptional(j, "value_coef", &c.value_coef);
  ReadOptional(j, "lr", &c.lr);
  ReadOptional(j, "max_grad_norm", &c.max_grad_norm);
  ReadOptional(j, "num_envs", &c.num_envs);
  ReadOptional(j, "horizon", &c.horizon);
  ReadOptional(j, "iterations", &c.iterations);
  ReadOptional(j, "hidden", &c.hidden);
  ReadOptional(j, "init_log_std", &c.init_log_std);
  ReadOptional(j, "wrist_offset_limit", &c.wrist_offset_limit);
  ReadOptional(j, "wrist_rotation_limit", &c.wrist_rotation_limit);
  ReadOptional(j, "obs_clip", &c.obs_clip);
  ReadOptional(j, "threads", &c.threads);
  if (j.contains("key_joint_map")) c.key_joint_map = MapFromJson(j["key_joint_map"]);
  ReadOptional(j, "horizons", &c.horizons);
  c.Validate();
  return c;
}

void TrackerConfig::Validate() const {
  env.Validate();
  reward.Validate();
  rse.Validate();
  ppo.Validate();
  ppo.key_joint_map.Validate(robot.num_joints(), DemoHand::kNumJoints);
}

nlohmann::json TrackerConfig::ToJson() const {
  return {{"env", env.ToJson()},
          {"robot", robot.ToJson()},
          {"reward", reward.ToJson()},
          {"rse", rse.ToJson()},
          {"ppo", ppo.ToJson()}};
}

TrackerConfig TrackerConfig::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j, {"env", "robot", "reward", "rse", "ppo"}, "config");
  TrackerConfig c;
  if (j.contains("env")) c.env = EnvParams::FromJson(j["env"]);
  if (j.contains("robot")) c.robot = RobotModel::FromJson(j["robot"]);
  if (j.contains("reward")) c.reward = RewardWeights::FromJson(j["reward"]);
  if (j.contains("rse")) c.rse = RseConfig::FromJson(j["rse"]);
  if (j.contains("ppo")) c.ppo = PpoConfig::FromJson(j["ppo"]);
  c.Validate();
  return c;
}

int TrackerObservationSize(const TrackerConfig& cfg) {
  const RobotModel& m = cfg.robot;
  const int nj = m.num_joints(), fingers = m.num_dofs() - 3;
  const int own = 3 + 2 * fingers + 3 + 8 + 2 * (nj - 1) + 3 * nj +
                  m.num_links() + ActionDim(m) + 2 + 3;
  return own + GoalFeatureSize(cfg.ppo.key_joint_map.size(),
                               static_cast<int>(cfg.ppo.horizons.size()));
}

Eigen::VectorXd TrackerObservation(const SimState& s, const World& world,
                                   const ReferenceClip& clip, int t,
                                   const Eigen::VectorXd& prev_action,
                                   const TrackerConfig& cfg) {
  const RobotModel& m = world.model();
  const Pose2 wrist = s.WristPose();
  const int nj = m.num_joints(), fingers = m.num_dofs() - 3;
  const int n = TrackerObservationSize(cfg);
  const int goal = GoalFeatureSize(cfg.ppo.key_joint_map.size(),
                                   static_cast<int>(cfg.ppo.horizons.size()));
  Eigen::VectorXd o(n);
  int k = 0;
  auto put = [&o, &k](double v) { o[k++] = v; };
  auto put2 = [&o, &k](const Vec2& v) {
    o[k++] = v.x();
    o[k++] = v.y();
  };
  const double table = world.params().table_height;
  put(std::sin(wrist.rotation.value()));
  put(std::cos(wrist.rotation.value()));
  put(wrist.position.y() - table);
  for (int i = 0; i < fingers; ++i) put(s.q[3 + i]);
  for (int i = 0; i < fingers; ++i) put(s.v[3 + i]);
  put2(VectorToFrame(wrist, Vec2(s.v[0], s.v[1])));
  put(s.v[2]);
  const double rel = RotDiff(s.object_pose.rotation, wrist.rotation).value();
  put2(ToFrame(wrist, s.object_pose.position));
  put(std::sin(rel));
  put(std::cos(rel));
  put2(VectorToFrame(wrist, s.object_velocity));
  put(s.object_omega);
  put(s.object_pose.position.y() - table);
  for (int j = 1; j < nj; ++j) put2(ToFrame(wrist, s.joint_position[j]));
  for (int j = 0; j < nj; ++j) put2(VectorToFrame(wrist, s.surface_vector[j]));
  for (int j = 0; j < nj; ++j) put(s.surface_distance[j]);
  for (int l = 0; l < m.num_links(); ++l) put(s.contact[l] ? 1.0 : 0.0);
  for (int i = 0; i < prev_action.size(); ++i) put(prev_action[i]);
  put(static_cast<double>(t) / std::max(1, clip.length() - 1));
  put(t >= clip.grasp_onset ? 1.0 : 0.0);
  const ObjectShape& shape = world.shape();
  put(shape.BoundingRadius());
  put(shape.Area());
  put(shape.kind() == ObjectShape::Kind::kCircle ? 1.0 : 0.0);
  o.segment(k, goal) = GoalFeatures(s, m, clip, t, cfg.ppo.horizons,
                                    cfg.ppo.key_joint_map);
  k += goal;
  if (k != n) throw ConfigError("tracker observation layout mismatch");
  return o;
}

PdCommand ActionToCommand(const Eigen::VectorXd& action, const SimState& s,
                          const ReferenceClip& clip, int t,
                          const RobotModel& model, const PpoConfig& cfg) {
  if (action.size() != ActionDim(model)) {
    throw ConfigError("action has the wrong dimension");
  }
  const ReferenceFrame& next = clip.frames[std::min(t + 1, clip.length() - 1)];
  const Pose2 ref(next.joint_position[0], next.joint_rotation[0]);
  const Vec2 residual = cfg.wrist_offset_limit *
                        Vec2(std::clamp(action[0], -1.0, 1.0),
                             std::clamp(action[1], -1.0, 1.0));
  const double turn =
      cfg.wrist_rotation_limit * std::clamp(action[2], -1.0, 1.0);
  const Pose2 target(FromFrame(ref, residual),
                     Angle(ref.rotation.value() + turn));
  const Pose2 wrist = s.WristPose();
  PdCommand cmd;
  cmd.wrist_offset = VectorToFrame(wrist, target.position - wrist.position);
  cmd.wrist_rotation = RotDiff(target.rotation, wrist.rotation).value();
  cmd.finger_targets.resize(model.num_actuated());
  for (int i = 0; i < model.num_actuated(); ++i) {
    const Joint& j = model.joints()[model.actuated()[i]];
    const double mid = 0.5 * (j.lower + j.upper);
    const double half = 0.5 * (j.upper - j.lower);
    cmd.finger_targets[i] = mid + half * std::clamp(action[3 + i], -1.0, 1.0);
  }
  return cmd;
}

RunningNorm::RunningNorm(int dim)
    : mean(Eigen::VectorXd::Zero(dim)), var(Eigen::VectorXd::Ones(dim)) {}

void RunningNorm::Update(const Eigen::MatrixXd& batch) {
  const double nb = static_cast<double>(batch.cols());
  if (nb == 0) return;
  const Eigen::VectorXd bm = batch.rowwise().mean();
  const Eigen::VectorXd bv =
      (batch.colwise() - bm).cwiseAbs2().rowwise().sum() / nb;
  if (count == 0.0) {
    mean = bm;
    var = bv;
    count = nb;
    return;
  }
  const double total = count + nb;
  const Eigen::VectorXd delta = bm - mean;
  mean += delta * (nb / total);
  var = (var * count + bv * nb + delta.cwiseAbs2() * (count * nb / total)) /
        total;
  count = total;
}

Eigen::MatrixXf RunningNorm::Apply(const Eigen::MatrixXd& obs,
                                   double clip) const {
  const Eigen::VectorXd inv = (var.array() + 1e-8).rsqrt();
  return ((obs.colwise() - mean).array().colwise() * inv.array())
      .cwiseMax(-clip)
      .cwiseMin(clip)
      .cast<float>();
}

TrackerPolicy::TrackerPolicy(int obs_dim, int act_dim, const PpoConfig& cfg,
                             Rng* rng)
    : norm_(obs_dim), obs_clip_(cfg.obs_clip) {
  std::vector<int> ps = {obs_dim};
  ps.insert(ps.end(), cfg.hidden.begin(), cfg.hidden.end());
  std::vector<int> vs = ps;
  ps.push_back(act_dim);
  vs.push_back(1);
  pi_ = Mlp<float>(ps);
  vf_ = Mlp<float>(vs);
  pi_.Init(rng, 0.01);
  vf_.Init(rng, 1.0);
  log_std_ = Eigen::VectorXf::Constant(act_dim, static_cast<float>(cfg.init_log_std));
}

Eigen::MatrixXd TrackerPolicy::MeanActions(const Eigen::MatrixXd& obs) const {
  return pi_.Forward(Normalize(obs)).cast<double>();
}

Eigen::VectorXd TrackerPolicy::Values(const Eigen::MatrixXd& obs) const {
  return vf_.Forward(Normalize(obs)).row(0).transpose().cast<double>();
}

Eigen::VectorXd TrackerPolicy::MeanAction(const Eigen::VectorXd& obs) const {
  return MeanActions(obs).col(0);
}

void TrackerPolicy::ToTensors(TensorMap* out) const {
  pi_.ToTensors("policy", out);
  vf_.ToTensors("value", out);
  (*out)["log_std"] = Tensor{
      {static_cast<int>(log_std_.size())},
      std::vector<double>(log_std_.data(), log_std_.data() + log_std_.size())};
  (*out)["obs_mean"] =
      Tensor{{static_cast<int>(norm_.mean.size())},
             std::vector<double>(norm_.mean.data(),
                                 norm_.mean.data() + norm_.mean.size())};
  (*out)["obs_var"] = Tensor{
      {static_cast<int>(norm_.var.size())},
      std::vector<double>(norm_.var.data(), norm_.var.data() + norm_.var.size())};
  (*out)["obs_count"] = Tensor{{1}, {norm_.count}};
}

TrackerPolicy TrackerPolicy::FromTensors(const TensorMap& in, double obs_clip) {
  TrackerPolicy p;
  p.pi_ = Mlp<float>::FromTensors(in, "policy");
  p.vf_ = Mlp<float>::FromTensors(in, "value");
  p.obs_clip_ = obs_clip;
  auto get = [&in](const char* name) -> const Tensor& {
    const auto it = in.find(name);
    if (it == in.end()) {
      throw ConfigError(std::string("checkpoint lacks tensor ") + name);
    }
    return it->second;
  };
  const Tensor& ls = get("log_std");
  p.log_std_ = Eigen::Map<const Eigen::VectorXd>(ls.data.data(), ls.data.size())
                   .cast<float>();
  const Tensor& mean = get("obs_mean");
  const Tensor& var = get("obs_var");
  const int dim = p.pi_.input_size();
  if (static_cast<int>(mean.data.size()) != dim ||
      static_cast<int>(var.data.size()) != dim ||
      p.log_std_.size() != p.pi_.output_size() ||
      p.vf_.input_size() != dim || p.vf_.output_size() != 1) {
    throw ConfigError("tracker checkpoint tensors have inconsistent shapes");
  }
  p.norm_.mean = Eigen::Map<const Eigen::VectorXd>(mean.data.data(), dim);
  p.norm_.var = Eigen::Map<const Eigen::VectorXd>(var.data.data(), dim);
  p.norm_.count = get("obs_count").data.at(0);
  return p;
}

TrackingEnv::TrackingEnv(const TrackerConfig* cfg,
                         const std::vector<ReferenceClip>* corpus)
    : cfg_(cfg),
      corpus_(corpus),
      prev_action_(Eigen::VectorXd::Zero(ActionDim(cfg->robot))) {}

void TrackingEnv::Reset(int c, int frame, const SimState& s,
                        const EnvParams& params) {
  clip_ = c;
  world_ = std::make_unique<World>(cfg_->robot, clip().shape, params);
  state_ = s;
  world_->Refresh(&state_);
  t_ = start_ = frame;
  prev_action_.setZero();
  contact_match_.clear();
}

Eigen::VectorXd TrackingEnv::Observe() const {
  return TrackerObservation(state_, *world_, clip(), t_, prev_action_, *cfg_);
}

StepOutcome TrackingEnv::Step(const Eigen::VectorXd& action,
                              const TerminationEnvelope& envelope) {
  StepOutcome out;
  const Eigen::VectorXd a = action.cwiseMax(-1.0).cwiseMin(1.0);
  const PdCommand cmd =
      ActionToCommand(a, state_, clip(), t_, cfg_->robot, cfg_->ppo);
  const Eigen::VectorXd prev_v = state_.v;
  try {
    state_ = world_->Step(state_, cmd);
  } catch (const NumericalError&) {
    out.aborted = true;
    out.done = true;
    out.reward = RewardBreakdown{0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    return out;
  }
  ++t_;
  const KeyJointMap& map = cfg_->ppo.key_joint_map;
  out.reward = ComputeReward(state_, cfg_->robot, clip(), t_, map,
                             cfg_->reward, a, prev_action_, prev_v,
                             world_->params().control_dt);
  prev_action_ = a;
  contact_match_.push_back(ContactsMatch(state_, cfg_->robot, clip(), t_, map));
  while (static_cast<int>(contact_match_.size()) > envelope.contact_window()) {
    contact_match_.pop_front();
  }
  out.termination = CheckTermination(out.reward, envelope, t_, contact_match_);
  out.reached_end = !out.termination.terminate && t_ == clip().length() - 1;
  out.done = out.termination.terminate || out.reached_end;
  return out;
}

EnvPool::EnvPool(const TrackerConfig* cfg,
                 const std::vector<ReferenceClip>* corpus, uint64_t seed)
    : cfg_(cfg), corpus_(corpus) {
  Rng root(seed);
  for (int i = 0; i < cfg->ppo.num_envs; ++i) {
    envs_.emplace_back(cfg, corpus);
    rngs_.push_back(root.Fork());
  }
}

void EnvPool::ResetEnv(int i, const ScopeState& scope) {
  Rng& rng = rngs_[i];
  const int c = static_cast<int>(rng.UniformInt(corpus_->size()));
  const ReferenceClip& clip = (*corpus_)[c];
  const EnvParams params = Randomize(cfg_->env, &rng);
  const World world(cfg_->robot, clip.shape, params);
  const auto [frame, s] = SampleInit(scope.caches[c], scope.envelopes[c], clip,
                                     world, cfg_->rse, &rng);
  envs_[i].Reset(c, frame, s, params);
}

void EnvPool::ResetAll(const ScopeState& scope) {
  for (int i = 0; i < size(); ++i) ResetEnv(i, scope);
}

RolloutBatch Collect(const TrackerPolicy& policy, EnvPool* pool,
                     ScopeState* scope, const TrackerConfig& cfg) {
  const int e = pool->size(), h = cfg.ppo.horizon;
  const int obs_dim = TrackerObservationSize(cfg);
  const int act_dim = ActionDim(cfg.robot);
  RolloutBatch b;
  b.num_envs = e;
  b.horizon = h;
  b.obs.resize(obs_dim, e * h);
  b.actions.resize(act_dim, e * h);
  b.log_probs.resize(e * h);
  b.values.resize(e * h);
  b.rewards.resize(e * h);
  b.dones.assign(e * h, 0);
  b.reasons.assign(e * h, Criterion::kNone);
  b.frames.assign(e * h, 0);
  b.clips.assign(e * h, 0);
  std::vector<StepOutcome> outcomes(e);
  Eigen::MatrixXd actions(act_dim, e);
  double sums[7] = {0, 0, 0, 0, 0, 0, 0};
  for (int step = 0; step < h; ++step) {
    const int base = step * e;
    auto obs = b.obs.middleCols(base, e);
    ParallelFor(e, cfg.ppo.threads,
                [&](int i) { obs.col(i) = pool->env(i).Observe(); });
    const Eigen::MatrixXf normed = policy.Normalize(obs);
    const Eigen::MatrixXd mean = policy.pi().Forward(normed).cast<double>();
    const Eigen::VectorXd values =
        policy.vf().Forward(normed).row(0).transpose().cast<double>();
    for (int i = 0; i < e; ++i) {
      Rng& rng = pool->rng(i);
      for (int d = 0; d < act_dim; ++d) {
        const double sd =
            std::exp(ClampedLogStd<float>(policy.log_std()[d]));
        actions(d, i) = mean(d, i) + sd * rng.Normal();
      }
      b.log_probs[base + i] =
          LogProb(actions.col(i), mean.col(i), policy.log_std());
      b.values[base + i] = values[i];
      b.frames[base + i] = pool->env(i).frame();
      b.clips[base + i] = pool->env(i).clip_index();
    }
    b.actions.middleCols(base, e) = actions;
    ParallelFor(e, cfg.ppo.threads, [&](int i) {
      TrackingEnv& env = pool->env(i);
      outcomes[i] = env.Step(actions.col(i),
                             scope->envelopes[env.clip_index()]);
    });
    for (int i = 0; i < e; ++i) {
      TrackingEnv& env = pool->env(i);
      const StepOutcome& o = outcomes[i];
      b.rewards[base + i] = o.reward.total;
      b.dones[base + i] = o.done;
      b.reasons[base + i] = o.termination.reason;
      sums[0] += o.reward.total;
      sums[1] += o.reward.joint_position;
      sums[2] += o.reward.object_position;
      sums[3] += o.reward.surface_vector;
      sums[4] += o.reward.contact;
      sums[5] += o.reward.energy;
      const int c = env.clip_index();
      if (!o.done) {
        const RewardBreakdown& r = o.reward;
        const double quality =
            (r.joint_position + r.joint_rotation + r.object_position +
             r.object_rotation + r.surface_vector + r.contact) /
            6.0;
        scope->caches[c].Insert(env.frame(), env.state(), quality);
        continue;
      }
      ++b.episodes;
      if (o.reached_end) ++b.successes;
      scope->envelopes[c].RecordRollout(env.start_frame(), env.frame(),
                                        !o.reached_end, env.frame());
      pool->ResetEnv(i, *scope);
    }
  }
  const double n = static_cast<double>(e * h);
  b.mean_reward.total = sums[0] / n;
  b.mean_reward.joint_position = sums[1] / n;
  b.mean_reward.object_position = sums[2] / n;
  b.mean_reward.surface_vector = sums[3] / n;
  b.mean_reward.contact = sums[4] / n;
  b.mean_reward.energy = sums[5] / n;
  Eigen::MatrixXd last(obs_dim, e);
  ParallelFor(e, cfg.ppo.threads,
              [&](int i) { last.col(i) = pool->env(i).Observe(); });
  b.bootstrap = policy.Values(last);
  if (!b.rewards.allFinite()) throw NumericalError("non-finite reward");
  return b;
}

void Gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
         const std::vector<uint8_t>& dones, double bootstrap, double gamma,
         double lambda, Eigen::VectorXd* advantages, Eigen::VectorXd* returns) {
  const int n = static_cast<int>(rewards.size());
  advantages->resize(n);
  double next_value = bootstrap, next_adv = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    (*advantages)[t] = next_adv;
    next_value = values[t];
  }
  *returns = *advantages + values;
}

void ComputeAdvantages(RolloutBatch* b, double gamma, double lambda) {
  const int e = b->num_envs, h = b->horizon;
  b->advantages.resize(e * h);
  b->returns.resize(e * h);
  Eigen::VectorXd r(h), v(h), adv, ret;
  std::vector<uint8_t> d(h);
  for (int i = 0; i < e; ++i) {
    for (int s = 0; s < h; ++s) {
      r[s] = b->rewards[s * e + i];
      v[s] = b->values[s * e + i];
      d[s] = b->dones[s * e + i];
    }
    Gae(r, v, d, b->bootstrap[i], gamma, lambda, &adv, &ret);
    for (int s = 0; s < h; ++s) {
      b->advantages[s * e + i] = adv[s];
      b->returns[s * e + i] = ret[s];
    }
  }
}

SurrogateTerm ClippedSurrogate(double logp, double old_logp, double adv,
                               double clip) {
  const double ratio = std::exp(logp - old_logp);
  const double unclipped = ratio * adv;
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
  const bool outside = std::abs(ratio - 1.0) > clip;
  if (unclipped <= clipped) return {unclipped, ratio * adv, outside};
  return {clipped, 0.0, outside};
}

Eigen::VectorXd NormalizeAdvantages(const Eigen::VectorXd& a) {
  if (a.size() == 0) return a;
  const double mean = a.mean();
  const double var = (a.array() - mean).square().mean();
  return (a.array() - mean) / std::max(std::sqrt(var), 1e-8);
}

template <typename Scalar>
double PpoLossAndGrad(
    const Mlp<Scalar>& pi,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& log_std,
    const Mlp<Scalar>& vf,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& obs,
    const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
    const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns,
    const PpoConfig& cfg, PpoStats* stats, PpoGrads<Scalar>* grads) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const int n = static_cast<int>(obs.cols());
  const int a_dim = static_cast<int>(log_std.size());
  typename Mlp<Scalar>::Cache pc, vc;
  const Matrix mu = grads ? pi.Forward(obs, &pc) : pi.Forward(obs);
  const Matrix v = grads ? vf.Forward(obs, &vc) : vf.Forward(obs);
  Eigen::VectorXd ls(a_dim);
  std::vector<bool> free(a_dim);
  for (int d = 0; d < a_dim; ++d) {
    const double raw = static_cast<double>(log_std[d]);
    ls[d] = ClampedLogStd<double>(raw);
    free[d] = raw > DiagGaussian::kMinLogStd && raw < DiagGaussian::kMaxLogStd;
  }
  const Eigen::VectorXd inv_var = (-2.0 * ls).array().exp();
  Matrix dmu(a_dim, n);
  Eigen::VectorXd dls = Eigen::VectorXd::Zero(a_dim);
  Matrix dv(1, n);
  double surr = 0.0, vloss = 0.0, kl = 0.0, clipped = 0.0;
  for (int j = 0; j < n; ++j) {
    double logp = 0.0;
    for (int d = 0; d < a_dim; ++d) {
      const double diff = actions(d, j) - static_cast<double>(mu(d, j));
      logp -= 0.5 * diff * diff * inv_var[d] + ls[d] + kHalfLog2Pi;
    }
    const SurrogateTerm term =
        ClippedSurrogate(logp, old_log_probs[j], advantages[j], cfg.clip);
    surr += term.value;
    kl += old_log_probs[j] - logp;
    clipped += term.clipped ? 1.0 : 0.0;
    const double g = -term.dlogp / n;  // d loss / d logp
    for (int d = 0; d < a_dim; ++d) {
      const double diff = actions(d, j) - static_cast<double>(mu(d, j));
      dmu(d, j) = static_cast<Scalar>(g * diff * inv_var[d]);
      dls[d] += g * (diff * diff * inv_var[d] - 1.0);
    }
    const double err = static_cast<double>(v(0, j)) - returns[j];
    vloss += err * err;
    dv(0, j) = static_cast<Scalar>(2.0 * cfg.value_coef * err / n);
  }
  surr /= n;
  vloss /= n;
  const double entropy = ls.sum() + a_dim * (0.5 + kHalfLog2Pi);
  const double loss = -surr + cfg.value_coef * vloss - cfg.entropy_coef * entropy;
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite PPO loss (surrogate " << surr << ", value " << vloss
        << ", entropy " << entropy << ")";
    throw NumericalError(msg.str());
  }
  if (stats) {
    stats->surrogate = surr;
    stats->value_loss = vloss;
    stats->entropy = entropy;
    stats->approx_kl = kl / n;
    stats->clip_fraction = clipped / n;
  }
  if (grads) {
    grads->pi = Vector::Zero(pi.num_params());
    grads->vf = Vector::Zero(vf.num_params());
    pi.Backward(pc, dmu, &grads->pi);
    vf.Backward(vc, dv, &grads->vf);
    grads->log_std.resize(a_dim);
    for (int d = 0; d < a_dim; ++d) {
      grads->log_std[d] =
          free[d] ? static_cast<Scalar>(dls[d] - cfg.entropy_coef) : Scalar(0);
    }
  }
  return loss;
}

template double PpoLossAndGrad<float>(
    const Mlp<float>&, const Eigen::VectorXf&, const Mlp<float>&,
    const Eigen::MatrixXf&, const Eigen::MatrixXd&, const Eigen::VectorXd&,
    const Eigen::VectorXd&, const Eigen::VectorXd&, const PpoConfig&,
    PpoStats*, PpoGrads<float>*);
template double PpoLossAndGrad<double>(
    const Mlp<double>&, const Eigen::VectorXd&, const Mlp<double>&,
    const Eigen::MatrixXd&, const Eigen::MatrixXd&, const Eigen::VectorXd&,
    const Eigen::VectorXd&, const Eigen::VectorXd&, const PpoConfig&,
    PpoStats*, PpoGrads<double>*);

double BatchLoss(const TrackerPolicy& policy, const RolloutBatch& batch,
                 const PpoConfig& cfg, PpoStats* stats) {
  return PpoLossAndGrad<float>(policy.pi(), policy.log_std(), policy.vf(),
                               policy.Normalize(batch.obs), batch.actions,
                               batch.log_probs,
                               NormalizeAdvantages(batch.advantages),
                               batch.returns, cfg, stats, nullptr);
}

PpoStats PpoUpdate(TrackerPolicy* policy, PpoOptimizer* opt,
                   const RolloutBatch& batch, const PpoConfig& cfg, Rng* rng) {
  const int n = batch.size();
  if (batch.advantages.size() != n) {
    throw ConfigError("advantages must be computed before the update");
  }
  const Eigen::VectorXd adv = NormalizeAdvantages(batch.advantages);
  const Eigen::MatrixXf obs = policy->Normalize(batch.obs);
  const int mb = std::min(cfg.minibatch_size, n);
  const int a_dim = static_cast<int>(policy->log_std().size());
  const int np = policy->pi().num_params();
  AdamConfig adam;
  adam.lr = cfg.lr;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  PpoStats total;
  int count = 0;
  Eigen::MatrixXf mobs;
  Eigen::MatrixXd mact;
  Eigen::VectorXd mold, madv, mret;
  Eigen::VectorXf flat(np + a_dim), gflat(np + a_dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng->UniformInt(i + 1)]);
    }
    for (int start = 0; start + mb <= n; start += mb) {
      mobs.resize(obs.rows(), mb);
      mact.resize(batch.actions.rows(), mb);
      mold.resize(mb);
      madv.resize(mb);
      mret.resize(mb);
      for (int j = 0; j < mb; ++j) {
        const int k = order[start + j];
        mobs.col(j) = obs.col(k);
        mact.col(j) = batch.actions.col(k);
        mold[j] = batch.log_probs[k];
        madv[j] = adv[k];
        mret[j] = batch.returns[k];
      }
      PpoStats s;
      PpoGrads<float> g;
      PpoLossAndGrad<float>(policy->pi(), policy->log_std(), policy->vf(),
                            mobs, mact, mold, madv, mret, cfg, &s, &g);
      gflat << g.pi, g.log_std;
      ClipGradNorm(&gflat, cfg.max_grad_norm);
      ClipGradNorm(&g.vf, cfg.max_grad_norm);
      flat << policy->pi().params(), policy->log_std();
      AdamStep(adam, gflat, &flat, &opt->pi);
      policy->pi().params() = flat.head(np);
      policy->log_std() = flat.tail(a_dim);
      AdamStep(adam, g.vf, &policy->vf().params(), &opt->vf);
      total.surrogate += s.surrogate;
      total.value_loss += s.value_loss;
      total.entropy += s.entropy;
      total.approx_kl += s.approx_kl;
      total.clip_fraction += s.clip_fraction;
      ++count;
    }
  }
  if (count > 0) {
    total.surrogate /= count;
    total.value_loss /= count;
    total.entropy /= count;
    total.approx_kl /= count;
    total.clip_fraction /= count;
  }
  return total;
}

std::string TrainLogHeader() {
  return "iteration,mean_total_reward,success_rate,mean_R_J,mean_R_p_o,"
         "mean_R_D,mean_R_C,mean_energy,kappa_mean,wallclock_s";
}

std::string TrainLogLine(const TrainLogRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", r.iteration,
                r.mean_total_reward, r.success_rate, r.mean_r_j, r.mean_r_po,
                r.mean_r_d, r.mean_r_c, r.mean_energy, r.kappa_mean,
                r.wallclock_s);
  return buf;
}

PolicyCheckpoint MakeTrackerCheckpoint(const TrackerPolicy& policy,
                                       const TrackerConfig& cfg,
                                       const ScopeState* scope,
                                       const Rng& rng) {
  PolicyCheckpoint c;
  c.kind = "tracker";
  c.config = cfg.ToJson();
  c.rng_state = rng.SaveState();
  policy.ToTensors(&c.tensors);
  if (scope) {
    nlohmann::json envs = nlohmann::json::array();
    for (const auto& e : scope->envelopes) envs.push_back(e.ToJson());
    c.state["envelopes"] = envs;
  }
  return c;
}

TrackerPolicy LoadTrackerPolicy(const PolicyCheckpoint& c,
                                TrackerConfig* cfg) {
  if (c.kind != "tracker") {
    throw ConfigError("checkpoint kind '" + c.kind + "' is not a tracker");
  }
  *cfg = TrackerConfig::FromJson(c.config);
  TrackerPolicy p = TrackerPolicy::FromTensors(c.tensors, cfg->ppo.obs_clip);
  if (p.obs_dim() != TrackerObservationSize(*cfg) ||
      p.pi().output_size() != ActionDim(cfg->robot)) {
    throw ConfigError("tracker network does not match its configuration");
  }
  return p;
}

TrainResult TrainTracker(
    const TrackerConfig& cfg, const std::vector<ReferenceClip>& corpus,
    uint64_t seed,
    const std::function<void(const TrainLogRow&)>& on_iteration) {
  cfg.Validate();
  if (corpus.empty()) throw ConfigError("tracker training needs clips");
  for (const ReferenceClip& c : corpus) c.Validate();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  TrackerPolicy policy(TrackerObservationSize(cfg), ActionDim(cfg.robot),
                       cfg.ppo, &rng);
  EnvPool pool(&cfg, &corpus, rng.NextU64());
  ScopeState scope;
  for (const ReferenceClip& c : corpus) {
    scope.envelopes.emplace_back(c.length(), cfg.rse);
    scope.caches.emplace_back(c.length(), cfg.rse.cache_capacity,
                              cfg.rse.cache_threshold);
  }
  TrainResult result;
  if (cfg.ppo.iterations > 0) pool.ResetAll(scope);
  PpoOptimizer opt;
  for (int it = 0; it < cfg.ppo.iterations; ++it) {
    RolloutBatch batch = Collect(policy, &pool, &scope, cfg);
    if (cfg.rse.adaptive) {
      for (auto& e : scope.envelopes) e.Update(cfg.rse.mode, cfg.rse.decay);
    }
    ComputeAdvantages(&batch, cfg.ppo.gamma, cfg.ppo.lambda);
    PpoUpdate(&policy, &opt, batch, cfg.ppo, &rng);
    policy.norm().Update(batch.obs);
    TrainLogRow row;
    row.iteration = it;
    row.mean_total_reward = batch.mean_reward.total;
    row.success_rate =
        batch.episodes ? static_cast<double>(batch.successes) / batch.episodes
                       : 0.0;
    row.mean_r_j = batch.mean_reward.joint_position;
    row.mean_r_po = batch.mean_reward.object_position;
    row.mean_r_d = batch.mean_reward.surface_vector;
    row.mean_r_c = batch.mean_reward.contact;
    row.mean_energy = batch.mean_reward.energy;
    double kappa = 0.0;
    for (const auto& e : scope.envelopes) kappa += e.MeanKappa();
    row.kappa_mean = kappa / scope.envelopes.size();
    row.wallclock_s = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    result.log.push_back(row);
    if (on_iteration) on_iteration(row);
  }
  result.checkpoint = MakeTrackerCheckpoint(policy, cfg, &scope, rng);
  return result;
}

}  // namespace dexscope

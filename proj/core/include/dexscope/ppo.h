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

#ifndef DEXSCOPE_PPO_H_
#define DEXSCOPE_PPO_H_

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/demos.h"
#include "dexscope/nn.h"
#include "dexscope/reward.h"
#include "dexscope/rng.h"
#include "dexscope/robot.h"
#include "dexscope/rse.h"
#include "dexscope/sim.h"

namespace dexscope {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatch_size = 1024;
  double entropy_coef = 0.005;
  double value_coef = 0.5;
  double lr = 3e-4;
  double max_grad_norm = 0.5;
  int num_envs = 64;
  int horizon = 64;
  int iterations = 500;
  std::vector<int> hidden = {256, 256, 256};
  double init_log_std = -0.5;
  // Residual wrist action bounds per step, applied around the reference
  // wrist of the next frame.
  double wrist_offset_limit = 0.05;    // m
  double wrist_rotation_limit = 0.3;   // rad
  double obs_clip = 5.0;
  int threads = 1;
  KeyJointMap key_joint_map = KeyJointMap::Default();
  std::vector<int> horizons = DefaultHorizons();

  void Validate() const;
  nlohmann::json ToJson() const;
  static PpoConfig FromJson(const nlohmann::json& j);
  bool operator==(const PpoConfig&) const = default;
};

// Everything that defines a tracking task apart from the demonstrations.
struct TrackerConfig {
  EnvParams env;
  RobotModel robot = RobotModel::DefaultGripper();
  RewardWeights reward;
  RseConfig rse;
  PpoConfig ppo;

  void Validate() const;
  nlohmann::json ToJson() const;
  // Accepts a document with any subset of {env, robot, reward, rse, ppo}.
  static TrackerConfig FromJson(const nlohmann::json& j);
};

// Wrist residual (x, y, rotation) plus one target per actuated finger joint.
inline int ActionDim(const RobotModel& model) {
  return 3 + model.num_actuated();
}

// Privileged observation of the tracker, canonicalized in the wrist frame,
// followed by the goal features.
int TrackerObservationSize(const TrackerConfig& cfg);
Eigen::VectorXd TrackerObservation(const SimState& s, const World& world,
                                   const ReferenceClip& clip, int t,
                                   const Eigen::VectorXd& prev_action,
                                   const TrackerConfig& cfg);

// Maps a policy action (wrist residual in units of the bounds, finger
// targets in units of half the joint range) to a PD command for the step
// from frame t to t + 1.
PdCommand ActionToCommand(const Eigen::VectorXd& action, const SimState& s,
                          const ReferenceClip& clip, int t,
                          const RobotModel& model, const PpoConfig& cfg);

// Running observation statistics (Welford, merged per batch).
struct RunningNorm {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0.0;

  explicit RunningNorm(int dim = 0);
  void Update(const Eigen::MatrixXd& batch);
  Eigen::MatrixXf Apply(const Eigen::MatrixXd& obs, double clip) const;
};

// Gaussian policy and value function of the tracker, trained in float.
class TrackerPolicy {
 public:
  TrackerPolicy() = default;
  TrackerPolicy(int obs_dim, int act_dim, const PpoConfig& cfg, Rng* rng);

  int obs_dim() const { return pi_.input_size(); }
  Mlp<float>& pi() { return pi_; }
  const Mlp<float>& pi() const { return pi_; }
  Mlp<float>& vf() { return vf_; }
  const Mlp<float>& vf() const { return vf_; }
  Eigen::VectorXf& log_std() { return log_std_; }
  const Eigen::VectorXf& log_std() const { return log_std_; }
  RunningNorm& norm() { return norm_; }
  const RunningNorm& norm() const { return norm_; }
  double obs_clip() const { return obs_clip_; }

  Eigen::MatrixXf Normalize(const Eigen::MatrixXd& obs) const {
    return norm_.Apply(obs, obs_clip_);
  }
  // Columns are observations.
  Eigen::MatrixXd MeanActions(const Eigen::MatrixXd& obs) const;
  Eigen::VectorXd Values(const Eigen::MatrixXd& obs) const;
  Eigen::VectorXd MeanAction(const Eigen::VectorXd& obs) const;

  void ToTensors(TensorMap* out) const;
  static TrackerPolicy FromTensors(const TensorMap& in, double obs_clip);

 private:
  Mlp<float> pi_;
  Mlp<float> vf_;
  Eigen::VectorXf log_std_;
  RunningNorm norm_;
  double obs_clip_ = 5.0;
};

struct StepOutcome {
  RewardBreakdown reward;
  Termination termination;
  bool done = false;
  bool reached_end = false;
  bool aborted = false;  // non-finite simulation
};

// One tracking episode on one clip.
class TrackingEnv {
 public:
  TrackingEnv(const TrackerConfig* cfg, const std::vector<ReferenceClip>* corpus);

  // Starts an episode on clip `c` from frame `frame` and state `s`.
  void Reset(int c, int frame, const SimState& s, const EnvParams& params);
  Eigen::VectorXd Observe() const;
  StepOutcome Step(const Eigen::VectorXd& action,
                   const TerminationEnvelope& envelope);

  int clip_index() const { return clip_; }
  int frame() const { return t_; }
  int start_frame() const { return start_; }
  const SimState& state() const { return state_; }
  const World& world() const { return *world_; }
  const ReferenceClip& clip() const { return (*corpus_)[clip_]; }
  const Eigen::VectorXd& last_action() const { return prev_action_; }

 private:
  const TrackerConfig* cfg_;
  const std::vector<ReferenceClip>* corpus_;
  std::unique_ptr<World> world_;
  SimState state_;
  int clip_ = 0;
  int t_ = 0;
  int start_ = 0;
  Eigen::VectorXd prev_action_;
  std::deque<bool> contact_match_;
};

struct RolloutBatch {
  int num_envs = 0;
  int horizon = 0;
  // Column / entry index = step * num_envs + env.
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd values;
  Eigen::VectorXd rewards;
  std::vector<uint8_t> dones;
  std::vector<Criterion> reasons;
  std::vector<int> frames;
  std::vector<int> clips;
  Eigen::VectorXd bootstrap;  // value of the state after the last step
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  // Episode bookkeeping for logging.
  int episodes = 0;
  int successes = 0;
  RewardBreakdown mean_reward;

  int size() const { return num_envs * horizon; }
};

// Per-clip adaptive state of training.
struct ScopeState {
  std::vector<TerminationEnvelope> envelopes;
  std::vector<InitStateCache> caches;
};

// Vectorized environments with their own generators.
class EnvPool {
 public:
  EnvPool(const TrackerConfig* cfg, const std::vector<ReferenceClip>* corpus,
          uint64_t seed);
  int size() const { return static_cast<int>(envs_.size()); }
  TrackingEnv& env(int i) { return envs_[i]; }
  Rng& rng(int i) { return rngs_[i]; }
  // Resets env i through prioritized initialization.
  void ResetEnv(int i, const ScopeState& scope);
  void ResetAll(const ScopeState& scope);

 private:
  const TrackerConfig* cfg_;
  const std::vector<ReferenceClip>* corpus_;
  std::vector<TrackingEnv> envs_;
  std::vector<Rng> rngs_;
};

// Steps every environment for cfg.horizon steps, recording rollouts into
// the envelope statistics and caching in-scope states.
RolloutBatch Collect(const TrackerPolicy& policy, EnvPool* pool,
                     ScopeState* scope, const TrackerConfig& cfg);

// Generalized advantage estimation over one sequence.
void Gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
         const std::vector<uint8_t>& dones, double bootstrap, double gamma,
         double lambda, Eigen::VectorXd* advantages, Eigen::VectorXd* returns);
// Fills batch advantages and returns per environment.
void ComputeAdvantages(RolloutBatch* batch, double gamma, double lambda);

struct PpoStats {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

struct PpoOptimizer {
  AdamState<float> pi;
  AdamState<float> vf;
};

// Clipped surrogate of one sample given new and old log-probabilities and
// the advantage, with d(objective)/d(new log-prob).
struct SurrogateTerm {
  double value;
  double dlogp;
  bool clipped;
};
SurrogateTerm ClippedSurrogate(double logp, double old_logp, double adv,
                               double clip);

template <typename Scalar>
struct PpoGrads {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pi;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> log_std;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vf;
};

// Mean PPO loss over the columns of `obs` (already normalized):
// -surrogate + value_coef * (V - R)^2 - entropy_coef * entropy. Fills the
// parameter gradients when `grads` is non-null.
template <typename Scalar>
double PpoLossAndGrad(
    const Mlp<Scalar>& pi,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& log_std,
    const Mlp<Scalar>& vf,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& obs,
    const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
    const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns,
    const PpoConfig& cfg, PpoStats* stats, PpoGrads<Scalar>* grads);

// Loss of the whole batch under the current policy, with the batch's
// normalized advantages.
double BatchLoss(const TrackerPolicy& policy, const RolloutBatch& batch,
                 const PpoConfig& cfg, PpoStats* stats = nullptr);

// Normalized advantages (zero mean, unit variance, sigma >= 1e-8).
Eigen::VectorXd NormalizeAdvantages(const Eigen::VectorXd& a);

PpoStats PpoUpdate(TrackerPolicy* policy, PpoOptimizer* opt,
                   const RolloutBatch& batch, const PpoConfig& cfg, Rng* rng);

struct TrainLogRow {
  int iteration = 0;
  double mean_total_reward = 0.0;
  double success_rate = 0.0;
  double mean_r_j = 0.0;
  double mean_r_po = 0.0;
  double mean_r_d = 0.0;
  double mean_r_c = 0.0;
  double mean_energy = 0.0;
  double kappa_mean = 0.0;
  double wallclock_s = 0.0;
};
std::string TrainLogHeader();
std::string TrainLogLine(const TrainLogRow& r);

struct TrainResult {
  PolicyCheckpoint checkpoint;
  std::vector<TrainLogRow> log;
};

PolicyCheckpoint MakeTrackerCheckpoint(const TrackerPolicy& policy,
                                       const TrackerConfig& cfg,
                                       const ScopeState* scope,
                                       const Rng& rng);
// Loads policy and configuration; throws ConfigError for the wrong kind.
TrackerPolicy LoadTrackerPolicy(const PolicyCheckpoint& c,
                                TrackerConfig* cfg);

// Collect / envelope update / PPO update for cfg.ppo.iterations. The
// callback, when set, sees every log row as it is produced.
TrainResult TrainTracker(const TrackerConfig& cfg,
                         const std::vector<ReferenceClip>& corpus,
                         uint64_t seed,
                         const std::function<void(const TrainLogRow&)>&
                             on_iteration = nullptr);

}  // namespace dexscope

#endif  // DEXSCOPE_PPO_H_

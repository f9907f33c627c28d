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

#ifndef DEXSCOPE_DISTILL_H_
#define DEXSCOPE_DISTILL_H_

#include <array>
#include <deque>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/demos.h"
#include "dexscope/nn.h"
#include "dexscope/ppo.h"
#include "dexscope/rng.h"
#include "dexscope/sim.h"

namespace dexscope {

// Which goal components are visible (wrist window, object window, finger
// targets).
struct MaskSpec {
  bool wrist = true;
  bool object = false;
  bool fingers = false;
  bool operator==(const MaskSpec&) const = default;
};

struct DistillConfig {
  int history = 4;
  int latent_dim = 32;
  std::vector<int> hidden = {256, 256, 256};
  std::vector<int> point_hidden = {64, 64};
  int point_feature = 128;
  // Camera on an arc above the table, aimed at the task workspace.
  double camera_min_bearing = std::numbers::pi / 6;
  double camera_max_bearing = 5 * std::numbers::pi / 6;
  double camera_min_range = 0.5;  // m
  double camera_max_range = 1.0;  // m
  double camera_fov = 1.2;        // rad
  int camera_rays = 64;
  double point_scale = 0.1;  // m, divides point coordinates
  int goal_window = 15;
  double wrist_unmask_prob = 0.5;
  double object_unmask_prob = 0.5;
  double finger_unmask_prob = 0.0;
  MaskSpec inference_mask;
  double beta_max = 1.0;
  int iterations = 150;
  int num_envs = 32;
  int horizon = 32;
  int epochs = 1;
  int minibatch_size = 256;
  int buffer_iterations = 4;
  double lr = 3e-4;
  double max_grad_norm = 1.0;
  // Probability that a training episode starts at frame 0; otherwise the
  // start frame is uniform and the state comes from the reference.
  double start_at_zero_prob = 0.5;
  // Thresholds that end student training episodes that drift off the clip.
  std::array<double, 4> rollout_kappa = {0.0, 0.15, 0.0, 0.0};
  int threads = 1;

  void Validate() const;
  nlohmann::json ToJson() const;
  static DistillConfig FromJson(const nlohmann::json& j);
  bool operator==(const DistillConfig&) const = default;
};

struct Camera {
  Pose2 pose;  // rays fan around the pose heading
  double fov = 1.2;
  int rays = 64;
};

// Camera at a random bearing and range around the midpoint of the clip's
// object start and goal, looking at it.
Camera SampleCamera(const ReferenceClip& clip, const DistillConfig& cfg,
                    Rng* rng);

// Proprioception: wrist x, y, rotation and the revolute joint angles. No
// velocities.
Eigen::VectorXd Proprioception(const SimState& s);

// The last `capacity` proprioception frames, oldest first.
class ProprioHistory {
 public:
  explicit ProprioHistory(int capacity = 4) : capacity_(capacity) {}
  void Push(const Eigen::VectorXd& proprio);
  void Clear() { frames_.clear(); }
  int capacity() const { return capacity_; }
  // Columns oldest first, zero columns in front when fewer were pushed.
  Eigen::MatrixXd Frames(int dim) const;

 private:
  int capacity_;
  std::deque<Eigen::VectorXd> frames_;
};

// What the deployed policy may see. All quantities are in world
// coordinates; there are no velocities, contacts or object poses.
struct PartialObs {
  Eigen::VectorXd proprio;
  // Columns are points: x, y, then a one-hot tag (object surface, then one
  // entry per mapped robot key joint).
  Eigen::MatrixXd points;
  Eigen::MatrixXd history;  // proprio frames, oldest first
  bool post_onset = false;
};

// Sparse goal: each component carries its values only when its mask bit is
// set; masked components hold the zero token and a cleared bit.
struct SparseGoal {
  MaskSpec mask;
  Eigen::VectorXd wrist;    // per window step: x, y, rotation
  Eigen::VectorXd object;   // per window step: x, y, rotation
  Eigen::VectorXd fingers;  // mapped demonstrator key joints at t + 1: x, y
};

PartialObs Observe(const SimState& s, const World& world, const Camera& camera,
                   const ProprioHistory& history, const ReferenceClip& clip,
                   int t, const KeyJointMap& map, Rng* rng);

// Fixed-spec masking (inference) and sampled masking (training).
SparseGoal MaskGoal(const ReferenceClip& clip, int t, const MaskSpec& spec,
                    const KeyJointMap& map, int window);
MaskSpec SampleMaskSpec(const DistillConfig& cfg, Rng* rng);

// Network inputs derived from (PartialObs, SparseGoal) only, canonicalized
// in the current wrist frame.
struct StudentFeatures {
  Eigen::MatrixXd points;  // point_dim x n, coordinates / point_scale
  Eigen::VectorXd obs;     // proprio, history, phase
  Eigen::VectorXd goal;    // wrist, object, fingers, then mask bits
};
StudentFeatures Featurize(const PartialObs& obs, const SparseGoal& goal,
                          const DistillConfig& cfg);
int StudentPointDim(const KeyJointMap& map);
int StudentObsSize(const RobotModel& model, const DistillConfig& cfg);
int StudentGoalSize(const KeyJointMap& map, const DistillConfig& cfg);

struct LatentSkill {
  Eigen::VectorXd z;
  Eigen::VectorXd eps;
  Eigen::VectorXd mu_p, sigma_p;  // prior (sigma as standard deviations)
  Eigen::VectorXd mu_q, sigma_q;  // encoder residual
};

// z = mu_p + mu_q + sigma_q * eps.
Eigen::VectorXd SampleLatent(const Eigen::VectorXd& mu_p,
                             const Eigen::VectorXd& mu_q,
                             const Eigen::VectorXd& sigma_q,
                             const Eigen::VectorXd& eps);
// KL(N(mu_p + mu_q, sigma_q^2) || N(mu_p, sigma_p^2)), summed over
// dimensions.
double KlLoss(const Eigen::VectorXd& sigma_p, const Eigen::VectorXd& mu_q,
              const Eigen::VectorXd& sigma_q);

// Linear ramp from 0 to beta_max over the first half of training.
double BetaSchedule(int iteration, int total, double beta_max);

template <typename Scalar>
struct StudentNets {
  PointSetEncoder<Scalar> points;
  Mlp<Scalar> encoder;  // privileged observation -> (mu_q, log sigma_q)
  Mlp<Scalar> prior;    // (obs, point feature, goal) -> (mu_p, log sigma_p)
  Mlp<Scalar> decoder;  // (z, obs, point feature) -> action, no output bias

  int num_params() const {
    return points.num_params() + encoder.num_params() + prior.num_params() +
           decoder.num_params();
  }
  // Flat parameters in gradient order: points, encoder, prior, decoder.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> GetParams() const;
  void SetParams(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p);
  template <typename Other>
  StudentNets<Other> Cast() const;
};

struct DistillSample {
  StudentFeatures features;
  Eigen::VectorXd privileged;  // teacher observation, raw
  Eigen::VectorXd eps;
  Eigen::VectorXd target;  // teacher action
};

// Minibatch inputs after normalization.
template <typename Scalar>
struct DistillBatch {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Matrix> points;
  Matrix obs;
  Matrix goal;
  Matrix privileged;
  Matrix eps;
  Matrix target;
  int size() const { return static_cast<int>(obs.cols()); }
};

struct DistillLoss {
  double rec = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Mean over the batch of |a - decode(z)|^2 + beta * KL. Adds gradients in
// StudentNets::GetParams order when `grad` is non-null.
template <typename Scalar>
DistillLoss DistillLossAndGrad(const StudentNets<Scalar>& nets,
                               const DistillBatch<Scalar>& batch, double beta,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* grad);

// The distilled policy with its input normalizers.
class Student {
 public:
  Student() = default;
  Student(const RobotModel& model, const KeyJointMap& map,
          int privileged_dim, const DistillConfig& cfg, Rng* rng);

  const DistillConfig& config() const { return cfg_; }
  StudentNets<float>& nets() { return nets_; }
  const StudentNets<float>& nets() const { return nets_; }
  RunningNorm& input_norm() { return input_norm_; }
  RunningNorm& privileged_norm() { return privileged_norm_; }
  const RunningNorm& privileged_norm() const { return privileged_norm_; }
  void set_privileged_clip(double clip) { privileged_clip_ = clip; }
  bool has_encoder() const { return nets_.encoder.num_layers() > 0; }
  int latent_dim() const { return cfg_.latent_dim; }
  int action_dim() const { return nets_.decoder.output_size(); }

  // (mu_q, sigma_q) from the privileged observation.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> Encode(
      const Eigen::VectorXd& privileged) const;
  std::pair<Eigen::VectorXd, Eigen::VectorXd> Prior(
      const PartialObs& obs, const SparseGoal& goal) const;
  Eigen::VectorXd Decode(const Eigen::VectorXd& z,
                         const PartialObs& obs) const;
  // Prior-only action: z = mu_p + sigma_p * eps with the episode's eps.
  Eigen::VectorXd Act(const PartialObs& obs, const SparseGoal& goal,
                      const Eigen::VectorXd& eps) const;

  DistillBatch<float> MakeBatch(const std::vector<const DistillSample*>& s)
      const;

  PolicyCheckpoint ToCheckpoint(const nlohmann::json& config,
                                const Rng& rng) const;
  // The encoder section is optional.
  static Student FromCheckpoint(const PolicyCheckpoint& c);

 private:
  // Normalized [obs, goal] column.
  Eigen::VectorXf InputColumn(const StudentFeatures& f) const;
  Eigen::VectorXf PointFeature(const StudentFeatures& f) const;
  // z = mu_p + sigma_p * eps from featurized inputs.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> PriorOf(
      const StudentFeatures& f) const;
  Eigen::VectorXd DecodeOf(const Eigen::VectorXd& z,
                           const StudentFeatures& f) const;

  DistillConfig cfg_;
  StudentNets<float> nets_;
  RunningNorm input_norm_;       // over [obs, goal]
  RunningNorm privileged_norm_;  // copied from the teacher
  double privileged_clip_ = 5.0;
};

// One student training environment.
struct StudentEpisode {
  Camera camera;
  ProprioHistory history;
  Eigen::VectorXd eps;
  MaskSpec mask;
  Rng rng;
};

struct DistillLogRow {
  int iteration = 0;
  double l_rec = 0.0;
  double l_kl = 0.0;
  double beta = 0.0;
  double student_success_rate = 0.0;
};
std::string DistillLogHeader();
std::string DistillLogLine(const DistillLogRow& r);

struct DistillResult {
  PolicyCheckpoint checkpoint;
  std::vector<DistillLogRow> log;
};

// DAgger: roll out the prior-only student, label every visited state with
// the teacher's mean action, regress with the beta-weighted KL term. Throws
// ConfigError when the teacher's action dimension does not match the robot.
DistillResult DaggerTrain(const PolicyCheckpoint& teacher,
                          const std::vector<ReferenceClip>& corpus,
                          const DistillConfig& cfg, uint64_t seed,
                          const std::function<void(const DistillLogRow&)>&
                              on_iteration = nullptr);

}  // namespace dexscope

#endif  // DEXSCOPE_DISTILL_H_

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

#include "dexscope/distill.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"
#include "dexscope/parallel.h"

namespace dexscope {
namespace {

constexpr int kPoseDim = 3;  // x, y, rotation per goal window step

nlohmann::json MaskToJson(const MaskSpec& m) {
  return {{"wrist", m.wrist}, {"object", m.object}, {"fingers", m.fingers}};
}

MaskSpec MaskFromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j, {"wrist", "object", "fingers"}, "inference_mask");
  MaskSpec m;
  ReadOptional(j, "wrist", &m.wrist);
  ReadOptional(j, "object", &m.object);
  ReadOptional(j, "fingers", &m.fingers);
  return m;
}

void NormToTensors(const RunningNorm& n, const std::string& prefix,
                   TensorMap* out) {
  const int d = static_cast<int>(n.mean.size());
  (*out)[prefix + ".mean"] =
      Tensor{{d}, std::vector<double>(n.mean.data(), n.mean.data() + d)};
  (*out)[prefix + ".var"] =
      Tensor{{d}, std::vector<double>(n.var.data(), n.var.data() + d)};
  (*out)[prefix + ".count"] = Tensor{{1}, {n.count}};
}

RunningNorm NormFromTensors(const TensorMap& in, const std::string& prefix) {
  const auto mean = in.find(prefix + ".mean");
  const auto var = in.find(prefix + ".var");
  const auto count = in.find(prefix + ".count");
  if (mean == in.end() || var == in.end() || count == in.end() ||
      mean->second.data.size() != var->second.data.size() ||
      count->second.data.size() != 1) {
    throw ConfigError("checkpoint lacks normalizer " + prefix);
  }
  const int d = static_cast<int>(mean->second.data.size());
  RunningNorm n(d);
  n.mean = Eigen::Map<const Eigen::VectorXd>(mean->second.data.data(), d);
  n.var = Eigen::Map<const Eigen::VectorXd>(var->second.data.data(), d);
  n.count = count->second.data[0];
  return n;
}

// Gaussian head: top half mean, bottom half log-std (clamped).
template <typename Matrix>
void SplitHead(const Matrix& out, int latent, Matrix* mu, Matrix* log_std) {
  using Scalar = typename Matrix::Scalar;
  *mu = out.topRows(latent);
  *log_std = out.bottomRows(latent).cwiseMax(Scalar(DiagGaussian::kMinLogStd))
                 .cwiseMin(Scalar(DiagGaussian::kMaxLogStd));
}

template <typename Matrix>
void MaskClamped(const Matrix& raw, Matrix* grad) {
  using Scalar = typename Matrix::Scalar;
  for (int j = 0; j < raw.cols(); ++j) {
    for (int i = 0; i < raw.rows(); ++i) {
      if (raw(i, j) <= Scalar(DiagGaussian::kMinLogStd) ||
          raw(i, j) >= Scalar(DiagGaussian::kMaxLogStd)) {
        (*grad)(i, j) = Scalar(0);
      }
    }
  }
}

Eigen::VectorXd Concat(std::initializer_list<const Eigen::VectorXd*> parts) {
  int n = 0;
  for (const auto* p : parts) n += static_cast<int>(p->size());
  Eigen::VectorXd out(n);
  int k = 0;
  for (const auto* p : parts) {
    out.segment(k, p->size()) = *p;
    k += static_cast<int>(p->size());
  }
  return out;
}

}  // namespace

void DistillConfig::Validate() const {
  if (history < 0 || latent_dim < 1 || point_feature < 1 || goal_window < 1 ||
      camera_rays < 1) {
    throw ConfigError("distill sizes must be positive");
  }
  auto positive = [](const std::vector<int>& v) {
    return !v.empty() &&
           std::all_of(v.begin(), v.end(), [](int h) { return h > 0; });
  };
  if (!positive(hidden) || !positive(point_hidden)) {
    throw ConfigError("distill hidden sizes must be positive");
  }
  if (!(camera_min_bearing <= camera_max_bearing) ||
      !(camera_min_range > 0.0 && camera_min_range <= camera_max_range) ||
      !(camera_fov > 0.0 && camera_fov < std::numbers::pi) ||
      !(point_scale > 0.0)) {
    throw ConfigError("distill camera settings out of range");
  }
  for (double p : {wrist_unmask_prob, object_unmask_prob, finger_unmask_prob,
                   start_at_zero_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError("distill probabilities must lie in [0, 1]");
    }
  }
  if (!(beta_max >= 0.0) || !(lr > 0.0) || !(max_grad_norm > 0.0)) {
    throw ConfigError("distill coefficients out of range");
  }
  if (iterations < 0 || num_envs < 1 || horizon < 1 || epochs < 1 ||
      minibatch_size < 1 || buffer_iterations < 1 || threads < 1) {
    throw ConfigError("distill counts must be positive");
  }
  for (double k : rollout_kappa) {
    if (!(k >= 0.0 && k <= 1.0)) {
      throw ConfigError("rollout_kappa entries must lie in [0, 1]");
    }
  }
}

nlohmann::json DistillConfig::ToJson() const {
  return {{"history", history},
          {"latent_dim", latent_dim},
          {"hidden", hidden},
          {"point_hidden", point_hidden},
          {"point_feature", point_feature},
          {"camera_min_bearing", camera_min_bearing},
          {"camera_max_bearing", camera_max_bearing},
          {"camera_min_range", camera_min_range},
          {"camera_max_range", camera_max_range},
          {"camera_fov", camera_fov},
          {"camera_rays", camera_rays},
          {"point_scale", point_scale},
          {"goal_window", goal_window},
          {"wrist_unmask_prob", wrist_unmask_prob},
          {"object_unmask_prob", object_unmask_prob},
          {"finger_unmask_prob", finger_unmask_prob},
          {"inference_mask", MaskToJson(inference_mask)},
          {"beta_max", beta_max},
          {"iterations", iterations},
          {"num_envs", num_envs},
          {"horizon", horizon},
          {"epochs", epochs},
          {"minibatch_size", minibatch_size},
          {"buffer_iterations", buffer_iterations},
          {"lr", lr},
          {"max_grad_norm", max_grad_norm},
          {"start_at_zero_prob", start_at_zero_prob},
          {"rollout_kappa", rollout_kappa},
          {"threads", threads}};
}

DistillConfig DistillConfig::FromJson(const nlohmann::json& j) {
  RejectUnknownKeys(
      j,
      {"history", "latent_dim", "hidden", "point_hidden", "point_feature",
       "camera_min_bearing", "camera_max_bearing", "camera_min_range",
       "camera_max_range", "camera_fov", "camera_rays", "point_scale",
       "goal_window", "wrist_unmask_prob", "object_unmask_prob",
       "finger_unmask_prob", "inference_mask", "beta_max", "iterations",
       "num_envs", "horizon", "epochs", "minibatch_size", "buffer_iterations",
       "lr", "max_grad_norm", "start_at_zero_prob", "rollout_kappa",
       "threads"},
      "distill");
  DistillConfig c;
  ReadOptional(j, "history", &c.history);
  ReadOptional(j, "latent_dim", &c.latent_dim);
  ReadOptional(j, "hidden", &c.hidden);
  ReadOptional(j, "point_hidden", &c.point_hidden);
  ReadOptional(j, "point_feature", &c.point_feature);
  ReadOptional(j, "camera_min_bearing", &c.camera_min_bearing);
  ReadOptional(j, "camera_max_bearing", &c.camera_max_bearing);
  ReadOptional(j, "camera_min_range", &c.camera_min_range);
  ReadOptional(j, "camera_max_range", &c.camera_max_range);
  ReadOptional(j, "camera_fov", &c.camera_fov);
  ReadOptional(j, "camera_rays", &c.camera_rays);
  ReadOptional(j, "point_scale", &c.point_scale);
  ReadOptional(j, "goal_window", &c.goal_window);
  ReadOptional(j, "wrist_unmask_prob", &c.wrist_unmask_prob);
  ReadOptional(j, "object_unmask_prob", &c.object_unmask_prob);
  ReadOptional(j, "finger_unmask_prob", &c.finger_unmask_prob);
  if (j.contains("inference_mask")) {
    c.inference_mask = MaskFromJson(j["inference_mask"]);
  }
  ReadOptional(j, "beta_max", &c.beta_max);
  ReadOptional(j, "iterations", &c.iterations);
  ReadOptional(j, "num_envs", &c.num_envs);
  ReadOptional(j, "horizon", &c.horizon);
  ReadOptional(j, "epochs", &c.epochs);
  ReadOptional(j, "minibatch_size", &c.minibatch_size);
  ReadOptional(j, "buffer_iterations", &c.buffer_iterations);
  ReadOptional(j, "lr", &c.lr);
  ReadOptional(j, "max_grad_norm", &c.max_grad_norm);
  ReadOptional(j, "start_at_zero_prob", &c.start_at_zero_prob);
  ReadOptional(j, "rollout_kappa", &c.rollout_kappa);
  ReadOptional(j, "threads", &c.threads);
  c.Validate();
  return c;
}

Camera SampleCamera(const ReferenceClip& clip, const DistillConfig& cfg,
                    Rng* rng) {
  const Vec2 target = 0.5 * (clip.frames.front().object_pose.position +
                             clip.frames.back().object_pose.position);
  const double bearing =
      rng->Uniform(cfg.camera_min_bearing, cfg.camera_max_bearing);
  const double range = rng->Uniform(cfg.camera_min_range, cfg.camera_max_range);
  const Vec2 position =
      target + range * Vec2(std::cos(bearing), std::sin(bearing));
  Camera c;
  c.pose = Pose2(position, Angle(bearing + std::numbers::pi));
  c.fov = cfg.camera_fov;
  c.rays = cfg.camera_rays;
  return c;
}

Eigen::VectorXd Proprioception(const SimState& s) {
  Eigen::VectorXd p = s.q;
  p[2] = s.WristPose().rotation.value();
  return p;
}

void ProprioHistory::Push(const Eigen::VectorXd& proprio) {
  if (capacity_ == 0) return;
  frames_.push_back(proprio);
  while (static_cast<int>(frames_.size()) > capacity_) frames_.pop_front();
}

Eigen::MatrixXd ProprioHistory::Frames(int dim) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, capacity_);
  const int offset = capacity_ - static_cast<int>(frames_.size());
  for (size_t i = 0; i < frames_.size(); ++i) {
    if (frames_[i].size() != dim) {
      throw ConfigError("history frame has the wrong dimension");
    }
    out.col(offset + static_cast<int>(i)) = frames_[i];
  }
  return out;
}

PartialObs Observe(const SimState& s, const World& world, const Camera& camera,
                   const ProprioHistory& history, const ReferenceClip& clip,
                   int t, const KeyJointMap& map, Rng* rng) {
  PartialObs o;
  o.proprio = Proprioception(s);
  const std::vector<Vec2> hits =
      RaycastDepth(s, world, camera.pose, camera.fov, camera.rays, rng);
  const int m = map.size();
  o.points = Eigen::MatrixXd::Zero(3 + m, static_cast<int>(hits.size()) + m);
  for (size_t i = 0; i < hits.size(); ++i) {
    o.points.col(i).head<2>() = hits[i];
    o.points(2, i) = 1.0;
  }
  for (int k = 0; k < m; ++k) {
    const int col = static_cast<int>(hits.size()) + k;
    o.points.col(col).head<2>() = s.joint_position[map.pairs[k].first];
    o.points(3 + k, col) = 1.0;
  }
  o.history = history.Frames(static_cast<int>(o.proprio.size()));
  o.post_onset = t >= clip.grasp_onset;
  return o;
}

SparseGoal MaskGoal(const ReferenceClip& clip, int t, const MaskSpec& spec,
                    const KeyJointMap& map, int window) {
  SparseGoal g;
  g.mask = spec;
  g.wrist = Eigen::VectorXd::Zero(kPoseDim * window);
  g.object = Eigen::VectorXd::Zero(kPoseDim * window);
  g.fingers = Eigen::VectorXd::Zero(2 * map.size());
  const int last = clip.length() - 1;
  for (int k = 0; k < window; ++k) {
    const ReferenceFrame& f = clip.frames[std::min(t + k + 1, last)];
    if (spec.wrist) {
      g.wrist.segment<2>(kPoseDim * k) = f.joint_position[0];
      g.wrist[kPoseDim * k + 2] = f.joint_rotation[0].value();
    }
    if (spec.object) {
      g.object.segment<2>(kPoseDim * k) = f.object_pose.position;
      g.object[kPoseDim * k + 2] = f.object_pose.rotation.value();
    }
  }
  if (spec.fingers) {
    const ReferenceFrame& f = clip.frames[std::min(t + 1, last)];
    for (int k = 0; k < map.size(); ++k) {
      g.fingers.segment<2>(2 * k) = f.joint_position[map.pairs[k].second];
    }
  }
  return g;
}

MaskSpec SampleMaskSpec(const DistillConfig& cfg, Rng* rng) {
  MaskSpec m;
  m.wrist = rng->Uniform01() < cfg.wrist_unmask_prob;
  m.object = rng->Uniform01() < cfg.object_unmask_prob;
  m.fingers = rng->Uniform01() < cfg.finger_unmask_prob;
  return m;
}

int StudentPointDim(const KeyJointMap& map) { return 3 + map.size(); }

int StudentObsSize(const RobotModel& model, const DistillConfig& cfg) {
  const int fingers = model.num_dofs() - 3;
  return 3 + fingers + cfg.history * (4 + fingers) + 1;
}

int StudentGoalSize(const KeyJointMap& map, const DistillConfig& cfg) {
  return 2 * 4 * cfg.goal_window + 2 * map.size() + 3;
}

StudentFeatures Featurize(const PartialObs& obs, const SparseGoal& goal,
                          const DistillConfig& cfg) {
  const int dim = static_cast<int>(obs.proprio.size());
  const int fingers = dim - 3;
  if (fingers < 0 || obs.history.rows() != dim ||
      obs.history.cols() != cfg.history) {
    throw ConfigError("partial observation does not match the config");
  }
  const Pose2 wrist(obs.proprio[0], obs.proprio[1], obs.proprio[2]);
  const double heading = wrist.rotation.value();
  StudentFeatures f;
  f.points = obs.points;
  for (int i = 0; i < f.points.cols(); ++i) {
    f.points.col(i).head<2>() =
        ToFrame(wrist, Vec2(f.points.col(i).head<2>())) / cfg.point_scale;
  }
  f.obs.resize(3 + fingers + cfg.history * (4 + fingers) + 1);
  int k = 0;
  f.obs[k++] = obs.proprio[1];
  f.obs[k++] = std::sin(heading);
  f.obs[k++] = std::cos(heading);
  f.obs.segment(k, fingers) = obs.proprio.tail(fingers);
  k += fingers;
  for (int h = 0; h < cfg.history; ++h) {
    const auto col = obs.history.col(h);
    if (col.isZero(0.0)) {
      f.obs.segment(k, 4 + fingers).setZero();
    } else {
      f.obs.segment<2>(k) = ToFrame(wrist, Vec2(col[0], col[1]));
      f.obs[k + 2] = std::sin(col[2] - heading);
      f.obs[k + 3] = std::cos(col[2] - heading);
      f.obs.segment(k + 4, fingers) = col.tail(fingers);
    }
    k += 4 + fingers;
  }
  f.obs[k++] = obs.post_onset ? 1.0 : 0.0;

  const int window = cfg.goal_window;
  if (goal.wrist.size() != kPoseDim * window ||
      goal.object.size() != kPoseDim * window) {
    throw ConfigError("sparse goal window does not match the config");
  }
  const int m = static_cast<int>(goal.fingers.size()) / 2;
  f.goal = Eigen::VectorXd::Zero(8 * window + 2 * m + 3);
  auto poses = [&](const Eigen::VectorXd& src, bool on, int offset) {
    if (!on) return;
    for (int w = 0; w < window; ++w) {
      const Eigen::Vector3d p = src.segment<3>(kPoseDim * w);
      f.goal.segment<2>(offset + 4 * w) = ToFrame(wrist, Vec2(p[0], p[1]));
      f.goal[offset + 4 * w + 2] = std::sin(p[2] - heading);
      f.goal[offset + 4 * w + 3] = std::cos(p[2] - heading);
    }
  };
  poses(goal.wrist, goal.mask.wrist, 0);
  poses(goal.object, goal.mask.object, 4 * window);
  if (goal.mask.fingers) {
    for (int i = 0; i < m; ++i) {
      f.goal.segment<2>(8 * window + 2 * i) =
          ToFrame(wrist, Vec2(goal.fingers.segment<2>(2 * i)));
    }
  }
  const int bits = 8 * window + 2 * m;
  f.goal[bits] = goal.mask.wrist ? 1.0 : 0.0;
  f.goal[bits + 1] = goal.mask.object ? 1.0 : 0.0;
  f.goal[bits + 2] = goal.mask.fingers ? 1.0 : 0.0;
  return f;
}

Eigen::VectorXd SampleLatent(const Eigen::VectorXd& mu_p,
                             const Eigen::VectorXd& mu_q,
                             const Eigen::VectorXd& sigma_q,
                             const Eigen::VectorXd& eps) {
  if (mu_q.size() != mu_p.size() || sigma_q.size() != mu_p.size() ||
      eps.size() != mu_p.size()) {
    throw ConfigError("latent sizes do not match");
  }
  return mu_p + mu_q + sigma_q.cwiseProduct(eps);
}

double KlLoss(const Eigen::VectorXd& sigma_p, const Eigen::VectorXd& mu_q,
              const Eigen::VectorXd& sigma_q) {
  if (sigma_p.size() != mu_q.size() || sigma_q.size() != mu_q.size()) {
    throw ConfigError("latent sizes do not match");
  }
  double kl = 0.0;
  for (int i = 0; i < mu_q.size(); ++i) {
    if (!(sigma_p[i] > 0.0) || !(sigma_q[i] > 0.0)) {
      throw ConfigError("standard deviations must be > 0");
    }
    const double r = (sigma_q[i] * sigma_q[i]) / (sigma_p[i] * sigma_p[i]);
    const double m = mu_q[i] * mu_q[i] / (sigma_p[i] * sigma_p[i]);
    kl += 0.5 * (r + m - 1.0 - std::log(r));
  }
  return std::max(kl, 0.0);
}

double BetaSchedule(int iteration, int total, double beta_max) {
  const double half = 0.5 * total;
  if (half <= 0.0) return beta_max;
  return beta_max * std::min(1.0, iteration / half);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> StudentNets<Scalar>::GetParams()
    const {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> p(num_params());
  p << points.GetParams(), encoder.params(), prior.params(), decoder.params();
  return p;
}

template <typename Scalar>
void StudentNets<Scalar>::SetParams(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p) {
  if (p.size() != num_params()) throw ConfigError("parameter size mismatch");
  int k = 0;
  points.SetParams(p.segment(k, points.num_params()));
  k += points.num_params();
  encoder.params() = p.segment(k, encoder.num_params());
  k += encoder.num_params();
  prior.params() = p.segment(k, prior.num_params());
  k += prior.num_params();
  decoder.params() = p.segment(k, decoder.num_params());
}

template <typename Scalar>
template <typename Other>
StudentNets<Other> StudentNets<Scalar>::Cast() const {
  StudentNets<Other> out;
  out.points = points.template Cast<Other>();
  out.encoder = encoder.template Cast<Other>();
  out.prior = prior.template Cast<Other>();
  out.decoder = decoder.template Cast<Other>();
  return out;
}

template struct StudentNets<float>;
template struct StudentNets<double>;
template StudentNets<double> StudentNets<float>::Cast<double>() const;
template StudentNets<float> StudentNets<double>::Cast<float>() const;

template <typename Scalar>
DistillLoss DistillLossAndGrad(const StudentNets<Scalar>& nets,
                               const DistillBatch<Scalar>& batch, double beta,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* grad) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const int n = batch.size();
  const int latent = nets.prior.output_size() / 2;
  const int feat = nets.points.output_size();
  const int obs_dim = static_cast<int>(batch.obs.rows());
  const int goal_dim = static_cast<int>(batch.goal.rows());
  if (n == 0) return {};
  if (static_cast<int>(batch.points.size()) != n ||
      nets.encoder.output_size() != 2 * latent ||
      nets.decoder.input_size() != latent + obs_dim + feat ||
      nets.prior.input_size() != obs_dim + feat + goal_dim) {
    throw ConfigError("distillation batch does not match the networks");
  }
  std::vector<typename PointSetEncoder<Scalar>::Cache> pc(n);
  Matrix pf(feat, n);
  for (int j = 0; j < n; ++j) {
    pf.col(j) = grad ? nets.points.Forward(batch.points[j], &pc[j])
                     : nets.points.Forward(batch.points[j]);
  }
  typename Mlp<Scalar>::Cache ec, prc, dc;
  const Matrix enc_out = nets.encoder.Forward(batch.privileged, &ec);
  Matrix prior_in(obs_dim + feat + goal_dim, n);
  prior_in << batch.obs, pf, batch.goal;
  const Matrix prior_out = nets.prior.Forward(prior_in, &prc);
  Matrix mu_q, ls_q, mu_p, ls_p;
  SplitHead(enc_out, latent, &mu_q, &ls_q);
  SplitHead(prior_out, latent, &mu_p, &ls_p);
  const Matrix sig_q = ls_q.array().exp().matrix();
  const Matrix z = mu_p + mu_q + sig_q.cwiseProduct(batch.eps);
  Matrix dec_in(latent + obs_dim + feat, n);
  dec_in << z, batch.obs, pf;
  const Matrix a = nets.decoder.Forward(dec_in, &dc);
  const Matrix err = a - batch.target;
  const Matrix inv_var_p = (Scalar(-2) * ls_p).array().exp().matrix();
  const Matrix ratio = (Scalar(2) * (ls_q - ls_p)).array().exp().matrix();
  const Matrix mq2 = mu_q.cwiseAbs2().cwiseProduct(inv_var_p);
  DistillLoss loss;
  loss.rec = static_cast<double>(err.squaredNorm()) / n;
  loss.kl = 0.5 *
            static_cast<double>((ratio + mq2).sum() - Scalar(latent * n) -
                                Scalar(2) * (ls_q - ls_p).sum()) /
            n;
  loss.total = loss.rec + beta * loss.kl;
  if (!std::isfinite(loss.total)) {
    throw NumericalError("non-finite distillation loss");
  }
  if (!grad) return loss;

  const Scalar kb = static_cast<Scalar>(beta / n);
  Vector g_dec = Vector::Zero(nets.decoder.num_params());
  const Matrix d_dec_in =
      nets.decoder.Backward(dc, (Scalar(2) / n) * err, &g_dec);
  const Matrix dz = d_dec_in.topRows(latent);
  Matrix dpf = d_dec_in.bottomRows(feat);
  Matrix d_prior_out(2 * latent, n), d_enc_out(2 * latent, n);
  d_prior_out.topRows(latent) = dz;
  Matrix dls_p = kb * (Matrix::Ones(latent, n) - ratio - mq2);
  MaskClamped(Matrix(prior_out.bottomRows(latent)), &dls_p);
  d_prior_out.bottomRows(latent) = dls_p;
  d_enc_out.topRows(latent) = dz + kb * mu_q.cwiseProduct(inv_var_p);
  Matrix dls_q = dz.cwiseProduct(sig_q).cwiseProduct(batch.eps) +
                 kb * (ratio - Matrix::Ones(latent, n));
  MaskClamped(Matrix(enc_out.bottomRows(latent)), &dls_q);
  d_enc_out.bottomRows(latent) = dls_q;
  Vector g_prior = Vector::Zero(nets.prior.num_params());
  const Matrix d_prior_in = nets.prior.Backward(prc, d_prior_out, &g_prior);
  dpf += d_prior_in.middleRows(obs_dim, feat);
  Vector g_enc = Vector::Zero(nets.encoder.num_params());
  nets.encoder.Backward(ec, d_enc_out, &g_enc);
  Vector g_pts = Vector::Zero(nets.points.num_params());
  for (int j = 0; j < n; ++j) {
    nets.points.Backward(pc[j], Vector(dpf.col(j)), &g_pts);
  }
  if (grad->size() != nets.num_params()) grad->setZero(nets.num_params());
  *grad += (Vector(nets.num_params()) << g_pts, g_enc, g_prior, g_dec)
               .finished();
  return loss;
}

template DistillLoss DistillLossAndGrad<float>(const StudentNets<float>&,
                                               const DistillBatch<float>&,
                                               double, Eigen::VectorXf*);
template DistillLoss DistillLossAndGrad<double>(const StudentNets<double>&,
                                                const DistillBatch<double>&,
                                                double, Eigen::VectorXd*);

Student::Student(const RobotModel& model, const KeyJointMap& map,
                 int privileged_dim, const DistillConfig& cfg, Rng* rng)
    : cfg_(cfg) {
  cfg.Validate();
  const int obs = StudentObsSize(model, cfg);
  const int goal = StudentGoalSize(map, cfg);
  const int latent = cfg.latent_dim;
  nets_.points = PointSetEncoder<float>(StudentPointDim(map), cfg.point_hidden,
                                        {cfg.point_feature});
  nets_.points.Init(rng);
  auto sizes = [&cfg](int in, int out) {
    std::vector<int> s = {in};
    s.insert(s.end(), cfg.hidden.begin(), cfg.hidden.end());
    s.push_back(out);
    return s;
  };
  nets_.encoder = Mlp<float>(sizes(privileged_dim, 2 * latent));
  nets_.encoder.Init(rng, 0.01);
  nets_.prior = Mlp<float>(sizes(obs + cfg.point_feature + goal, 2 * latent));
  nets_.prior.Init(rng, 0.01);
  nets_.decoder =
      Mlp<float>(sizes(latent + obs + cfg.point_feature, ActionDim(model)),
                 Activation::kTanh, Activation::kIdentity, false);
  nets_.decoder.Init(rng, 0.1);
  input_norm_ = RunningNorm(obs + goal);
  privileged_norm_ = RunningNorm(privileged_dim);
}

Eigen::VectorXf Student::InputColumn(const StudentFeatures& f) const {
  Eigen::VectorXd x(f.obs.size() + f.goal.size());
  x << f.obs, f.goal;
  if (x.size() != input_norm_.mean.size()) {
    throw ConfigError("student input has the wrong dimension");
  }
  return input_norm_.Apply(x, 5.0).col(0);
}

Eigen::VectorXf Student::PointFeature(const StudentFeatures& f) const {
  return nets_.points.Forward(f.points.cast<float>());
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Student::Encode(
    const Eigen::VectorXd& privileged) const {
  if (!has_encoder()) throw ConfigError("student has no encoder");
  const Eigen::MatrixXf out = nets_.encoder.Forward(
      privileged_norm_.Apply(privileged, privileged_clip_));
  Eigen::MatrixXf mu, ls;
  SplitHead(out, cfg_.latent_dim, &mu, &ls);
  return {mu.col(0).cast<double>(),
          ls.col(0).array().exp().matrix().cast<double>()};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Student::PriorOf(
    const StudentFeatures& f) const {
  const Eigen::VectorXf x = InputColumn(f);
  const int obs = static_cast<int>(f.obs.size());
  Eigen::VectorXf in(nets_.prior.input_size());
  in << x.head(obs), PointFeature(f), x.tail(x.size() - obs);
  const Eigen::MatrixXf out = nets_.prior.Forward(in);
  Eigen::MatrixXf mu, ls;
  SplitHead(out, cfg_.latent_dim, &mu, &ls);
  return {mu.col(0).cast<double>(),
          ls.col(0).array().exp().matrix().cast<double>()};
}

Eigen::VectorXd Student::DecodeOf(const Eigen::VectorXd& z,
                                  const StudentFeatures& f) const {
  if (z.size() != cfg_.latent_dim) throw ConfigError("latent size mismatch");
  const Eigen::VectorXf x = InputColumn(f);
  Eigen::VectorXf in(nets_.decoder.input_size());
  in << z.cast<float>(), x.head(f.obs.size()), PointFeature(f);
  return nets_.decoder.Forward(in).col(0).cast<double>();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Student::Prior(
    const PartialObs& obs, const SparseGoal& goal) const {
  return PriorOf(Featurize(obs, goal, cfg_));
}

Eigen::VectorXd Student::Decode(const Eigen::VectorXd& z,
                                const PartialObs& obs) const {
  // The decoder never reads the goal; an all-masked goal fills its slot.
  const int window = cfg_.goal_window;
  SparseGoal none;
  none.mask = {false, false, false};
  none.wrist = Eigen::VectorXd::Zero(kPoseDim * window);
  none.object = Eigen::VectorXd::Zero(kPoseDim * window);
  none.fingers = Eigen::VectorXd::Zero(
      2 * (nets_.points.point_dim() - 3));
  return DecodeOf(z, Featurize(obs, none, cfg_));
}

Eigen::VectorXd Student::Act(const PartialObs& obs, const SparseGoal& goal,
                             const Eigen::VectorXd& eps) const {
  const StudentFeatures f = Featurize(obs, goal, cfg_);
  const auto [mu, sigma] = PriorOf(f);
  if (eps.size() != mu.size()) throw ConfigError("eps size mismatch");
  return DecodeOf(mu + sigma.cwiseProduct(eps), f);
}

DistillBatch<float> Student::MakeBatch(
    const std::vector<const DistillSample*>& s) const {
  const int n = static_cast<int>(s.size());
  DistillBatch<float> b;
  if (n == 0) return b;
  const int obs = static_cast<int>(s[0]->features.obs.size());
  const int goal = static_cast<int>(s[0]->features.goal.size());
  Eigen::MatrixXd x(obs + goal, n), priv(s[0]->privileged.size(), n);
  b.eps.resize(cfg_.latent_dim, n);
  b.target.resize(s[0]->target.size(), n);
  b.points.resize(n);
  for (int j = 0; j < n; ++j) {
    x.col(j) << s[j]->features.obs, s[j]->features.goal;
    priv.col(j) = s[j]->privileged;
    b.eps.col(j) = s[j]->eps.cast<float>();
    b.target.col(j) = s[j]->target.cast<float>();
    b.points[j] = s[j]->features.points.cast<float>();
  }
  const Eigen::MatrixXf xn = input_norm_.Apply(x, 5.0);
  b.obs = xn.topRows(obs);
  b.goal = xn.bottomRows(goal);
  b.privileged = privileged_norm_.Apply(priv, privileged_clip_);
  return b;
}

PolicyCheckpoint Student::ToCheckpoint(const nlohmann::json& config,
                                       const Rng& rng) const {
  PolicyCheckpoint c;
  c.kind = "student";
  c.config = config;
  c.rng_state = rng.SaveState();
  nets_.points.ToTensors("point_encoder", &c.tensors);
  nets_.prior.ToTensors("prior", &c.tensors);
  nets_.decoder.ToTensors("decoder", &c.tensors);
  NormToTensors(input_norm_, "input_norm", &c.tensors);
  if (has_encoder()) {
    nets_.encoder.ToTensors("encoder", &c.tensors);
    NormToTensors(privileged_norm_, "privileged_norm", &c.tensors);
    c.tensors["privileged_clip"] = Tensor{{1}, {privileged_clip_}};
  }
  return c;
}

Student Student::FromCheckpoint(const PolicyCheckpoint& c) {
  if (c.kind != "student") {
    throw ConfigError("checkpoint kind '" + c.kind + "' is not a student");
  }
  if (!c.config.contains("distill")) {
    throw ConfigError("student checkpoint lacks its distill config");
  }
  Student s;
  s.cfg_ = DistillConfig::FromJson(c.config["distill"]);
  s.nets_.points = PointSetEncoder<float>::FromTensors(c.tensors,
                                                       "point_encoder");
  s.nets_.prior = Mlp<float>::FromTensors(c.tensors, "prior");
  s.nets_.decoder = Mlp<float>::FromTensors(c.tensors, "decoder");
  s.input_norm_ = NormFromTensors(c.tensors, "input_norm");
  if (c.tensors.count("encoder.layer0.weight")) {
    s.nets_.encoder = Mlp<float>::FromTensors(c.tensors, "encoder");
    s.privileged_norm_ = NormFromTensors(c.tensors, "privileged_norm");
    const auto it = c.tensors.find("privileged_clip");
    if (it != c.tensors.end() && !it->second.data.empty()) {
      s.privileged_clip_ = it->second.data[0];
    }
  }
  const int latent = s.cfg_.latent_dim;
  const int feat = s.nets_.points.output_size();
  const int obs = s.nets_.decoder.input_size() - latent - feat;
  const int goal = s.nets_.prior.input_size() - obs - feat;
  if (s.nets_.prior.output_size() != 2 * latent || obs < 1 || goal < 1 ||
      s.input_norm_.mean.size() != obs + goal ||
      (s.has_encoder() && s.nets_.encoder.output_size() != 2 * latent)) {
    throw ConfigError("student checkpoint networks are inconsistent");
  }
  return s;
}

std::string DistillLogHeader() {
  return "iteration,L_rec,L_KL,beta,student_success_rate";
}

std::string DistillLogLine(const DistillLogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g", r.iteration,
                r.l_rec, r.l_kl, r.beta, r.student_success_rate);
  return buf;
}

DistillResult DaggerTrain(
    const PolicyCheckpoint& teacher_ckpt,
    const std::vector<ReferenceClip>& corpus, const DistillConfig& cfg,
    uint64_t seed,
    const std::function<void(const DistillLogRow&)>& on_iteration) {
  cfg.Validate();
  if (corpus.empty()) throw ConfigError("distillation needs clips");
  TrackerConfig tcfg;
  const TrackerPolicy teacher = LoadTrackerPolicy(teacher_ckpt, &tcfg);
  const int act_dim = ActionDim(tcfg.robot);
  if (teacher.pi().output_size() != act_dim) {
    throw ConfigError("teacher action dimension does not match the robot");
  }
  const KeyJointMap& map = tcfg.ppo.key_joint_map;
  for (const ReferenceClip& c : corpus) c.Validate();

  Rng rng(seed);
  Student student(tcfg.robot, map, TrackerObservationSize(tcfg), cfg, &rng);
  student.privileged_norm() = teacher.norm();
  student.set_privileged_clip(tcfg.ppo.obs_clip);
  std::vector<TerminationEnvelope> envelopes;
  for (const ReferenceClip& c : corpus) {
    envelopes.push_back(
        TerminationEnvelope::Frozen(c.length(), cfg.rollout_kappa, false));
  }

  const int e = cfg.num_envs;
  std::vector<TrackingEnv> envs;
  std::vector<StudentEpisode> eps;
  for (int i = 0; i < e; ++i) {
    envs.emplace_back(&tcfg, &corpus);
    eps.push_back({Camera{}, ProprioHistory(cfg.history),
                   Eigen::VectorXd(), MaskSpec{}, rng.Fork()});
  }
  auto reset = [&](int i) {
    StudentEpisode& ep = eps[i];
    const int c = static_cast<int>(ep.rng.UniformInt(corpus.size()));
    const ReferenceClip& clip = corpus[c];
    const EnvParams params = Randomize(tcfg.env, &ep.rng);
    const World world(tcfg.robot, clip.shape, params);
    const int frame =
        ep.rng.Uniform01() < cfg.start_at_zero_prob
            ? 0
            : static_cast<int>(ep.rng.UniformInt(clip.length() - 1));
    envs[i].Reset(c, frame, InitialState(clip, world, frame), params);
    ep.camera = SampleCamera(clip, cfg, &ep.rng);
    ep.eps = StandardNormal(cfg.latent_dim, &ep.rng);
    ep.mask = SampleMaskSpec(cfg, &ep.rng);
    ep.history.Clear();
  };
  for (int i = 0; i < e; ++i) reset(i);

  std::deque<DistillSample> buffer;
  const size_t capacity =
      static_cast<size_t>(cfg.buffer_iterations) * e * cfg.horizon;
  AdamState<float> adam_state;
  AdamConfig adam;
  adam.lr = cfg.lr;
  DistillResult result;
  std::vector<DistillSample> fresh(e);
  std::vector<StepOutcome> outcomes(e);
  for (int it = 0; it < cfg.iterations; ++it) {
    int episodes = 0, successes = 0;
    Eigen::MatrixXd inputs(student.input_norm().mean.size(), e * cfg.horizon);
    for (int step = 0; step < cfg.horizon; ++step) {
      ParallelFor(e, cfg.threads, [&](int i) {
        TrackingEnv& env = envs[i];
        StudentEpisode& ep = eps[i];
        const ReferenceClip& clip = env.clip();
        const int t = env.frame();
        const PartialObs obs = Observe(env.state(), env.world(), ep.camera,
                                       ep.history, clip, t, map, &ep.rng);
        const SparseGoal goal =
            MaskGoal(clip, t, ep.mask, map, cfg.goal_window);
        DistillSample& s = fresh[i];
        s.features = Featurize(obs, goal, cfg);
        s.privileged = TrackerObservation(env.state(), env.world(), clip, t,
                                          env.last_action(), tcfg);
        s.target = teacher.MeanAction(s.privileged).cwiseMax(-1.0).cwiseMin(
            1.0);
        s.eps = ep.eps;
        const Eigen::VectorXd action = student.Act(obs, goal, ep.eps);
        ep.history.Push(obs.proprio);
        outcomes[i] = env.Step(action, envelopes[env.clip_index()]);
      });
      for (int i = 0; i < e; ++i) {
        inputs.col(step * e + i) << fresh[i].features.obs,
            fresh[i].features.goal;
        buffer.push_back(std::move(fresh[i]));
        if (outcomes[i].done) {
          ++episodes;
          if (outcomes[i].reached_end) ++successes;
          reset(i);
        }
      }
    }
    while (buffer.size() > capacity) buffer.pop_front();
    student.input_norm().Update(inputs);

    const double beta = BetaSchedule(it, cfg.iterations, cfg.beta_max);
    std::vector<int> order(buffer.size());
    std::iota(order.begin(), order.end(), 0);
    const int n = static_cast<int>(order.size());
    const int mb = std::min(cfg.minibatch_size, n);
    double rec = 0.0, kl = 0.0;
    int batches = 0;
    Eigen::VectorXf params = student.nets().GetParams();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (int i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.UniformInt(i + 1)]);
      }
      for (int start = 0; start + mb <= n; start += mb) {
        std::vector<const DistillSample*> picked(mb);
        for (int j = 0; j < mb; ++j) picked[j] = &buffer[order[start + j]];
        const DistillBatch<float> batch = student.MakeBatch(picked);
        Eigen::VectorXf grad;
        const DistillLoss l =
            DistillLossAndGrad(student.nets(), batch, beta, &grad);
        const double norm = grad.norm();
        if (!std::isfinite(norm)) {
          throw NumericalError("non-finite distillation gradient");
        }
        if (norm > cfg.max_grad_norm) {
          grad *= static_cast<float>(cfg.max_grad_norm / norm);
        }
        AdamStep(adam, grad, &params, &adam_state);
        student.nets().SetParams(params);
        rec += l.rec;
        kl += l.kl;
        ++batches;
      }
    }
    DistillLogRow row;
    row.iteration = it;
    row.l_rec = batches ? rec / batches : 0.0;
    row.l_kl = batches ? kl / batches : 0.0;
    row.beta = beta;
    row.student_success_rate =
        episodes ? static_cast<double>(successes) / episodes : 0.0;
    result.log.push_back(row);
    if (on_iteration) on_iteration(row);
  }
  result.checkpoint = student.ToCheckpoint(
      {{"distill", cfg.ToJson()}, {"tracker", tcfg.ToJson()}}, rng);
  return result;
}

}  // namespace dexscope

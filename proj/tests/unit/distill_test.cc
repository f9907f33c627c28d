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

#include <cmath>
#include <type_traits>

#include "dexscope/errors.h"
#include "fixtures.h"
#include "gtest/gtest.h"

namespace dexscope {
namespace {

using testing::CircleClip;

// The prior and decoder only accept the partial observation types.
static_assert(!std::is_convertible_v<SimState, PartialObs>);
static_assert(!std::is_invocable_v<decltype(&Student::Prior), const Student&,
                                   const SimState&, const SparseGoal&>);
static_assert(!std::is_invocable_v<decltype(&Student::Decode), const Student&,
                                   const Eigen::VectorXd&, const SimState&>);
static_assert(std::is_invocable_v<decltype(&Student::Prior), const Student&,
                                  const PartialObs&, const SparseGoal&>);

DistillConfig SmallConfig() {
  DistillConfig c;
  c.hidden = {16};
  c.point_hidden = {8};
  c.point_feature = 8;
  c.latent_dim = 4;
  c.goal_window = 3;
  c.history = 2;
  c.iterations = 2;
  c.num_envs = 2;
  c.horizon = 4;
  c.minibatch_size = 4;
  return c;
}

struct Scene {
  TrackerConfig tcfg;
  ReferenceClip clip = CircleClip();
  World world{tcfg.robot, clip.shape, tcfg.env};
  SimState state = InitialState(clip, world, 0);
};

PartialObs ObserveAt(const Scene& s, const ProprioHistory& h, int t,
                     const Camera& cam) {
  Rng rng(1);
  return Observe(s.state, s.world, cam, h, s.clip, t,
                 s.tcfg.ppo.key_joint_map, &rng);
}

Camera Overhead(const Scene& s, double fov) {
  Camera c;
  c.pose = Pose2(s.state.object_pose.position + Vec2(0.0, 0.8),
                 Angle(-std::numbers::pi / 2));
  c.fov = fov;
  c.rays = 32;
  return c;
}

Camera Side(const Scene& s) {
  Camera c;
  c.pose = Pose2(s.state.object_pose.position + Vec2(0.5, 0.0),
                 Angle(std::numbers::pi));
  c.fov = 0.3;
  c.rays = 32;
  return c;
}

TEST(ObserveTest, FirstFrameHasEmptyHistoryAndNoVelocities) {
  const Scene s;
  const ProprioHistory h(4);
  const PartialObs o = ObserveAt(s, h, 0, Overhead(s, 1.0));
  EXPECT_EQ(o.proprio.size(), s.tcfg.robot.num_dofs());
  EXPECT_EQ(o.history.cols(), 4);
  EXPECT_TRUE(o.history.isZero(0.0));
  EXPECT_FALSE(o.post_onset);
  EXPECT_TRUE(ObserveAt(s, h, s.clip.grasp_onset, Overhead(s, 1.0))
                  .post_onset);
}

TEST(ObserveTest, TaggedJointPointsAlwaysPresent) {
  const Scene s;
  const PartialObs o = ObserveAt(s, ProprioHistory(4), 0, Side(s));
  const KeyJointMap& map = s.tcfg.ppo.key_joint_map;
  ASSERT_EQ(o.points.rows(), StudentPointDim(map));
  int object = 0;
  for (int i = 0; i < o.points.cols(); ++i) object += o.points(2, i) == 1.0;
  EXPECT_GT(object, 0);
  EXPECT_EQ(o.points.cols() - object, map.size());
}

TEST(ObserveTest, FullyOccludedObjectLeavesOnlyJointPoints) {
  Scene s;
  // Camera just above the palm, looking down a narrow cone through it.
  const Vec2 palm = s.state.joint_position[0];
  Camera c;
  c.pose = Pose2(Vec2(palm.x(), palm.y() + 0.3),
                 Angle(-std::numbers::pi / 2));
  c.fov = 0.01;
  c.rays = 8;
  const PartialObs o = ObserveAt(s, ProprioHistory(4), 0, c);
  EXPECT_EQ(o.points.cols(), s.tcfg.ppo.key_joint_map.size());
  for (int i = 0; i < o.points.cols(); ++i) EXPECT_EQ(o.points(2, i), 0.0);
}

TEST(HistoryTest, ZeroPaddedOldestFirst) {
  ProprioHistory h(3);
  h.Push(Eigen::VectorXd::Constant(2, 1.0));
  h.Push(Eigen::VectorXd::Constant(2, 2.0));
  const Eigen::MatrixXd f = h.Frames(2);
  EXPECT_TRUE(f.col(0).isZero(0.0));
  EXPECT_EQ(f(0, 1), 1.0);
  EXPECT_EQ(f(0, 2), 2.0);
  h.Push(Eigen::VectorXd::Constant(2, 3.0));
  h.Push(Eigen::VectorXd::Constant(2, 4.0));
  EXPECT_EQ(h.Frames(2)(0, 0), 2.0);
}

TEST(MaskGoalTest, AllMasked) {
  const ReferenceClip clip = CircleClip();
  const SparseGoal g = MaskGoal(clip, 5, {false, false, false},
                                KeyJointMap::Default(), 15);
  EXPECT_TRUE(g.wrist.isZero(0.0));
  EXPECT_TRUE(g.object.isZero(0.0));
  EXPECT_TRUE(g.fingers.isZero(0.0));
  const StudentFeatures f = Featurize(
      ObserveAt(Scene(), ProprioHistory(4), 5, Overhead(Scene(), 1.0)), g,
      DistillConfig());
  EXPECT_TRUE(f.goal.isZero(0.0));
}

TEST(MaskGoalTest, WristOnly) {
  const ReferenceClip clip = CircleClip();
  const SparseGoal g =
      MaskGoal(clip, 5, {true, false, false}, KeyJointMap::Default(), 15);
  EXPECT_TRUE(g.mask.wrist);
  for (int k = 0; k < 15; ++k) {
    const ReferenceFrame& f = clip.frames[6 + k];
    EXPECT_EQ(g.wrist[3 * k], f.joint_position[0].x());
    EXPECT_EQ(g.wrist[3 * k + 1], f.joint_position[0].y());
    EXPECT_EQ(g.wrist[3 * k + 2], f.joint_rotation[0].value());
  }
  EXPECT_TRUE(g.object.isZero(0.0));
  EXPECT_TRUE(g.fingers.isZero(0.0));
}

TEST(MaskGoalTest, WindowClampsAtClipEnd) {
  const ReferenceClip clip = CircleClip();
  const int last = clip.length() - 1;
  const SparseGoal g = MaskGoal(clip, last, {true, true, true},
                                KeyJointMap::Default(), 4);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(g.object[3 * k], clip.frames[last].object_pose.position.x());
  }
}

TEST(MaskGoalTest, SampledSpecIsDeterministic) {
  const DistillConfig cfg;
  Rng a(9), b(9);
  int wrist = 0;
  for (int i = 0; i < 200; ++i) {
    const MaskSpec x = SampleMaskSpec(cfg, &a);
    EXPECT_EQ(x, SampleMaskSpec(cfg, &b));
    wrist += x.wrist;
    EXPECT_FALSE(x.fingers);
  }
  EXPECT_GT(wrist, 60);
  EXPECT_LT(wrist, 140);
}

TEST(FeaturizeTest, SizesMatchDeclaredLayout) {
  const Scene s;
  const DistillConfig cfg;
  const KeyJointMap& map = s.tcfg.ppo.key_joint_map;
  const StudentFeatures f = Featurize(
      ObserveAt(s, ProprioHistory(cfg.history), 3, Overhead(s, 1.0)),
      MaskGoal(s.clip, 3, {true, true, true}, map, cfg.goal_window), cfg);
  EXPECT_EQ(f.obs.size(), StudentObsSize(s.tcfg.robot, cfg));
  EXPECT_EQ(f.goal.size(), StudentGoalSize(map, cfg));
  EXPECT_EQ(f.points.rows(), StudentPointDim(map));
  EXPECT_TRUE(f.obs.allFinite());
  EXPECT_TRUE(f.goal.allFinite());
}

TEST(LatentTest, SampleLatentIdentities) {
  Eigen::VectorXd mp(3), mq(3);
  mp << 0.1, -0.2, 0.3;
  mq << 1.0, 2.0, -3.0;
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(3);
  EXPECT_EQ(SampleLatent(mp, mq, one, Eigen::VectorXd::Zero(3)), mp + mq);
  EXPECT_EQ(SampleLatent(mp, mq, one, Eigen::VectorXd::Unit(3, 0)),
            mp + mq + Eigen::VectorXd::Unit(3, 0));
}

TEST(LatentTest, KlClosedFormCases) {
  Eigen::VectorXd s(2);
  s << 0.5, 2.0;
  EXPECT_DOUBLE_EQ(KlLoss(s, Eigen::VectorXd::Zero(2), s), 0.0);
  EXPECT_DOUBLE_EQ(KlLoss(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1),
                          Eigen::VectorXd::Ones(1)),
                   0.5);
  EXPECT_THROW(KlLoss(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                      Eigen::VectorXd::Ones(1)),
               ConfigError);
}

TEST(LatentTest, KlNonNegativeAndZeroOnlyAtEquality) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    Eigen::VectorXd sp(4), mq(4), sq(4);
    for (int d = 0; d < 4; ++d) {
      sp[d] = std::exp(rng.Uniform(-2, 1));
      sq[d] = std::exp(rng.Uniform(-2, 1));
      mq[d] = rng.Uniform(-1, 1);
    }
    EXPECT_GT(KlLoss(sp, mq, sq), 0.0);
  }
}

TEST(LatentTest, KlMatchesMonteCarlo) {
  Rng rng(3);
  Eigen::VectorXd sp(3), mq(3), sq(3);
  sp << 0.7, 1.3, 0.4;
  mq << 0.2, -0.5, 0.1;
  sq << 0.5, 1.1, 0.6;
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double lr = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double x = mq[d] + sq[d] * rng.Normal();  // mu_p = 0
      lr += -std::log(sq[d]) - 0.5 * std::pow((x - mq[d]) / sq[d], 2) +
            std::log(sp[d]) + 0.5 * std::pow(x / sp[d], 2);
    }
    sum += lr;
    sum2 += lr * lr;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_NEAR(KlLoss(sp, mq, sq), mean, 3 * se);
}

TEST(BetaTest, LinearRampOverFirstHalf) {
  EXPECT_EQ(BetaSchedule(0, 100, 0.01), 0.0);
  EXPECT_DOUBLE_EQ(BetaSchedule(25, 100, 0.01), 0.005);
  EXPECT_DOUBLE_EQ(BetaSchedule(50, 100, 0.01), 0.01);
  EXPECT_DOUBLE_EQ(BetaSchedule(99, 100, 0.01), 0.01);
}

class StudentTest : public ::testing::Test {
 protected:
  StudentTest()
      : rng_(5),
        student_(scene_.tcfg.robot, scene_.tcfg.ppo.key_joint_map,
                 TrackerObservationSize(scene_.tcfg), SmallConfig(), &rng_) {}

  PartialObs Obs() const {
    return ObserveAt(scene_, ProprioHistory(SmallConfig().history), 3,
                     Overhead(scene_, 1.0));
  }
  SparseGoal Goal() const {
    return MaskGoal(scene_.clip, 3, {true, false, false},
                    scene_.tcfg.ppo.key_joint_map, SmallConfig().goal_window);
  }

  Scene scene_;
  Rng rng_;
  Student student_;
};

TEST_F(StudentTest, EncoderShapesAndBounds) {
  const Eigen::VectorXd priv = TrackerObservation(
      scene_.state, scene_.world, scene_.clip, 0,
      Eigen::VectorXd::Zero(5), scene_.tcfg);
  const auto [mu, sigma] = student_.Encode(priv);
  EXPECT_EQ(mu.size(), 4);
  EXPECT_EQ(student_.nets().encoder.output_size(), 8);
  for (int i = 0; i < 4; ++i) {
    EXPECT_GE(sigma[i], std::exp(-5.0) * (1 - 1e-6));
    EXPECT_LE(sigma[i], std::exp(2.0) * (1 + 1e-6));
  }
  EXPECT_EQ(student_.Encode(priv).first, mu);
}

TEST_F(StudentTest, PriorIsPointPermutationInvariant) {
  PartialObs o = Obs();
  const auto [mu, sigma] = student_.Prior(o, Goal());
  PartialObs p = o;
  for (int i = 0; i < p.points.cols(); ++i) {
    p.points.col(i) = o.points.col(p.points.cols() - 1 - i);
  }
  const auto [mu2, sigma2] = student_.Prior(p, Goal());
  EXPECT_EQ(mu, mu2);
  EXPECT_EQ(sigma, sigma2);
}

TEST_F(StudentTest, DecoderShapeDeterminismAndZeroParameters) {
  const Eigen::VectorXd z = Eigen::VectorXd::Constant(4, 0.3);
  const Eigen::VectorXd a = student_.Decode(z, Obs());
  EXPECT_EQ(a.size(), ActionDim(scene_.tcfg.robot));
  EXPECT_EQ(student_.Decode(z, Obs()), a);
  student_.nets().decoder.params().setZero();
  EXPECT_TRUE(student_.Decode(z, Obs()).isZero(0.0));
}

TEST_F(StudentTest, ZeroNoiseUsesPriorMean) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  const auto [mu, sigma] = student_.Prior(Obs(), Goal());
  EXPECT_EQ(student_.Act(Obs(), Goal(), zero), student_.Decode(mu, Obs()));
  const Eigen::VectorXd other = Eigen::VectorXd::Constant(4, 1.5);
  EXPECT_NE(student_.Act(Obs(), Goal(), other),
            student_.Act(Obs(), Goal(), zero));
}

TEST_F(StudentTest, CheckpointRoundTripAndEncoderFreeInference) {
  const PolicyCheckpoint c = student_.ToCheckpoint(
      {{"distill", SmallConfig().ToJson()}}, rng_);
  const Student back = Student::FromCheckpoint(
      PolicyCheckpoint::FromJson(c.ToJson()));
  const Eigen::VectorXd eps = Eigen::VectorXd::Constant(4, 0.2);
  EXPECT_EQ(back.Act(Obs(), Goal(), eps), student_.Act(Obs(), Goal(), eps));
  EXPECT_TRUE(back.has_encoder());
  PolicyCheckpoint stripped = c;
  for (auto it = stripped.tensors.begin(); it != stripped.tensors.end();) {
    it = it->first.rfind("encoder.", 0) == 0 ||
                 it->first.rfind("privileged", 0) == 0
             ? stripped.tensors.erase(it)
             : std::next(it);
  }
  const Student lean = Student::FromCheckpoint(stripped);
  EXPECT_FALSE(lean.has_encoder());
  EXPECT_EQ(lean.Act(Obs(), Goal(), eps), student_.Act(Obs(), Goal(), eps));
}

DistillBatch<double> RandomBatch(const StudentNets<double>& nets, int n,
                                 Rng* rng) {
  DistillBatch<double> b;
  const int obs = 5, goal = 3;
  const int latent = nets.prior.output_size() / 2;
  auto fill = [rng](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = rng->Uniform(-1, 1);
    return m;
  };
  b.obs = fill(obs, n);
  b.goal = fill(goal, n);
  b.privileged = fill(nets.encoder.input_size(), n);
  b.eps = fill(latent, n);
  b.target = fill(nets.decoder.output_size(), n);
  for (int j = 0; j < n; ++j) b.points.push_back(fill(4, 2 + j % 3));
  return b;
}

StudentNets<double> TinyNets(Rng* rng) {
  StudentNets<double> nets;
  nets.points = PointSetEncoder<double>(4, {5}, {3});
  nets.points.Init(rng);
  nets.points.default_vector() << 0.1, -0.2, 0.3;
  nets.encoder = Mlp<double>({6, 7, 4});
  nets.encoder.Init(rng);
  nets.prior = Mlp<double>({5 + 3 + 3, 7, 4});
  nets.prior.Init(rng);
  nets.decoder = Mlp<double>({2 + 5 + 3, 7, 3}, Activation::kTanh,
                             Activation::kIdentity, false);
  nets.decoder.Init(rng);
  return nets;
}

TEST(DistillLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  StudentNets<double> nets = TinyNets(&rng);
  DistillBatch<double> batch = RandomBatch(nets, 5, &rng);
  batch.points[1].resize(4, 0);  // exercises the empty-set default
  const double beta = 0.3;
  Eigen::VectorXd grad;
  DistillLossAndGrad(nets, batch, beta, &grad);
  Eigen::VectorXd p = nets.GetParams();
  const double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    const double x = p[i];
    p[i] = x + h;
    nets.SetParams(p);
    const double lp = DistillLossAndGrad<double>(nets, batch, beta, nullptr).total;
    p[i] = x - h;
    nets.SetParams(p);
    const double lm = DistillLossAndGrad<double>(nets, batch, beta, nullptr).total;
    p[i] = x;
    const double fd = (lp - lm) / (2 * h);
    const double rel =
        std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i]));
    worst = std::max(worst, rel);
  }
  nets.SetParams(p);
  EXPECT_LT(worst, 1e-4);
}

TEST(DistillLossTest, FitsConstantTeacherOnFrozenBatch) {
  Rng rng(12);
  Scene s;
  DistillConfig cfg = SmallConfig();
  cfg.hidden = {32, 32};
  Student student(s.tcfg.robot, s.tcfg.ppo.key_joint_map,
                  TrackerObservationSize(s.tcfg), cfg, &rng);
  std::vector<DistillSample> samples;
  Eigen::VectorXd target(5);
  target << 0.3, -0.2, 0.1, 0.5, -0.4;
  ProprioHistory h(cfg.history);
  for (int t = 0; t < 32; ++t) {
    const SimState st = InitialState(s.clip, s.world, t);
    Rng obs_rng(t);
    const PartialObs o = Observe(st, s.world, Overhead(s, 1.0), h, s.clip, t,
                                 s.tcfg.ppo.key_joint_map, &obs_rng);
    DistillSample d;
    d.features = Featurize(o, MaskGoal(s.clip, t, {true, false, false},
                                       s.tcfg.ppo.key_joint_map,
                                       cfg.goal_window),
                           cfg);
    d.privileged = TrackerObservation(st, s.world, s.clip, t,
                                      Eigen::VectorXd::Zero(5), s.tcfg);
    d.eps = StandardNormal(cfg.latent_dim, &rng);
    d.target = target;
    samples.push_back(d);
  }
  std::vector<const DistillSample*> ptrs;
  for (const auto& d : samples) ptrs.push_back(&d);
  const DistillBatch<float> batch = student.MakeBatch(ptrs);
  AdamConfig adam;
  adam.lr = 3e-3;
  AdamState<float> state;
  Eigen::VectorXf params = student.nets().GetParams();
  double rec = 0.0;
  for (int step = 0; step < 200; ++step) {
    Eigen::VectorXf grad;
    rec = DistillLossAndGrad(student.nets(), batch, 0.0, &grad).rec;
    AdamStep(adam, grad, &params, &state);
    student.nets().SetParams(params);
  }
  rec = DistillLossAndGrad<float>(student.nets(), batch, 0.0, nullptr).rec;
  EXPECT_LT(rec, 1e-3);
}

TEST(DaggerTest, LogsAndDeterminism) {
  TrackerConfig tcfg;
  tcfg.env.randomization.enabled = false;
  tcfg.ppo.iterations = 0;
  tcfg.ppo.hidden = {16};
  const std::vector<ReferenceClip> corpus = {CircleClip()};
  const PolicyCheckpoint teacher =
      TrainTracker(tcfg, corpus, 1).checkpoint;
  const DistillConfig cfg = SmallConfig();
  int seen = 0;
  const DistillResult a = DaggerTrain(teacher, corpus, cfg, 4,
                                      [&](const DistillLogRow&) { ++seen; });
  const DistillResult b = DaggerTrain(teacher, corpus, cfg, 4);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(seen, 2);
  EXPECT_EQ(a.log[0].beta, 0.0);
  EXPECT_EQ(a.log[1].beta, cfg.beta_max);
  EXPECT_GT(a.log[0].l_rec, 0.0);
  EXPECT_EQ(a.checkpoint.tensors, b.checkpoint.tensors);
  EXPECT_EQ(a.checkpoint.kind, "student");
  EXPECT_EQ(DistillLogHeader(), "iteration,L_rec,L_KL,beta,student_success_rate");
}

TEST(DaggerTest, RejectsMismatchedTeacher) {
  TrackerConfig tcfg;
  tcfg.ppo.iterations = 0;
  tcfg.ppo.hidden = {8};
  const std::vector<ReferenceClip> corpus = {CircleClip()};
  PolicyCheckpoint teacher = TrainTracker(tcfg, corpus, 1).checkpoint;
  // Drop one action output from the policy head.
  Tensor& w = teacher.tensors.at("policy.layer1.weight");
  w.shape[0] -= 1;
  w.data.resize(w.shape[0] * w.shape[1]);
  teacher.tensors.at("policy.layer1.bias").data.pop_back();
  teacher.tensors.at("policy.layer1.bias").shape[0] -= 1;
  EXPECT_THROW(DaggerTrain(teacher, corpus, SmallConfig(), 1), ConfigError);
}

TEST(DistillConfigTest, JsonRoundTripAndValidation) {
  DistillConfig c = SmallConfig();
  c.inference_mask = {true, true, false};
  EXPECT_EQ(DistillConfig::FromJson(c.ToJson()), c);
  nlohmann::json j = c.ToJson();
  j["beta_max"] = -1;
  EXPECT_THROW(DistillConfig::FromJson(j), ConfigError);
  j = c.ToJson();
  j["typo"] = 1;
  EXPECT_THROW(DistillConfig::FromJson(j), ConfigError);
}

}  // namespace
}  // namespace dexscope

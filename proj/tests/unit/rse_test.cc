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

#include "dexscope/rse.h"

#include <cmath>

#include "dexscope/errors.h"
#include "fixtures.h"
#include "gtest/gtest.h"

namespace dexscope {
namespace {

using testing::CircleClip;
using testing::GripperWorld;

RewardBreakdown AllAt(double v) {
  RewardBreakdown b;
  b.joint_position = b.joint_rotation = b.object_position = b.object_rotation =
      b.surface_vector = b.contact = v;
  return b;
}

TerminationEnvelope Uniform(int n, double kappa) {
  return TerminationEnvelope::Frozen(n, {kappa, kappa, kappa, kappa}, true);
}

TEST(CheckTerminationTest, InScope) {
  const auto env = Uniform(10, 0.2);
  const Termination r = CheckTermination(AllAt(0.9), env, 3, {true, true});
  EXPECT_FALSE(r.terminate);
  EXPECT_EQ(r.reason, Criterion::kNone);
}

TEST(CheckTerminationTest, ObjectPosition) {
  const auto env = Uniform(10, 0.2);
  RewardBreakdown b = AllAt(0.9);
  b.object_position = 0.1;
  const Termination r = CheckTermination(b, env, 3, {});
  EXPECT_TRUE(r.terminate);
  EXPECT_EQ(r.reason, Criterion::kObjectPosition);
}

TEST(CheckTerminationTest, FirstCriterionWins) {
  const auto env = Uniform(10, 0.5);
  const Termination r =
      CheckTermination(AllAt(0.1), env, 0, std::deque<bool>(20, false));
  EXPECT_EQ(r.reason, Criterion::kJointPosition);
  RewardBreakdown b = AllAt(0.9);
  b.surface_vector = 0.4;
  b.object_rotation = 0.4;
  EXPECT_EQ(CheckTermination(b, env, 0, {}).reason, Criterion::kObjectRotation);
}

TEST(CheckTerminationTest, RotationOfHandIsNotACriterion) {
  const auto env = Uniform(10, 0.5);
  RewardBreakdown b = AllAt(0.9);
  b.joint_rotation = 0.0;
  b.contact = 0.0;
  EXPECT_FALSE(CheckTermination(b, env, 0, {}).terminate);
}

TEST(CheckTerminationTest, ContactWindowIsElevenFrames) {
  const auto env = Uniform(10, 0.0);
  std::deque<bool> h(10, false);
  EXPECT_FALSE(CheckTermination(AllAt(1.0), env, 5, h).terminate);
  h.push_back(true);
  EXPECT_FALSE(CheckTermination(AllAt(1.0), env, 5, h).terminate);
  h.assign(11, false);
  const Termination r = CheckTermination(AllAt(1.0), env, 5, h);
  EXPECT_TRUE(r.terminate);
  EXPECT_EQ(r.reason, Criterion::kContact);
  h.push_front(true);  // older history does not matter
  EXPECT_TRUE(CheckTermination(AllAt(1.0), env, 5, h).terminate);
  const auto off = TerminationEnvelope::Frozen(10, {0, 0, 0, 0}, false);
  EXPECT_FALSE(CheckTermination(AllAt(1.0), off, 5, h).terminate);
}

TEST(CheckTerminationTest, WidestAndTightestScope) {
  const auto wide = Uniform(10, 0.0);
  const auto tight = Uniform(10, 1.0);
  EXPECT_FALSE(
      CheckTermination(AllAt(1e-300), wide, 0, std::deque<bool>(11, true))
          .terminate);
  EXPECT_FALSE(CheckTermination(AllAt(1.0), tight, 0, {}).terminate);
  EXPECT_TRUE(CheckTermination(AllAt(std::nextafter(1.0, 0.0)), tight, 0, {})
                  .terminate);
}

TEST(EnvelopeTest, RecordRollout) {
  RseConfig cfg;
  TerminationEnvelope env(100, cfg);
  for (int i = 0; i < 10; ++i) env.RecordRollout(20, 50, i < 3, 50);
  EXPECT_EQ(env.n_total(50), 10);
  EXPECT_EQ(env.n_fail(50), 3);
  EXPECT_EQ(env.n_total(19), 0);
  EXPECT_EQ(env.n_fail(49), 0);
  env.RecordRollout(0, 99, false, 0);
  EXPECT_EQ(env.n_fail(0), 0);
  EXPECT_EQ(env.n_total(0), 1);
}

TEST(EnvelopeTest, ScheduleExamples) {
  RseConfig cfg;
  cfg.kappa_init = {0.8, 0.8, 0.8, 0.8};
  TerminationEnvelope env(3, cfg);
  for (int i = 0; i < 4; ++i) env.RecordRollout(0, 0, i == 0, 0);
  for (int i = 0; i < 4; ++i) env.RecordRollout(1, 1, false, 1);
  for (int i = 0; i < 4; ++i) env.RecordRollout(2, 2, true, 2);
  TerminationEnvelope fail = env, success = env;
  fail.Update(ScheduleMode::kFailRatio, 1.0);
  success.Update(ScheduleMode::kSuccessRatio, 1.0);
  EXPECT_DOUBLE_EQ(fail.kappa(0, 0), 0.2);
  EXPECT_EQ(fail.kappa(1, 1), 0.0);
  EXPECT_EQ(fail.kappa(2, 2), 0.8);
  EXPECT_DOUBLE_EQ(success.kappa(3, 0), 0.6000000000000001);
  EXPECT_EQ(success.kappa(1, 1), 0.8);
  EXPECT_EQ(success.kappa(2, 2), 0.0);
}

TEST(EnvelopeTest, FramesWithoutStatisticsKeepThresholds) {
  RseConfig cfg;
  cfg.initial_fraction = 0.5;
  TerminationEnvelope env(5, cfg);
  env.RecordRollout(0, 1, true, 1);
  env.Update(ScheduleMode::kSuccessRatio, 0.9);
  EXPECT_EQ(env.kappa(0, 3), 0.25);
  EXPECT_EQ(env.kappa(0, 0), 0.5);
  EXPECT_EQ(env.kappa(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(env.n_total(1), 0.9);
}

TEST(EnvelopeTest, RandomizedInvariants) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    RseConfig cfg;
    for (double& k : cfg.kappa_init) k = rng.Uniform01();
    cfg.mode = trial % 2 ? ScheduleMode::kFailRatio
                         : ScheduleMode::kSuccessRatio;
    TerminationEnvelope env(20, cfg);
    for (int r = 0; r < 30; ++r) {
      const int a = static_cast<int>(rng.UniformInt(20));
      const int b = a + static_cast<int>(rng.UniformInt(20 - a));
      env.RecordRollout(a, b, rng.Uniform01() < 0.4, b);
      if (r % 5 == 4) env.Update(cfg.mode, 0.95);
      for (int t = 0; t < 20; ++t) {
        ASSERT_LE(env.n_fail(t), env.n_total(t));
        for (int c = 0; c < kNumThresholds; ++c) {
          ASSERT_GE(env.kappa(c, t), 0.0);
          ASSERT_LE(env.kappa(c, t), cfg.kappa_init[c]);
        }
      }
    }
  }
}

TEST(EnvelopeTest, UpdateIsMonotoneInFailRatio) {
  for (ScheduleMode mode :
       {ScheduleMode::kFailRatio, ScheduleMode::kSuccessRatio}) {
    double prev = mode == ScheduleMode::kFailRatio ? -1.0 : 2.0;
    for (int fails = 0; fails <= 10; ++fails) {
      RseConfig cfg;
      TerminationEnvelope env(1, cfg);
      for (int i = 0; i < 10; ++i) env.RecordRollout(0, 0, i < fails, 0);
      env.Update(mode, 1.0);
      if (mode == ScheduleMode::kFailRatio) {
        EXPECT_GE(env.kappa(0, 0), prev);
      } else {
        EXPECT_LE(env.kappa(0, 0), prev);
      }
      prev = env.kappa(0, 0);
    }
  }
}

TEST(EnvelopeTest, DisjointFramesCommute) {
  RseConfig cfg;
  TerminationEnvelope a(10, cfg), b(10, cfg);
  a.RecordRollout(0, 3, true, 2);
  a.RecordRollout(5, 8, false, 0);
  b.RecordRollout(5, 8, false, 0);
  b.RecordRollout(0, 3, true, 2);
  a.Update(cfg.mode, cfg.decay);
  b.Update(cfg.mode, cfg.decay);
  EXPECT_EQ(a, b);
}

TEST(EnvelopeTest, AblationStartsTight) {
  RseConfig cfg;
  cfg.adaptive = false;
  TerminationEnvelope env(4, cfg);
  EXPECT_EQ(env.kappa(2, 3), 0.5);
  RseConfig wide;
  EXPECT_EQ(TerminationEnvelope(4, wide).kappa(2, 3), 0.0);
}

TEST(EnvelopeTest, JsonRoundTrip) {
  RseConfig cfg;
  TerminationEnvelope env(6, cfg);
  env.RecordRollout(0, 4, true, 3);
  env.Update(ScheduleMode::kFailRatio, 0.99);
  EXPECT_EQ(TerminationEnvelope::FromJson(env.ToJson()), env);
  nlohmann::json j = env.ToJson();
  j["n_fail"][3] = 100.0;
  EXPECT_THROW(TerminationEnvelope::FromJson(j), ConfigError);
  EXPECT_EQ(RseConfig::FromJson(cfg.ToJson()), cfg);
  nlohmann::json c = cfg.ToJson();
  c["contact_window"] = 0;
  EXPECT_THROW(RseConfig::FromJson(c), ConfigError);
}

TEST(InitialStateTest, FollowsClipFrame) {
  const World world = GripperWorld();
  const ReferenceClip clip = CircleClip();
  for (int frame : {0, 60}) {
    const SimState s = InitialState(clip, world, frame);
    const ReferenceFrame& f = clip.frames[frame];
    EXPECT_EQ(s.q.tail(4), Eigen::VectorXd::Zero(4));
    EXPECT_EQ(s.v, Eigen::VectorXd::Zero(7));
    EXPECT_EQ(s.WristPose().position, f.joint_position[0]);
    EXPECT_EQ(s.WristPose().rotation, f.joint_rotation[0]);
    EXPECT_EQ(s.object_pose, f.object_pose);
    EXPECT_EQ(s.t, frame);
  }
}

TEST(SampleIndexTest, Frequencies) {
  Rng rng(5);
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[SampleIndex({1, 1, 1, 1}, &rng)];
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) EXPECT_LT(std::abs(c - n * 0.25), 3 * sigma);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(SampleIndex({0, 0, 1}, &rng), 2);
}

TEST(SampleInitTest, PrioritiesAndFallback) {
  const World world = GripperWorld();
  const ReferenceClip clip = CircleClip();
  RseConfig cfg;
  TerminationEnvelope env(clip.length(), cfg);
  const auto p = InitPriorities(env, clip, cfg);
  ASSERT_EQ(static_cast<int>(p.size()), clip.length() - 1);
  EXPECT_DOUBLE_EQ(p[0], 0.05 * 0.25);
  EXPECT_DOUBLE_EQ(p[clip.grasp_onset], 0.05);
  InitStateCache cache(clip.length(), 16, 0.5);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto [frame, s] = SampleInit(cache, env, clip, world, cfg, &rng);
    EXPECT_LT(frame, clip.length() - 1);
    EXPECT_EQ(s, InitialState(clip, world, frame));
  }
}

TEST(SampleInitTest, UsesCachedStates) {
  const World world = GripperWorld();
  const ReferenceClip clip = CircleClip();
  RseConfig cfg;
  cfg.priority_epsilon = 0.0;
  TerminationEnvelope env(clip.length(), cfg);
  env.RecordRollout(0, 70, true, 70);
  InitStateCache cache(clip.length(), 16, 0.5);
  SimState cached = InitialState(clip, world, 70);
  cached.q[4] = 0.123456789;
  ASSERT_TRUE(cache.Insert(70, cached, 0.9));
  Rng rng(2);
  const auto [frame, s] = SampleInit(cache, env, clip, world, cfg, &rng);
  EXPECT_EQ(frame, 70);
  EXPECT_EQ(s, cached);
}

TEST(InitStateCacheTest, ThresholdAndFifo) {
  const World world = GripperWorld();
  const ReferenceClip clip = CircleClip();
  InitStateCache cache(5, 16, 0.5);
  SimState s = InitialState(clip, world, 0);
  EXPECT_FALSE(cache.Insert(2, s, 0.49));
  EXPECT_EQ(cache.TotalSize(), 0u);
  for (int i = 0; i < 17; ++i) {
    s.q[3] = i;
    ASSERT_TRUE(cache.Insert(2, s, 0.5));
  }
  ASSERT_EQ(cache.At(2).size(), 16u);
  EXPECT_EQ(cache.At(2).front().q[3], 1.0);
  EXPECT_EQ(cache.At(2).back().q[3], 16.0);
  s.q[0] = std::nan("");
  EXPECT_FALSE(cache.Insert(2, s, 1.0));
}

TEST(ContactsMatchTest, Basic) {
  const World world = GripperWorld();
  const ReferenceClip clip = CircleClip();
  const KeyJointMap map = KeyJointMap::Default();
  SimState s = InitialState(clip, world, 0);
  EXPECT_TRUE(ContactsMatch(s, world.model(), clip, 0, map));
  EXPECT_FALSE(ContactsMatch(s, world.model(), clip, 70, map));
}

}  // namespace
}  // namespace dexscope

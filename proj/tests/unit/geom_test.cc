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

#include "dexscope/geom.h"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "gtest/gtest.h"

namespace dexscope {
namespace {

TEST(WrapAngleTest, FullTurnIsZero) {
  EXPECT_NEAR(WrapAngle(kTwoPi).value(), 0.0, 1e-15);
}

TEST(WrapAngleTest, PiStaysPi) { EXPECT_EQ(WrapAngle(kPi).value(), kPi); }

TEST(WrapAngleTest, MinusPiMapsToPi) {
  EXPECT_EQ(WrapAngle(-kPi).value(), kPi);
}

TEST(WrapAngleTest, ThreeHalvesNegative) {
  EXPECT_NEAR(WrapAngle(-1.5 * kPi).value(), 0.5 * kPi, 1e-15);
}

TEST(WrapAngleTest, RejectsNonFinite) {
  EXPECT_THROW(WrapAngle(std::numeric_limits<double>::quiet_NaN()),
               std::invalid_argument);
  EXPECT_THROW(WrapAngle(std::numeric_limits<double>::infinity()),
               std::invalid_argument);
}

TEST(WrapAngleTest, IdempotentAndInRange) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> dist(-100.0, 100.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = dist(gen);
    const Angle a = WrapAngle(x);
    EXPECT_GT(a.value(), -kPi);
    EXPECT_LE(a.value(), kPi);
    EXPECT_EQ(WrapAngle(a.value()), a);
    EXPECT_NEAR(std::remainder(x - a.value(), kTwoPi), 0.0, 1e-12);
  }
}

TEST(RotDiffTest, Examples) {
  EXPECT_EQ(RotDiff(Angle(0.1), Angle(0.1)).value(), 0.0);
  EXPECT_NEAR(RotDiff(Angle(kPi / 2), Angle(-kPi / 2)).value(), kPi, 1e-15);
  EXPECT_NEAR(RotDiff(Angle(-3.0), Angle(3.0)).value(), -6.0 + kTwoPi, 1e-12);
  EXPECT_NEAR(RotDiff(Angle(-3.0), Angle(3.0)).value(), 0.28319, 1e-5);
}

TEST(RotDiffTest, BoundedAndAntisymmetric) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> dist(-kPi, kPi);
  for (int i = 0; i < 10000; ++i) {
    const Angle a(dist(gen)), b(dist(gen));
    const double d = RotDiff(a, b).value();
    EXPECT_LE(std::abs(d), kPi);
    const double back = RotDiff(b, a).value();
    EXPECT_NEAR(std::remainder(d + back, kTwoPi), 0.0, 1e-12);
  }
}

TEST(FrameTest, Examples) {
  const Vec2 p(1.0, 1.0);
  EXPECT_TRUE(ToFrame(Pose2(), p).isApprox(p));
  EXPECT_TRUE(ToFrame(Pose2(1.0, 0.0, 0.0), p).isApprox(Vec2(0.0, 1.0)));
  const Vec2 r = ToFrame(Pose2(0.0, 0.0, kPi / 2), Vec2(1.0, 0.0));
  EXPECT_NEAR(r.x(), 0.0, 1e-15);
  EXPECT_NEAR(r.y(), -1.0, 1e-15);
}

TEST(FrameTest, RoundTrip) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const Pose2 frame(dist(gen), dist(gen), dist(gen));
    const Vec2 p(dist(gen), dist(gen));
    EXPECT_LE((ToFrame(frame, FromFrame(frame, p)) - p).norm(), 1e-12);
    EXPECT_LE((FromFrame(frame, ToFrame(frame, p)) - p).norm(), 1e-12);
  }
}

TEST(FrameTest, ComposeMatchesPointMaps) {
  const Pose2 a(0.3, -1.2, 0.7), b(2.0, 0.5, -2.9);
  const Pose2 ab = Compose(a, b);
  const Vec2 p(0.4, -0.8);
  EXPECT_LE((FromFrame(ab, p) - FromFrame(a, FromFrame(b, p))).norm(), 1e-12);
  const Pose2 rel = PoseToFrame(a, ab);
  EXPECT_LE((rel.position - b.position).norm(), 1e-12);
  EXPECT_NEAR(RotDiff(rel.rotation, b.rotation).value(), 0.0, 1e-12);
}

}  // namespace
}  // namespace dexscope

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
#include <stdexcept>
#include <string>

namespace dexscope {

double WrapRadians(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("WrapRadians: non-finite angle " +
                                std::to_string(theta));
  }
  // std::remainder is exact and lands in [-pi, pi]; fold the lower endpoint.
  double r = std::remainder(theta, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  if (r > kPi) r -= kTwoPi;
  return r;
}

double Angle::cos() const { return std::cos(value_); }
double Angle::sin() const { return std::sin(value_); }

Angle WrapAngle(double theta) { return Angle(theta); }

Angle RotDiff(Angle a, Angle b) { return Angle(a.value() - b.value()); }

Eigen::Matrix2d Rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

Vec2 ToFrame(const Pose2& frame, const Vec2& point) {
  return VectorToFrame(frame, point - frame.position);
}

Vec2 FromFrame(const Pose2& frame, const Vec2& point) {
  return VectorFromFrame(frame, point) + frame.position;
}

Vec2 VectorToFrame(const Pose2& frame, const Vec2& v) {
  const double c = frame.rotation.cos();
  const double s = frame.rotation.sin();
  return Vec2(c * v.x() + s * v.y(), -s * v.x() + c * v.y());
}

Vec2 VectorFromFrame(const Pose2& frame, const Vec2& v) {
  const double c = frame.rotation.cos();
  const double s = frame.rotation.sin();
  return Vec2(c * v.x() - s * v.y(), s * v.x() + c * v.y());
}

Pose2 Compose(const Pose2& a, const Pose2& b) {
  return Pose2(FromFrame(a, b.position), a.rotation + b.rotation);
}

Pose2 PoseToFrame(const Pose2& frame, const Pose2& pose) {
  return Pose2(ToFrame(frame, pose.position),
               RotDiff(pose.rotation, frame.rotation));
}

}  // namespace dexscope

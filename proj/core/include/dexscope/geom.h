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

#ifndef DEXSCOPE_GEOM_H_
#define DEXSCOPE_GEOM_H_

#include <Eigen/Core>

#include <numbers>

namespace dexscope {

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Maps any finite angle onto (-pi, pi]. Throws std::invalid_argument for
// NaN or infinite input.
double WrapRadians(double theta);

// Planar rotation. The stored value always lies in (-pi, pi].
class Angle {
 public:
  constexpr Angle() = default;
  explicit Angle(double radians) : value_(WrapRadians(radians)) {}

  double value() const { return value_; }
  double cos() const;
  double sin() const;

  Angle operator+(Angle other) const { return Angle(value_ + other.value_); }
  Angle operator-(Angle other) const { return Angle(value_ - other.value_); }
  Angle operator-() const { return Angle(-value_); }
  bool operator==(const Angle&) const = default;

 private:
  double value_ = 0.0;
};

Angle WrapAngle(double theta);

// Rotation difference a (-) b, wrapped onto (-pi, pi].
Angle RotDiff(Angle a, Angle b);

// 2x2 rotation matrix.
Eigen::Matrix2d Rotation(double theta);

// Rotates v by +90 degrees.
inline Vec2 Perp(const Vec2& v) { return Vec2(-v.y(), v.x()); }

inline double Cross(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

struct Pose2 {
  Vec2 position = Vec2::Zero();
  Angle rotation;

  Pose2() = default;
  Pose2(const Vec2& p, Angle r) : position(p), rotation(r) {}
  Pose2(double x, double y, double theta) : position(x, y), rotation(theta) {}
  bool operator==(const Pose2& o) const {
    return position == o.position && rotation == o.rotation;
  }
};

// Expresses a world point in the frame: R(-theta) (p - origin).
Vec2 ToFrame(const Pose2& frame, const Vec2& point);
// Inverse of ToFrame.
Vec2 FromFrame(const Pose2& frame, const Vec2& point);
// Rotates a free vector into / out of the frame (no translation).
Vec2 VectorToFrame(const Pose2& frame, const Vec2& v);
Vec2 VectorFromFrame(const Pose2& frame, const Vec2& v);

// a * b: applies b expressed in a's frame.
Pose2 Compose(const Pose2& a, const Pose2& b);
// Pose of `pose` expressed in `frame`.
Pose2 PoseToFrame(const Pose2& frame, const Pose2& pose);

}  // namespace dexscope

#endif  // DEXSCOPE_GEOM_H_

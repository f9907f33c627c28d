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

#ifndef DEXSCOPE_SHAPE_H_
#define DEXSCOPE_SHAPE_H_

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "dexscope/geom.h"

namespace dexscope {

// Result of a signed-distance query. `normal` is the outward unit normal of
// the surface at `closest`; for points outside it also equals the direction
// from `closest` to the query point.
struct SurfaceQuery {
  double distance = 0.0;
  Vec2 closest = Vec2::Zero();
  Vec2 normal = Vec2::UnitX();
};

// Closest approach between a segment and a shape. `segment_param` in [0, 1]
// locates the witness point on the segment.
struct SegmentQuery {
  double distance = 0.0;
  double segment_param = 0.0;
  Vec2 segment_point = Vec2::Zero();
  Vec2 closest = Vec2::Zero();
  Vec2 normal = Vec2::UnitX();
};

// Rigid object geometry in its body frame; the centroid sits at the origin.
// Polygons are convex with counter-clockwise vertices.
class ObjectShape {
 public:
  enum class Kind { kCircle, kPolygon };

  ObjectShape() = default;
  static ObjectShape Circle(double radius);
  static ObjectShape Box(double width, double height);
  // Recenters the vertices on their area centroid (input that is already
  // centred to within 1e-12 relative is kept as is). Throws ConfigError for
  // fewer than 3 vertices or a non-convex / clockwise outline.
  static ObjectShape Polygon(std::vector<Vec2> vertices);

  Kind kind() const { return kind_; }
  double radius() const { return radius_; }
  const std::vector<Vec2>& vertices() const { return vertices_; }

  ObjectShape Scaled(double factor) const;

  double Area() const;
  // Integral of |r|^2 over the area; times the areal density gives the
  // moment of inertia about the centroid.
  double SecondMoment() const;
  // Radius of the smallest origin-centred circle containing the shape.
  double BoundingRadius() const;

  SurfaceQuery Query(const Vec2& p) const;
  double SignedDistance(const Vec2& p) const { return Query(p).distance; }
  SegmentQuery QuerySegment(const Vec2& a, const Vec2& b) const;
  // Smallest t >= 0 with origin + t * dir on the boundary; dir is unit.
  std::optional<double> Raycast(const Vec2& origin, const Vec2& dir) const;

  bool operator==(const ObjectShape&) const = default;

 private:
  Kind kind_ = Kind::kCircle;
  double radius_ = 0.0;
  std::vector<Vec2> vertices_;
  std::vector<Vec2> edge_normals_;
};

// {"kind": "circle", "radius": r} or {"kind": "polygon", "vertices": [...]}.
nlohmann::json ShapeToJson(const ObjectShape& shape);
// Throws ConfigError.
ObjectShape ShapeFromJson(const nlohmann::json& j);

// Lowest world y of the shape placed at `pose`.
double LowestPoint(const ObjectShape& shape, const Pose2& pose);

// Closest point on segment [a, b] to p, as a parameter in [0, 1].
double ClosestSegmentParam(const Vec2& a, const Vec2& b, const Vec2& p);

// Ray / capsule intersection; returns the entry distance.
std::optional<double> RaycastCapsule(const Vec2& origin, const Vec2& dir,
                                     const Vec2& a, const Vec2& b,
                                     double radius);

}  // namespace dexscope

#endif  // DEXSCOPE_SHAPE_H_

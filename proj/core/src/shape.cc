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

#include "dexscope/shape.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dexscope/errors.h"
#include "dexscope/json_util.h"

namespace dexscope {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::optional<double> RaycastCircle(const Vec2& origin, const Vec2& dir,
                                    const Vec2& center, double radius) {
  const Vec2 o = origin - center;
  const double b = o.dot(dir);
  const double c = o.squaredNorm() - radius * radius;
  if (c <= 0.0) return std::nullopt;  // Starts inside.
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t < 0.0) return std::nullopt;
  return t;
}

}  // namespace

double ClosestSegmentParam(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) return 0.0;
  return std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
}

ObjectShape ObjectShape::Circle(double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw ConfigError("circle radius must be positive and finite");
  }
  ObjectShape s;
  s.kind_ = Kind::kCircle;
  s.radius_ = radius;
  return s;
}

ObjectShape ObjectShape::Box(double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) {
    throw ConfigError("box dimensions must be positive");
  }
  const double hx = 0.5 * width, hy = 0.5 * height;
  return Polygon({Vec2(-hx, -hy), Vec2(hx, -hy), Vec2(hx, hy), Vec2(-hx, hy)});
}

ObjectShape ObjectShape::Polygon(std::vector<Vec2> vertices) {
  const size_t n = vertices.size();
  if (n < 3) throw ConfigError("polygon needs at least 3 vertices");
  double area2 = 0.0;
  Vec2 centroid = Vec2::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = vertices[i];
    const Vec2& q = vertices[(i + 1) % n];
    if (!p.allFinite()) throw ConfigError("polygon vertex is not finite");
    const double c = Cross(p, q);
    area2 += c;
    centroid += c * (p + q);
  }
  if (!(area2 > 0.0)) {
    throw ConfigError("polygon must be counter-clockwise with positive area");
  }
  centroid /= 3.0 * area2;
  double extent = 0.0;
  for (const Vec2& v : vertices) extent = std::max(extent, v.norm());
  // Already-centred input (e.g. a deserialized shape) is kept bit-exact.
  if (centroid.norm() > 1e-12 * extent) {
    for (Vec2& v : vertices) v -= centroid;
  }
  ObjectShape s;
  s.kind_ = Kind::kPolygon;
  s.edge_normals_.reserve(n);
  double scale = 0.0;
  for (const Vec2& v : vertices) scale = std::max(scale, v.norm());
  for (size_t i = 0; i < n; ++i) {
    const Vec2 e0 = vertices[(i + 1) % n] - vertices[i];
    const Vec2 e1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
    if (e0.norm() <= 1e-12 * scale) throw ConfigError("repeated vertex");
    if (Cross(e0, e1) <= -1e-12 * scale * scale) {
      throw ConfigError("polygon must be convex");
    }
    s.edge_normals_.push_back(Vec2(e0.y(), -e0.x()).normalized());
  }
  s.vertices_ = std::move(vertices);
  s.radius_ = scale;
  return s;
}

ObjectShape ObjectShape::Scaled(double factor) const {
  if (!(factor > 0.0)) throw ConfigError("shape scale must be positive");
  ObjectShape s = *this;
  s.radius_ *= factor;
  for (Vec2& v : s.vertices_) v *= factor;
  return s;
}

double ObjectShape::Area() const {
  if (kind_ == Kind::kCircle) return kPi * radius_ * radius_;
  double area2 = 0.0;
  const size_t n = vertices_.size();
  for (size_t i = 0; i < n; ++i) {
    area2 += Cross(vertices_[i], vertices_[(i + 1) % n]);
  }
  return 0.5 * area2;
}

double ObjectShape::SecondMoment() const {
  if (kind_ == Kind::kCircle) return 0.5 * kPi * std::pow(radius_, 4);
  double sum = 0.0;
  const size_t n = vertices_.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = vertices_[i];
    const Vec2& q = vertices_[(i + 1) % n];
    sum += Cross(p, q) * (p.squaredNorm() + p.dot(q) + q.squaredNorm());
  }
  return sum / 12.0;
}

double ObjectShape::BoundingRadius() const { return radius_; }

SurfaceQuery ObjectShape::Query(const Vec2& p) const {
  SurfaceQuery out;
  if (kind_ == Kind::kCircle) {
    const double r = p.norm();
    out.normal = r > 0.0 ? Vec2(p / r) : Vec2(Vec2::UnitX());
    out.closest = radius_ * out.normal;
    out.distance = r - radius_;
    return out;
  }
  const size_t n = vertices_.size();
  double s_max = -kInf;
  size_t i_max = 0;
  for (size_t i = 0; i < n; ++i) {
    const double s = edge_normals_[i].dot(p - vertices_[i]);
    if (s > s_max) {
      s_max = s;
      i_max = i;
    }
  }
  if (s_max <= 0.0) {
    out.distance = s_max;
    out.normal = edge_normals_[i_max];
    out.closest = p - s_max * out.normal;
    return out;
  }
  double best = kInf;
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = vertices_[i];
    const Vec2& b = vertices_[(i + 1) % n];
    const Vec2 q = a + ClosestSegmentParam(a, b, p) * (b - a);
    const double d = (p - q).squaredNorm();
    if (d < best) {
      best = d;
      out.closest = q;
    }
  }
  out.distance = std::sqrt(best);
  out.normal = (p - out.closest) / out.distance;
  return out;
}

SegmentQuery ObjectShape::QuerySegment(const Vec2& a, const Vec2& b) const {
  SegmentQuery out;
  const Vec2 ab = b - a;
  if (kind_ == Kind::kCircle) {
    out.segment_param = ClosestSegmentParam(a, b, Vec2::Zero());
    out.segment_point = a + out.segment_param * ab;
    const SurfaceQuery q = Query(out.segment_point);
    out.distance = q.distance;
    out.closest = q.closest;
    out.normal = q.normal;
    return out;
  }
  // The convex SDF restricted to the segment is max_i (alpha_i + s beta_i)
  // while inside; its minimum lies at an endpoint or a pairwise crossing.
  const size_t n = vertices_.size();
  auto inside_value = [&](double s, size_t* arg) {
    const Vec2 p = a + s * ab;
    double best = -kInf;
    for (size_t i = 0; i < n; ++i) {
      const double v = edge_normals_[i].dot(p - vertices_[i]);
      if (v > best) {
        best = v;
        *arg = i;
      }
    }
    return best;
  };
  double g_best = kInf, s_best = 0.0;
  size_t i_best = 0;
  auto consider = [&](double s) {
    size_t arg = 0;
    const double g = inside_value(s, &arg);
    if (g < g_best) {
      g_best = g;
      s_best = s;
      i_best = arg;
    }
  };
  consider(0.0);
  consider(1.0);
  for (size_t i = 0; i < n; ++i) {
    const double alpha_i = edge_normals_[i].dot(a - vertices_[i]);
    const double beta_i = edge_normals_[i].dot(ab);
    for (size_t j = i + 1; j < n; ++j) {
      const double alpha_j = edge_normals_[j].dot(a - vertices_[j]);
      const double beta_j = edge_normals_[j].dot(ab);
      const double denom = beta_i - beta_j;
      if (std::abs(denom) < 1e-15) continue;
      const double s = (alpha_j - alpha_i) / denom;
      if (s > 0.0 && s < 1.0) consider(s);
    }
  }
  if (g_best <= 0.0) {
    out.distance = g_best;
    out.segment_param = s_best;
    out.segment_point = a + s_best * ab;
    out.normal = edge_normals_[i_best];
    out.closest = out.segment_point - g_best * out.normal;
    return out;
  }
  // Disjoint: a closest pair always involves a vertex of one of the sets.
  double best = kInf;
  for (double s : {0.0, 1.0}) {
    const Vec2 p = a + s * ab;
    const SurfaceQuery q = Query(p);
    if (q.distance < best) {
      best = q.distance;
      out.segment_param = s;
      out.segment_point = p;
      out.closest = q.closest;
    }
  }
  for (const Vec2& v : vertices_) {
    const double s = ClosestSegmentParam(a, b, v);
    const Vec2 p = a + s * ab;
    const double d = (p - v).norm();
    if (d < best) {
      best = d;
      out.segment_param = s;
      out.segment_point = p;
      out.closest = v;
    }
  }
  out.distance = best;
  out.normal = (out.segment_point - out.closest) / best;
  return out;
}

std::optional<double> ObjectShape::Raycast(const Vec2& origin,
                                           const Vec2& dir) const {
  if (kind_ == Kind::kCircle) {
    return RaycastCircle(origin, dir, Vec2::Zero(), radius_);
  }
  double t_lo = -kInf, t_hi = kInf;
  const size_t n = vertices_.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& nrm = edge_normals_[i];
    const double num = nrm.dot(vertices_[i] - origin);
    const double denom = nrm.dot(dir);
    if (denom == 0.0) {
      if (num < 0.0) return std::nullopt;
      continue;
    }
    const double t = num / denom;
    if (denom < 0.0) {
      t_lo = std::max(t_lo, t);
    } else {
      t_hi = std::min(t_hi, t);
    }
    if (t_lo > t_hi) return std::nullopt;
  }
  if (t_lo < 0.0) return std::nullopt;
  return t_lo;
}

std::optional<double> RaycastCapsule(const Vec2& origin, const Vec2& dir,
                                     const Vec2& a, const Vec2& b,
                                     double radius) {
  std::optional<double> best;
  auto keep = [&best](std::optional<double> t) {
    if (t && (!best || *t < *best)) best = t;
  };
  keep(RaycastCircle(origin, dir, a, radius));
  keep(RaycastCircle(origin, dir, b, radius));
  const Vec2 ab = b - a;
  const double len = ab.norm();
  if (len > 0.0) {
    const Vec2 u = ab / len;
    const Vec2 nrm = Perp(u);
    const double oy = nrm.dot(origin - a);
    const double dy = nrm.dot(dir);
    if (std::abs(oy) > radius && dy != 0.0) {
      const double side = oy > 0.0 ? radius : -radius;
      const double t = (side - oy) / dy;
      const double x = u.dot(origin + t * dir - a);
      if (t >= 0.0 && x >= 0.0 && x <= len) keep(t);
    }
  }
  return best;
}

nlohmann::json ShapeToJson(const ObjectShape& shape) {
  if (shape.kind() == ObjectShape::Kind::kCircle) {
    return {{"kind", "circle"}, {"radius", shape.radius()}};
  }
  nlohmann::json verts = nlohmann::json::array();
  for (const Vec2& v : shape.vertices()) verts.push_back(VecToJson(v));
  return {{"kind", "polygon"}, {"vertices", verts}};
}

ObjectShape ShapeFromJson(const nlohmann::json& j) {
  RejectUnknownKeys(j, {"kind", "radius", "vertices", "width", "height"},
                    "shape");
  const std::string kind = ReadRequired<std::string>(j, "kind");
  if (kind == "circle") return ObjectShape::Circle(ReadRequired<double>(j, "radius"));
  if (kind == "box") {
    return ObjectShape::Box(ReadRequired<double>(j, "width"),
                            ReadRequired<double>(j, "height"));
  }
  if (kind == "polygon") {
    const auto it = j.find("vertices");
    if (it == j.end() || !it->is_array()) {
      throw ConfigError("polygon shape needs a vertices array");
    }
    std::vector<Vec2> verts;
    for (const auto& v : *it) verts.push_back(VecFromJson(v));
    return ObjectShape::Polygon(std::move(verts));
  }
  throw ConfigError("unknown shape kind '" + kind + "'");
}

double LowestPoint(const ObjectShape& shape, const Pose2& pose) {
  if (shape.kind() == ObjectShape::Kind::kCircle) {
    return pose.position.y() - shape.radius();
  }
  double low = std::numeric_limits<double>::infinity();
  for (const Vec2& v : shape.vertices()) {
    low = std::min(low, FromFrame(pose, v).y());
  }
  return low;
}

}  // namespace dexscope

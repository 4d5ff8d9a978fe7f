#pragma once

#include <Eigen/Dense>
#include <vector>

#include "core/error.hpp"

namespace mvi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// 3x3 projective transform in image coordinates, normalized so m(2,2) == 1.
struct Homography {
  Mat3 m = Mat3::Identity();

  static Homography identity() { return Homography{}; }

  static Homography from_matrix(const Mat3& raw) {
    require(raw.allFinite(), ErrKind::numeric, "homography has non-finite entries");
    require(std::abs(raw(2, 2)) > 1e-15, ErrKind::numeric, "homography m22 is zero");
    Homography h;
    h.m = raw / raw(2, 2);
    require(std::abs(h.m.determinant()) > 1e-15, ErrKind::numeric, "homography is singular");
    return h;
  }

  Homography inverse() const { return from_matrix(Mat3(m.inverse())); }

  Homography compose_after(const Homography& first) const {
    // (*this) applied after `first`: x -> this(first(x)).
    return from_matrix(Mat3(m * first.m));
  }
};

inline Vec2 warp_point(const Homography& h, const Vec2& p) {
  const Vec3 q = h.m * Vec3(p.x(), p.y(), 1.0);
  require(std::abs(q.z()) > 1e-9, ErrKind::numeric, "warp_point: point maps to infinity");
  return Vec2(q.x() / q.z(), q.y() / q.z());
}

std::vector<Vec2> warp_points(const Homography& h, const std::vector<Vec2>& pts);

double condition_number(const Mat3& m);

// Counter-clockwise convex hull (Andrew monotone chain); collinear points on
// the boundary are dropped. Throws when all points are collinear.
std::vector<Vec2> convex_hull(const std::vector<Vec2>& pts);

// Inside-or-on test against a CCW hull.
bool point_in_convex_ccw(const std::vector<Vec2>& hull, const Vec2& p, double eps = 1e-12);

double polygon_area(const std::vector<Vec2>& poly);

}  // namespace mvi

#include "core/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace mvi {

std::vector<Vec2> warp_points(const Homography& h, const std::vector<Vec2>& pts) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(warp_point(h, p));
  return out;
}

double condition_number(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m);
  const auto& sv = svd.singularValues();
  if (sv(2) <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / sv(2);
}

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace

std::vector<Vec2> convex_hull(const std::vector<Vec2>& pts) {
  require_arg(pts.size() >= 3, "convex_hull: need at least 3 points");
  std::vector<Vec2> p = pts;
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  p.erase(std::unique(p.begin(), p.end(),
                      [](const Vec2& a, const Vec2& b) { return a.x() == b.x() && a.y() == b.y(); }),
          p.end());
  const std::size_t n = p.size();
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper chain
    while (k >= t && cross(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k > 0 ? k - 1 : 0);
  require(hull.size() >= 3, ErrKind::numeric, "convex_hull: points are collinear");
  return hull;
}

bool point_in_convex_ccw(const std::vector<Vec2>& hull, const Vec2& p, double eps) {
  const std::size_t n = hull.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (cross(hull[i], hull[(i + 1) % n], p) < -eps) return false;
  }
  return true;
}

double polygon_area(const std::vector<Vec2>& poly) {
  double twice = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    twice += a.x() * b.y() - a.y() * b.x();
  }
  return 0.5 * std::abs(twice);
}

}  // namespace mvi

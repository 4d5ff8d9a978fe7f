#include "adapt/adapt.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "maskkit/maskkit.hpp"

namespace mvi::adapt {

namespace {

constexpr double kDegenerateSvRatio = 1e-9;
// Accepted consensus sets must cover at least this fraction of the matches
// (and never fewer than the minimal sample). Random agreement among pure
// outliers stays well below it, so hopeless inputs fail loudly.
constexpr double kMinInlierFrac = 0.25;
// Replacement targets for synthetic outliers are redrawn until they sit at
// least this far from the true correspondence.
constexpr double kOutlierMinOffsetPx = 6.0;

bool in_rect(const Vec2& p, double w, double h) {
  return p.x() >= 0.0 && p.x() <= w && p.y() >= 0.0 && p.y() <= h;
}

// Similarity that moves the points to centroid zero and mean distance sqrt(2).
Mat3 hartley_transform(const std::vector<Vec2>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= double(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= double(pts.size());
  require(mean_dist > 1e-12, ErrKind::numeric, "dlt_homography: points coincide");
  const double s = std::sqrt(2.0) / mean_dist;
  Mat3 t = Mat3::Identity();
  t(0, 0) = s;
  t(1, 1) = s;
  t(0, 2) = -s * centroid.x();
  t(1, 2) = -s * centroid.y();
  return t;
}

Vec2 apply_affine(const Mat3& t, const Vec2& p) {
  return Vec2(t(0, 0) * p.x() + t(0, 2), t(1, 1) * p.y() + t(1, 2));
}

double reproj_error(const Homography& h, const Match& m) {
  return (warp_point(h, m.ref) - m.tgt).norm();
}

}  // namespace

void MatchSet::check() const {
  require_arg(pairs.size() >= 4, "match set needs at least 4 pairs");
  require_arg(height > 0 && width > 0, "match set has empty image bounds");
  for (const auto& m : pairs) {
    require(m.ref.allFinite() && m.tgt.allFinite(), ErrKind::numeric,
            "match set has non-finite coordinates");
    require_arg(in_rect(m.ref, width, height) && in_rect(m.tgt, width, height),
                "match coordinates outside image bounds");
  }
}

void BoxFootprint::check() const {
  for (const auto& p : bottom) {
    require(p.allFinite(), ErrKind::numeric, "footprint has non-finite coordinates");
  }
  require_arg(height_px > 0.0, "footprint height must be positive");
  // Throws when the quad collapses to a line.
  convex_hull(std::vector<Vec2>(bottom.begin(), bottom.end()));
}

MatchSet sample_plane_matches(const scene::SceneBundle& bundle, int view, int n, double noise_px,
                              double outlier_frac, Rng& rng) {
  require_arg(view >= 0 && view < bundle.num_frames(), "view index out of range");
  require_arg(n >= 4, "need at least 4 matches");
  require_arg(noise_px >= 0.0, "noise must be non-negative");
  require_arg(outlier_frac >= 0.0 && outlier_frac <= 1.0, "outlier fraction must be in [0,1]");

  const int res = bundle.resolution();
  const Homography& gt = bundle.homographies[size_t(view)];
  const Mask& plane = bundle.plane_masks[0];
  const double margin = std::max(2.0, 3.0 * noise_px);

  // Reference candidates: plane pixels of frame 0 whose true correspondence
  // stays comfortably inside the target view.
  std::vector<Vec2> candidates;
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      if (!plane.at(y, x)) continue;
      const Vec2 ref(x + 0.5, y + 0.5);
      const Vec2 tgt = warp_point(gt, ref);
      if (tgt.x() >= margin && tgt.x() <= res - margin && tgt.y() >= margin &&
          tgt.y() <= res - margin) {
        candidates.push_back(ref);
      }
    }
  }
  require(int(candidates.size()) >= n, ErrKind::invalid_argument,
          "plane mask too small to sample matches");

  // Partial Fisher-Yates: first n entries become the sample.
  for (int k = 0; k < n; ++k) {
    const int j = rng.uniform_int(k, int(candidates.size()) - 1);
    std::swap(candidates[size_t(k)], candidates[size_t(j)]);
  }

  MatchSet out;
  out.height = res;
  out.width = res;
  out.pairs.reserve(size_t(n));
  for (int k = 0; k < n; ++k) {
    const Vec2 ref = candidates[size_t(k)];
    Vec2 tgt = warp_point(gt, ref);
    if (noise_px > 0.0) {
      tgt.x() += rng.normal(0.0, noise_px);
      tgt.y() += rng.normal(0.0, noise_px);
      tgt.x() = std::clamp(tgt.x(), 0.0, double(res));
      tgt.y() = std::clamp(tgt.y(), 0.0, double(res));
    }
    out.pairs.push_back({ref, tgt});
  }

  const int n_out = int(std::lround(outlier_frac * n));
  if (n_out > 0) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < n_out; ++k) {
      const int j = rng.uniform_int(k, n - 1);
      std::swap(idx[size_t(k)], idx[size_t(j)]);
    }
    for (int k = 0; k < n_out; ++k) {
      Match& m = out.pairs[size_t(idx[size_t(k)])];
      const Vec2 truth = warp_point(gt, m.ref);
      do {
        m.tgt = Vec2(rng.uniform(0.0, double(res)), rng.uniform(0.0, double(res)));
      } while ((m.tgt - truth).norm() < kOutlierMinOffsetPx);
    }
  }
  out.check();
  return out;
}

Homography dlt_homography(const std::vector<Match>& pairs) {
  require_arg(pairs.size() >= 4, "dlt_homography: need at least 4 pairs");
  const std::size_t n = pairs.size();

  std::vector<Vec2> refs(n), tgts(n);
  for (std::size_t i = 0; i < n; ++i) {
    refs[i] = pairs[i].ref;
    tgts[i] = pairs[i].tgt;
  }
  const Mat3 t_ref = hartley_transform(refs);
  const Mat3 t_tgt = hartley_transform(tgts);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = apply_affine(t_ref, refs[i]);
    const Vec2 q = apply_affine(t_tgt, tgts[i]);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    a.row(2 * i + 1) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A homography pins down 8 degrees of freedom; a collapse of the 8th
  // singular value means the configuration (collinear or repeated points)
  // no longer determines one.
  require(sv(7) > kDegenerateSvRatio * sv(0), ErrKind::numeric,
          "dlt_homography: degenerate point configuration");
  Eigen::Matrix<double, 9, 1> hv = svd.matrixV().col(8);
  Mat3 hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  return Homography::from_matrix(Mat3(t_tgt.inverse() * hn * t_ref));
}

RansacResult ransac_homography(const MatchSet& matches, int iters, double thresh_px, Rng& rng) {
  matches.check();
  require_arg(iters > 0, "ransac_homography: iters must be positive");
  require_arg(thresh_px > 0.0, "ransac_homography: threshold must be positive");

  const int n = int(matches.pairs.size());
  const int min_accept = std::max(4, int(std::ceil(kMinInlierFrac * n)));

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> best_flags;
  int best_count = 0;

  for (int it = 0; it < iters; ++it) {
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < 4; ++k) {
      const int j = rng.uniform_int(k, n - 1);
      std::swap(idx[size_t(k)], idx[size_t(j)]);
    }
    std::vector<Match> minimal = {matches.pairs[size_t(idx[0])], matches.pairs[size_t(idx[1])],
                                  matches.pairs[size_t(idx[2])], matches.pairs[size_t(idx[3])]};
    Homography h;
    try {
      h = dlt_homography(minimal);
    } catch (const Error&) {
      continue;  // degenerate minimal sample
    }
    int count = 0;
    for (int i = 0; i < n; ++i) {
      const bool in = reproj_error(h, matches.pairs[size_t(i)]) < thresh_px;
      flags[size_t(i)] = in ? 1 : 0;
      if (in) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_flags = flags;
    }
  }

  require(best_count >= min_accept, ErrKind::numeric,
          "ransac_homography: no consensus among the matches");

  std::vector<Match> consensus;
  consensus.reserve(size_t(best_count));
  for (int i = 0; i < n; ++i) {
    if (best_flags[size_t(i)]) consensus.push_back(matches.pairs[size_t(i)]);
  }

  RansacResult out;
  out.h = dlt_homography(consensus);
  out.inlier.assign(size_t(n), 0);
  out.inlier_count = 0;
  for (int i = 0; i < n; ++i) {
    if (reproj_error(out.h, matches.pairs[size_t(i)]) < thresh_px) {
      out.inlier[size_t(i)] = 1;
      ++out.inlier_count;
    }
  }
  return out;
}

Mask rasterize_convex(const std::vector<Vec2>& poly, int height, int width) {
  require_arg(height > 0 && width > 0, "rasterize_convex: empty image");
  require_arg(poly.size() >= 3, "rasterize_convex: need at least 3 vertices");
  double min_x = poly[0].x(), max_x = poly[0].x();
  double min_y = poly[0].y(), max_y = poly[0].y();
  for (const auto& p : poly) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  const int x0 = std::max(0, int(std::floor(min_x - 0.5)));
  const int x1 = std::min(width - 1, int(std::ceil(max_x - 0.5)));
  const int y0 = std::max(0, int(std::floor(min_y - 0.5)));
  const int y1 = std::min(height - 1, int(std::ceil(max_y - 0.5)));

  Mask out(height, width);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (point_in_convex_ccw(poly, Vec2(x + 0.5, y + 0.5))) out.at(y, x) = 1;
    }
  }
  return out;
}

Mask adapt_box_mask(const BoxFootprint& fp, const Homography& h, int height, int width,
                    const AdaptParams& params, Rng* rng) {
  fp.check();
  require_arg(height > 0 && width > 0, "adapt_box_mask: empty image");

  const std::vector<Vec2> bottom(fp.bottom.begin(), fp.bottom.end());
  const std::vector<Vec2> warped = warp_points(h, bottom);
  const std::vector<Vec2> base_hull = convex_hull(warped);
  require(polygon_area(base_hull) >= 1.0, ErrKind::numeric,
          "adapt_box_mask: warped footprint is degenerate");

  std::vector<Vec2> corners = warped;
  for (const auto& p : warped) corners.emplace_back(p.x(), p.y() - fp.height_px);
  Mask mask = rasterize_convex(convex_hull(corners), height, width);

  switch (params.post) {
    case MaskPost::none:
      break;
    case MaskPost::dilate:
      mask = maskkit::dilate(mask, params.dilate_radius);
      break;
    case MaskPost::brush:
      require_arg(rng != nullptr, "adapt_box_mask: brush post-process needs an rng");
      mask = maskkit::disturb_object_mask(mask, *rng);
      break;
  }
  return mask;
}

BoxFootprint footprint_from_reference(const scene::SceneBundle& bundle) {
  require_arg(!bundle.frames.empty(), "footprint_from_reference: empty bundle");
  const Mask& obj = bundle.object_masks[0];
  require_arg(obj.count() > 0, "footprint_from_reference: reference view has no object");

  BoxFootprint fp;
  fp.bottom = bundle.bottom_landmarks[0];

  int top_row = obj.h;
  for (int y = 0; y < obj.h && top_row == obj.h; ++y) {
    for (int x = 0; x < obj.w; ++x) {
      if (obj.at(y, x)) {
        top_row = y;
        break;
      }
    }
  }
  double base_min_y = fp.bottom[0].y();
  for (const auto& p : fp.bottom) base_min_y = std::min(base_min_y, p.y());
  fp.height_px = base_min_y - (double(top_row) + 0.5);
  require(fp.height_px > 0.0, ErrKind::numeric,
          "footprint_from_reference: silhouette does not rise above the base");
  return fp;
}

}  // namespace mvi::adapt

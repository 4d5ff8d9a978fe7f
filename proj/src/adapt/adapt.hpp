#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/geometry.hpp"
#include "core/image.hpp"
#include "core/rng.hpp"
#include "scene/scene.hpp"

namespace mvi::adapt {

// One reference -> target pixel correspondence.
struct Match {
  Vec2 ref;
  Vec2 tgt;
};

struct MatchSet {
  std::vector<Match> pairs;
  int height = 0;  // target/reference image bounds, in pixels
  int width = 0;

  void check() const;  // >= 4 finite pairs inside [0,w] x [0,h]
};

// Box silhouette description in reference-view pixels: the quad where the box
// meets the ground plane, plus the silhouette height above it.
struct BoxFootprint {
  std::array<Vec2, 4> bottom;
  double height_px = 0.0;

  void check() const;
};

// Correspondences between plane pixels of the reference view and `view`,
// derived from the bundle's plane transform. Inlier targets carry Gaussian
// noise of `noise_px`; round(outlier_frac * n) of the pairs get their targets
// replaced by uniform random positions at least a few pixels off the true
// location.
MatchSet sample_plane_matches(const scene::SceneBundle& bundle, int view, int n, double noise_px,
                              double outlier_frac, Rng& rng);

// Direct linear transform with Hartley normalization on both point sets.
Homography dlt_homography(const std::vector<Match>& pairs);

struct RansacResult {
  Homography h;
  std::vector<std::uint8_t> inlier;  // one flag per input pair
  int inlier_count = 0;
};

// Random 4-point hypotheses, consensus scoring by reprojection distance, and a
// final least-squares refit on the best consensus set. Deterministic for a
// given rng state.
RansacResult ransac_homography(const MatchSet& matches, int iters, double thresh_px, Rng& rng);

// Fill a CCW convex polygon: a pixel is set when its center (x+0.5, y+0.5)
// lies inside or on the boundary.
Mask rasterize_convex(const std::vector<Vec2>& poly, int height, int width);

enum class MaskPost {
  none,
  dilate,  // grow by a disc of AdaptParams::dilate_radius
  brush,   // union with random rectangles/strokes (needs an rng)
};

struct AdaptParams {
  MaskPost post = MaskPost::none;
  int dilate_radius = 2;
};

// Transfer a reference-view box mask into another view: warp the bottom quad
// by the plane homography, lift a copy straight up by height_px, and fill the
// convex hull of the eight points.
Mask adapt_box_mask(const BoxFootprint& fp, const Homography& h, int height, int width,
                    const AdaptParams& params = {}, Rng* rng = nullptr);

// Footprint read off the reference view of a bundle: the plane landmarks give
// the base quad and the silhouette's bounding box gives the height above it.
BoxFootprint footprint_from_reference(const scene::SceneBundle& bundle);

}  // namespace mvi::adapt

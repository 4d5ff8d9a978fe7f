#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "maskkit/maskkit.hpp"
#include "scene/scene.hpp"

using namespace mvi;
using namespace mvi::maskkit;

namespace {

scene::SceneBundle object_bundle(int resolution = 24, int frames = 2) {
  scene::SceneSpec spec;
  spec.num_frames = frames;
  spec.resolution = resolution;
  spec.trajectory = scene::Trajectory::translate;
  spec.magnitude = 0.15;
  spec.plane_texture_seed = 3;
  spec.rng_seed = 9;
  spec.object = scene::ObjectSpec{};
  spec.object->width = 1.6;
  spec.object->depth = 1.6;
  spec.object->height = 0.7;
  return scene::render_scene(spec);
}

}  // namespace

TEST_CASE("maskkit: an oversized single stroke saturates the canvas") {
  IrregularParams p;
  p.min_strokes = 1;
  p.max_strokes = 1;
  p.ref_resolution = 16;  // scale 1 at 16x16
  p.min_width = 3.0 * 16.0;
  p.max_width = 3.0 * 16.0;
  p.min_coverage = 0.5;
  p.max_coverage = 1.0;
  Rng rng(1);
  const Mask m = irregular_mask(rng, 16, 16, p);
  CHECK_EQ(m.count(), size_t(16 * 16));
}

TEST_CASE("maskkit: zero stroke width is rejected") {
  IrregularParams p;
  p.min_width = 0.0;
  Rng rng(1);
  CHECK_THROWS_AS((void)irregular_mask(rng, 32, 32, p), Error);
}

TEST_CASE("maskkit: irregular coverage always lands in the configured band") {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const Mask m = irregular_mask(rng, 64, 64);
    const double cov = m.coverage();
    CHECK_GE(cov, 0.05);
    CHECK_LE(cov, 0.6);
  }
}

TEST_CASE("maskkit: samplers are deterministic given the rng state") {
  Rng a(77), b(77);
  CHECK(irregular_mask(a, 48, 48).v == irregular_mask(b, 48, 48).v);
  CHECK(rect_mask(a, 48, 48).v == rect_mask(b, 48, 48).v);
}

TEST_CASE("maskkit: rectangle corner cases") {
  const Mask full = rect_mask_at(8, 10, 0, 0, 10, 8);
  CHECK_EQ(full.count(), size_t(80));
  const Mask single = rect_mask_at(8, 10, 0, 0, 1, 1);
  CHECK_EQ(single.count(), size_t(1));
  CHECK_EQ(single.at(0, 0), 1);
  CHECK_THROWS_AS((void)rect_mask_at(8, 8, 4, 4, 8, 1), Error);
  CHECK_THROWS_AS((void)rect_mask_at(8, 8, 0, 0, 0, 1), Error);

  RectParams p;
  p.min_side_frac = 1.0;
  p.max_side_frac = 1.0;
  p.max_coverage = 1.0;
  Rng rng(5);
  CHECK_EQ(rect_mask(rng, 12, 12, p).count(), size_t(144));
}

TEST_CASE("maskkit: random rectangles are exact solid rectangles") {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const Mask m = rect_mask(rng, 32, 40);
    int x0 = m.w, x1 = -1, y0 = m.h, y1 = -1;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        if (m.at(y, x)) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    REQUIRE_GE(x1, x0);
    const size_t area = size_t(x1 - x0 + 1) * size_t(y1 - y0 + 1);
    CHECK_EQ(m.count(), area);
  }
}

TEST_CASE("maskkit: disturbance keeps the object mask as a subset") {
  const scene::SceneBundle b = object_bundle();
  const Mask& obj = b.object_masks[1];
  REQUIRE_FALSE(obj.empty_mask());

  DisturbParams zero;
  zero.amplitude = 0.0;
  Rng rng(3);
  CHECK(disturb_object_mask(obj, rng, zero).v == obj.v);

  CHECK_THROWS_AS((void)disturb_object_mask(Mask(8, 8), rng), Error);

  int changed = 0;
  for (int i = 0; i < 100; ++i) {
    const Mask d = disturb_object_mask(obj, rng);
    CHECK(mask_superset(d, obj));
    if (mask_iou(d, obj) < 1.0) ++changed;
  }
  CHECK_GE(changed, 95);
}

TEST_CASE("maskkit: training masks never touch the reference frame") {
  const scene::SceneBundle b = object_bundle(24, 4);
  for (MaskMode mode : {MaskMode::forward_facing, MaskMode::object_centric}) {
    Rng rng(11);
    const MaskSet set = sample_training_masks(b, mode, rng);
    set.check();
    REQUIRE_EQ(set.masks.size(), size_t(4));
    CHECK(set.masks[0].empty_mask());
    for (size_t f = 1; f < 4; ++f) CHECK_FALSE(set.masks[f].empty_mask());
  }
}

TEST_CASE("maskkit: object-centric branches behave as configured") {
  const scene::SceneBundle b = object_bundle(24, 3);
  TrainingMaskParams never_random;
  never_random.random_prob = 0.0;
  Rng rng(21);
  const MaskSet tracked = sample_training_masks(b, MaskMode::object_centric, rng, never_random);
  for (size_t f = 1; f < tracked.masks.size(); ++f)
    CHECK(mask_superset(tracked.masks[f], b.object_masks[f]));

  scene::SceneSpec no_object = b.spec;
  no_object.object.reset();
  const scene::SceneBundle plain = scene::render_scene(no_object);
  CHECK_THROWS_AS((void)sample_training_masks(plain, MaskMode::object_centric, rng), Error);
}

TEST_CASE("maskkit: the pure-random branch fires at its configured rate") {
  const scene::SceneBundle b = object_bundle(24, 2);
  Rng rng(555);
  int random_branch = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const MaskSet set = sample_training_masks(b, MaskMode::object_centric, rng);
    if (!mask_superset(set.masks[1], b.object_masks[1])) ++random_branch;
  }
  const double frac = double(random_branch) / draws;
  CHECK_GE(frac, 0.13);
  CHECK_LE(frac, 0.17);
}

TEST_CASE("maskkit: dilation matches a per-pixel distance oracle") {
  Mask point(24, 24);
  point.at(11, 13) = 1;
  const Mask disc = dilate(point, 5);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      const bool inside = (x - 13) * (x - 13) + (y - 11) * (y - 11) <= 25;
      CHECK_EQ(disc.at(y, x), inside ? 1 : 0);
    }
}

TEST_CASE("maskkit: dilation is extensive and monotone in the radius") {
  Rng rng(31);
  const Mask m = irregular_mask(rng, 32, 32);
  CHECK(dilate(m, 0).v == m.v);
  CHECK_THROWS_AS((void)dilate(m, -1), Error);
  Mask prev = m;
  for (int r = 1; r <= 6; ++r) {
    const Mask cur = dilate(m, r);
    CHECK(mask_superset(cur, prev));
    prev = cur;
  }
  const Mask grown = dilate(m, 2);
  CHECK(mask_superset(grown, m));
  CHECK_GT(grown.count(), m.count());  // idempotent only at radius 0
}

TEST_CASE("maskkit: masks round trip through 8-bit png") {
  Rng rng(41);
  const Mask m = irregular_mask(rng, 40, 40);
  const std::string path = (std::filesystem::temp_directory_path() / "mvi_mask_test.png").string();
  write_png_gray(path, m);
  const Mask back = read_png_mask(path);
  CHECK(back.v == m.v);
  std::filesystem::remove(path);
}

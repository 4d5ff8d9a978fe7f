#pragma once

#include <string>
#include <vector>

#include "core/image.hpp"
#include "core/rng.hpp"
#include "scene/scene.hpp"

namespace mvi::maskkit {

enum class MaskMode { object_centric, forward_facing };

MaskMode mode_from_string(const std::string& s);
std::string mode_to_string(MaskMode m);

// Per-view inpainting masks; masks[0] (the reference) is identically zero.
struct MaskSet {
  std::vector<Mask> masks;
  MaskMode mode = MaskMode::forward_facing;

  void check() const;  // throws when an invariant is broken
};

struct IrregularParams {
  int min_strokes = 1, max_strokes = 8;
  double min_width = 4.0, max_width = 32.0;  // pixels at ref_resolution, scaled
  int ref_resolution = 256;
  double min_coverage = 0.05, max_coverage = 0.6;
  int max_retries = 64;
};

struct RectParams {
  double min_side_frac = 0.22, max_side_frac = 0.78;
  double min_coverage = 0.05, max_coverage = 0.6;
  int max_retries = 64;
};

struct DisturbParams {
  double amplitude = 1.0;  // 0 disables disturbance
  int max_shapes = 3;
};

struct TrainingMaskParams {
  double random_prob = 0.15;  // object-centric only, decided per sequence
  IrregularParams irregular;
  RectParams rect;
  DisturbParams disturb;
};

// Random-walk brush strokes stamped as discs; retries until coverage lands in
// the configured band.
Mask irregular_mask(Rng& rng, int h, int w, const IrregularParams& params = {});

// Axis-aligned rectangle with sides drawn from the fraction range.
Mask rect_mask(Rng& rng, int h, int w, const RectParams& params = {});
Mask rect_mask_at(int h, int w, int x0, int y0, int rw, int rh);

// 50/50 irregular or rectangular; the random branch of mask sampling.
Mask random_mask(Rng& rng, int h, int w, const IrregularParams& ip = {}, const RectParams& rp = {});

// Union of the object mask with random rectangles/strokes near its bounds.
Mask disturb_object_mask(const Mask& object_mask, Rng& rng, const DisturbParams& params = {});

MaskSet sample_training_masks(const scene::SceneBundle& bundle, MaskMode mode, Rng& rng,
                              const TrainingMaskParams& params = {});

// Morphological dilation with a Euclidean disc element.
Mask dilate(const Mask& m, int radius);

Mask mask_union(const Mask& a, const Mask& b);
bool mask_superset(const Mask& outer, const Mask& inner);
double mask_iou(const Mask& a, const Mask& b);

}  // namespace mvi::maskkit

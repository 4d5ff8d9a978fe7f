#include "maskkit/maskkit.hpp"

#include <algorithm>
#include <cmath>

namespace mvi::maskkit {

namespace {

constexpr double kPi = 3.14159265358979323846;

void stamp_disc(Mask& m, double cx, double cy, double radius) {
  const int x0 = std::max(0, int(std::floor(cx - radius - 1)));
  const int x1 = std::min(m.w - 1, int(std::ceil(cx + radius + 1)));
  const int y0 = std::max(0, int(std::floor(cy - radius - 1)));
  const int y1 = std::min(m.h - 1, int(std::ceil(cy + radius + 1)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r2) m.at(y, x) = 1;
    }
}

void stamp_stroke(Mask& m, Rng& rng, double width) {
  double x = rng.uniform(0.0, double(m.w));
  double y = rng.uniform(0.0, double(m.h));
  const int steps = rng.uniform_int(4, 16);
  const double radius = width / 2.0;
  stamp_disc(m, x, y, radius);
  for (int s = 0; s < steps; ++s) {
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    const double len = rng.uniform(std::min(m.h, m.w) / 16.0, std::min(m.h, m.w) / 4.0);
    const double nx = std::clamp(x + len * std::cos(angle), 0.0, double(m.w));
    const double ny = std::clamp(y + len * std::sin(angle), 0.0, double(m.h));
    const double dist = std::hypot(nx - x, ny - y);
    const int n = std::max(1, int(std::ceil(dist)));
    for (int k = 1; k <= n; ++k)
      stamp_disc(m, x + (nx - x) * k / n, y + (ny - y) * k / n, radius);
    x = nx;
    y = ny;
  }
}

void check_coverage_band(double min_coverage, double max_coverage) {
  require_arg(min_coverage >= 0.0 && max_coverage <= 1.0 && min_coverage <= max_coverage,
              "coverage band must satisfy 0 <= min <= max <= 1");
}

}  // namespace

MaskMode mode_from_string(const std::string& s) {
  if (s == "object_centric") return MaskMode::object_centric;
  if (s == "forward_facing") return MaskMode::forward_facing;
  fail(ErrKind::config, "unknown mask mode: " + s);
}

std::string mode_to_string(MaskMode m) {
  return m == MaskMode::object_centric ? "object_centric" : "forward_facing";
}

void MaskSet::check() const {
  require_arg(!masks.empty(), "mask set is empty");
  for (uint8_t v : masks[0].v)
    require(v == 0, ErrKind::invalid_argument, "reference mask must be identically zero");
  for (const Mask& m : masks)
    for (uint8_t v : m.v)
      require(v == 0 || v == 1, ErrKind::invalid_argument, "mask values must be binary");
}

Mask irregular_mask(Rng& rng, int h, int w, const IrregularParams& p) {
  require_arg(h >= 1 && w >= 1, "mask size must be positive");
  require_arg(p.min_strokes >= 1 && p.max_strokes >= p.min_strokes, "bad stroke count range");
  require_arg(p.min_width > 0.0 && p.max_width >= p.min_width, "stroke width must be positive");
  require_arg(p.ref_resolution >= 1, "bad reference resolution");
  check_coverage_band(p.min_coverage, p.max_coverage);

  const double scale = double(std::min(h, w)) / double(p.ref_resolution);
  for (int attempt = 0; attempt < p.max_retries; ++attempt) {
    Mask m(h, w);
    const int strokes = rng.uniform_int(p.min_strokes, p.max_strokes);
    for (int s = 0; s < strokes; ++s) {
      const double width = std::max(1.0, rng.uniform(p.min_width, p.max_width) * scale);
      stamp_stroke(m, rng, width);
    }
    const double cov = m.coverage();
    if (cov >= p.min_coverage && cov <= p.max_coverage) return m;
  }
  fail(ErrKind::numeric, "irregular_mask: no sample hit the coverage band");
}

Mask rect_mask_at(int h, int w, int x0, int y0, int rw, int rh) {
  require_arg(h >= 1 && w >= 1, "mask size must be positive");
  require_arg(rw >= 1 && rh >= 1, "rectangle sides must be positive");
  require_arg(x0 >= 0 && y0 >= 0 && x0 + rw <= w && y0 + rh <= h, "rectangle out of bounds");
  Mask m(h, w);
  for (int y = y0; y < y0 + rh; ++y)
    for (int x = x0; x < x0 + rw; ++x) m.at(y, x) = 1;
  return m;
}

Mask rect_mask(Rng& rng, int h, int w, const RectParams& p) {
  require_arg(h >= 1 && w >= 1, "mask size must be positive");
  require_arg(p.min_side_frac > 0.0 && p.max_side_frac >= p.min_side_frac &&
                  p.max_side_frac <= 1.0,
              "bad rectangle side range");
  check_coverage_band(p.min_coverage, p.max_coverage);

  for (int attempt = 0; attempt < p.max_retries; ++attempt) {
    const int rw = std::clamp(int(std::lround(rng.uniform(p.min_side_frac, p.max_side_frac) * w)),
                              1, w);
    const int rh = std::clamp(int(std::lround(rng.uniform(p.min_side_frac, p.max_side_frac) * h)),
                              1, h);
    const int x0 = rng.uniform_int(0, w - rw);
    const int y0 = rng.uniform_int(0, h - rh);
    const double cov = double(rw) * rh / (double(h) * w);
    if (cov < p.min_coverage || cov > p.max_coverage) continue;
    return rect_mask_at(h, w, x0, y0, rw, rh);
  }
  fail(ErrKind::numeric, "rect_mask: no sample hit the coverage band");
}

Mask random_mask(Rng& rng, int h, int w, const IrregularParams& ip, const RectParams& rp) {
  return rng.bernoulli(0.5) ? irregular_mask(rng, h, w, ip) : rect_mask(rng, h, w, rp);
}

Mask disturb_object_mask(const Mask& object_mask, Rng& rng, const DisturbParams& p) {
  require_arg(!object_mask.empty_mask(), "disturb_object_mask: object mask is empty");
  require_arg(p.amplitude >= 0.0, "disturbance amplitude must be non-negative");
  require_arg(p.max_shapes >= 1, "max_shapes must be positive");
  Mask out = object_mask;
  if (p.amplitude == 0.0) return out;

  int bx0 = object_mask.w, bx1 = -1, by0 = object_mask.h, by1 = -1;
  for (int y = 0; y < object_mask.h; ++y)
    for (int x = 0; x < object_mask.w; ++x)
      if (object_mask.at(y, x)) {
        bx0 = std::min(bx0, x);
        bx1 = std::max(bx1, x);
        by0 = std::min(by0, y);
        by1 = std::max(by1, y);
      }
  const double bw = bx1 - bx0 + 1, bh = by1 - by0 + 1;

  const int shapes = rng.uniform_int(1, p.max_shapes);
  for (int s = 0; s < shapes; ++s) {
    const double cx = rng.uniform(bx0 - 0.5 * bw, bx1 + 0.5 * bw);
    const double cy = rng.uniform(by0 - 0.5 * bh, by1 + 0.5 * bh);
    if (rng.bernoulli(0.5)) {
      const int rw = std::max(1, int(std::lround(rng.uniform(0.3, 1.0) * p.amplitude * bw)));
      const int rh = std::max(1, int(std::lround(rng.uniform(0.3, 1.0) * p.amplitude * bh)));
      const int x0 = std::clamp(int(std::lround(cx - rw / 2.0)), 0, object_mask.w - 1);
      const int y0 = std::clamp(int(std::lround(cy - rh / 2.0)), 0, object_mask.h - 1);
      const int x1 = std::min(object_mask.w - 1, x0 + rw - 1);
      const int y1 = std::min(object_mask.h - 1, y0 + rh - 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) out.at(y, x) = 1;
    } else {
      const double radius =
          std::max(0.5, 0.5 * rng.uniform(0.2, 0.5) * p.amplitude * std::min(bw, bh));
      const int steps = rng.uniform_int(2, 6);
      double x = cx, y = cy;
      stamp_disc(out, x, y, radius);
      for (int k = 0; k < steps; ++k) {
        const double angle = rng.uniform(0.0, 2.0 * kPi);
        const double len = rng.uniform(0.2, 0.6) * std::max(bw, bh);
        x = std::clamp(x + len * std::cos(angle), 0.0, double(object_mask.w));
        y = std::clamp(y + len * std::sin(angle), 0.0, double(object_mask.h));
        stamp_disc(out, x, y, radius);
      }
    }
  }
  return out;
}

MaskSet sample_training_masks(const scene::SceneBundle& bundle, MaskMode mode, Rng& rng,
                              const TrainingMaskParams& params) {
  const int n = bundle.num_frames();
  require_arg(n >= 2, "bundle needs at least two frames");
  const int h = bundle.frames[0].h, w = bundle.frames[0].w;

  MaskSet set;
  set.mode = mode;
  set.masks.push_back(Mask(h, w));  // reference stays clean

  if (mode == MaskMode::forward_facing) {
    for (int f = 1; f < n; ++f)
      set.masks.push_back(random_mask(rng, h, w, params.irregular, params.rect));
    return set;
  }

  bool has_object = bundle.spec.object.has_value();
  for (int f = 0; has_object && f < n; ++f)
    if (bundle.object_masks[size_t(f)].empty_mask()) has_object = false;
  require_arg(has_object, "object_centric masking needs an object visible in every frame");

  if (rng.uniform() < params.random_prob) {
    for (int f = 1; f < n; ++f)
      set.masks.push_back(random_mask(rng, h, w, params.irregular, params.rect));
  } else {
    for (int f = 1; f < n; ++f)
      set.masks.push_back(disturb_object_mask(bundle.object_masks[size_t(f)], rng, params.disturb));
  }
  return set;
}

Mask dilate(const Mask& m, int radius) {
  require_arg(radius >= 0, "dilate: radius must be non-negative");
  if (radius == 0) return m;
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dx, dy);

  Mask out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      for (const auto& [dx, dy] : offsets) {
        const int nx = x + dx, ny = y + dy;
        if (nx >= 0 && nx < m.w && ny >= 0 && ny < m.h) out.at(ny, nx) = 1;
      }
    }
  return out;
}

Mask mask_union(const Mask& a, const Mask& b) {
  require_arg(a.h == b.h && a.w == b.w, "mask_union: size mismatch");
  Mask out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = out.v[i] | b.v[i];
  return out;
}

bool mask_superset(const Mask& outer, const Mask& inner) {
  require_arg(outer.h == inner.h && outer.w == inner.w, "mask_superset: size mismatch");
  for (size_t i = 0; i < outer.v.size(); ++i)
    if (inner.v[i] && !outer.v[i]) return false;
  return true;
}

double mask_iou(const Mask& a, const Mask& b) {
  require_arg(a.h == b.h && a.w == b.w, "mask_iou: size mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    inter += (a.v[i] & b.v[i]);
    uni += (a.v[i] | b.v[i]);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace mvi::maskkit

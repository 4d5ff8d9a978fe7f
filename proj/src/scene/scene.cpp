#include "scene/scene.hpp"

#include <algorithm>
#include <cmath>

namespace mvi::scene {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCamDistance = 4.0;
constexpr double kElevationDeg = 55.0;
constexpr double kMinCamHeight = 0.05;
constexpr double kMaxPairCondition = 1e6;
constexpr double kBillboardDepth = 0.04;

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t hash_key(uint64_t seed, uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  uint64_t h = mix64(seed ^ 0x517cc1b727220a95ull);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  h = mix64(h ^ d);
  return h;
}

double lattice(uint64_t seed, int channel, int octave, int64_t ix, int64_t iy) {
  const uint64_t h =
      hash_key(seed, uint64_t(channel + 1), uint64_t(octave + 1), uint64_t(ix), uint64_t(iy));
  return double(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (6.0 * t - 15.0) + 10.0); }

double value_noise(uint64_t seed, int channel, int octave, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const int64_t iu = int64_t(fu), iv = int64_t(fv);
  const double su = quintic(u - fu), sv = quintic(v - fv);
  const double g00 = lattice(seed, channel, octave, iu, iv);
  const double g10 = lattice(seed, channel, octave, iu + 1, iv);
  const double g01 = lattice(seed, channel, octave, iu, iv + 1);
  const double g11 = lattice(seed, channel, octave, iu + 1, iv + 1);
  const double a = g00 + (g10 - g00) * su;
  const double b = g01 + (g11 - g01) * su;
  return a + (b - a) * sv;
}

Vec2 project_point(const Camera& cam, const CameraPose& pose, const Vec3& world) {
  const Vec3 pc = pose.r * (world - pose.c);
  require(pc.z() > 1e-6, ErrKind::numeric, "point projects behind the camera");
  return Vec2(cam.focal * pc.x() / pc.z() + cam.cx, cam.focal * pc.y() / pc.z() + cam.cy);
}

CameraPose look_at_origin(const Vec3& c) {
  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 fwd = (-c).normalized();
  Vec3 right = fwd.cross(up);
  require(right.norm() > 1e-9, ErrKind::numeric, "degenerate trajectory: view parallel to up");
  right.normalize();
  const Vec3 down = fwd.cross(right);
  CameraPose pose;
  pose.r.row(0) = right.transpose();
  pose.r.row(1) = down.transpose();
  pose.r.row(2) = fwd.transpose();
  pose.c = c;
  return pose;
}

// Plane-to-image transform of the ground plane z == 0.
Mat3 plane_to_image(const Camera& cam, const CameraPose& pose) {
  Mat3 g;
  g.col(0) = pose.r.col(0);
  g.col(1) = pose.r.col(1);
  g.col(2) = -(pose.r * pose.c);
  return cam.k() * g;
}

struct PlaneLookup {
  Mat3 g_inv;
  Mat3 r;
  Vec3 c;

  // Returns false when the pixel ray misses the visible side of the plane.
  bool pixel_to_plane(double px, double py, double* u, double* v) const {
    const Vec3 q = g_inv * Vec3(px, py, 1.0);
    if (std::abs(q.z()) < 1e-9) return false;
    const double uu = q.x() / q.z(), vv = q.y() / q.z();
    const double depth = (r * (Vec3(uu, vv, 0.0) - c)).z();
    if (depth <= 1e-6) return false;
    *u = uu;
    *v = vv;
    return true;
  }
};

double plane_color(uint64_t seed, int channel, double u, double v) {
  return texture_value(seed, channel, u, v);
}

double object_color(uint64_t seed, int channel, int ix, int iy) {
  static constexpr double base[3] = {0.82, 0.16, 0.12};
  const double jitter =
      (double(hash_key(seed, 7, uint64_t(channel + 1), 0, 0) >> 11) * 0x1.0p-53 - 0.5) * 0.16;
  const double speck =
      (double(hash_key(seed, 9, uint64_t(channel + 1), uint64_t(ix), uint64_t(iy)) >> 11) *
           0x1.0p-53 -
       0.5) *
      0.1;
  return std::clamp(base[channel] + jitter + speck, 0.0, 1.0);
}

}  // namespace

Trajectory trajectory_from_string(const std::string& s) {
  if (s == "static") return Trajectory::static_cam;
  if (s == "translate") return Trajectory::translate;
  if (s == "orbit") return Trajectory::orbit;
  if (s == "forward") return Trajectory::forward;
  fail(ErrKind::config, "unknown trajectory: " + s);
}

std::string trajectory_to_string(Trajectory t) {
  switch (t) {
    case Trajectory::static_cam: return "static";
    case Trajectory::translate: return "translate";
    case Trajectory::orbit: return "orbit";
    case Trajectory::forward: return "forward";
  }
  fail(ErrKind::invalid_argument, "bad trajectory enum");
}

void SceneSpec::validate() const {
  require_arg(num_frames >= 2, "num_frames must be >= 2");
  require_arg(resolution >= 16 && resolution % 8 == 0,
              "resolution must be >= 16 and a multiple of 8");
  require_arg(std::isfinite(magnitude), "trajectory magnitude must be finite");
  if (object) {
    require_arg(object->width > 0 && object->depth > 0 && object->height > 0,
                "object dimensions must be positive");
    require_arg(object->kind == "box" || object->kind == "billboard",
                "object kind must be box or billboard");
  }
}

Camera Camera::for_resolution(int resolution) {
  Camera cam;
  cam.focal = double(resolution);
  cam.cx = double(resolution) / 2.0;
  cam.cy = double(resolution) / 2.0;
  return cam;
}

Mat3 Camera::k() const {
  Mat3 k = Mat3::Identity();
  k(0, 0) = focal;
  k(1, 1) = focal;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

double texture_value(uint64_t seed, int channel, double u, double v) {
  // Band-limited: the finest octave keeps several pixels per lattice cell at
  // the default viewing distance, so bilinear warps stay photometrically tight.
  double acc = 0.0, norm = 0.0, freq = 0.5, amp = 1.0;
  for (int octave = 0; octave < 3; ++octave) {
    acc += amp * value_noise(seed, channel, octave, u * freq, v * freq);
    norm += amp;
    freq *= 2.0;
    amp *= 0.5;
  }
  return acc / norm;
}

std::vector<CameraPose> make_trajectory(const SceneSpec& spec) {
  spec.validate();
  const double el = kElevationDeg * kPi / 180.0;
  const Vec3 base(0.0, -kCamDistance * std::cos(el), kCamDistance * std::sin(el));
  std::vector<CameraPose> poses;
  poses.reserve(size_t(spec.num_frames));
  const CameraPose pose0 = look_at_origin(base);
  for (int i = 0; i < spec.num_frames; ++i) {
    switch (spec.trajectory) {
      case Trajectory::static_cam:
        poses.push_back(pose0);
        break;
      case Trajectory::translate: {
        CameraPose p = pose0;
        p.c += double(i) * spec.magnitude * Vec3(1.0, 0.0, 0.0);
        poses.push_back(p);
        break;
      }
      case Trajectory::forward: {
        CameraPose p = pose0;
        p.c += double(i) * spec.magnitude * pose0.r.row(2).transpose();
        poses.push_back(p);
        break;
      }
      case Trajectory::orbit: {
        const double az = -kPi / 2.0 + double(i) * spec.magnitude * kPi / 180.0;
        const Vec3 c(kCamDistance * std::cos(el) * std::cos(az),
                     kCamDistance * std::cos(el) * std::sin(az),
                     kCamDistance * std::sin(el));
        poses.push_back(look_at_origin(c));
        break;
      }
    }
  }
  for (const CameraPose& p : poses)
    require(p.c.z() > kMinCamHeight, ErrKind::numeric,
            "degenerate trajectory: camera crosses the plane");
  return poses;
}

Homography plane_homography(const Camera& cam, const CameraPose& a, const CameraPose& b) {
  require(std::abs(a.c.z()) > 1e-9 && std::abs(b.c.z()) > 1e-9, ErrKind::numeric,
          "plane passes through a camera center");
  if (a.r == b.r && a.c == b.c) return Homography::identity();
  const Mat3 ga = plane_to_image(cam, a);
  const Mat3 gb = plane_to_image(cam, b);
  const Homography ha = Homography::from_matrix(ga);
  return Homography::from_matrix(gb).compose_after(ha.inverse());
}

FlowField analytic_flow(const Homography& h_i_to_j, const Mask& visible) {
  FlowField flow(visible.h, visible.w);
  for (int y = 0; y < visible.h; ++y) {
    for (int x = 0; x < visible.w; ++x) {
      if (!visible.at(y, x)) continue;
      const Vec2 src(x + 0.5, y + 0.5);
      const Vec2 dst = warp_point(h_i_to_j, src);
      require(std::isfinite(dst.x()) && std::isfinite(dst.y()), ErrKind::numeric,
              "analytic_flow: non-finite warp");
      flow.dx(y, x) = dst.x() - src.x();
      flow.dy(y, x) = dst.y() - src.y();
      flow.valid[size_t(y) * visible.w + x] = 1;
    }
  }
  return flow;
}

void restrict_flow_validity(FlowField& flow, const Mask& plane_j) {
  require_arg(flow.h == plane_j.h && flow.w == plane_j.w, "restrict_flow_validity: size mismatch");
  for (int y = 0; y < flow.h; ++y) {
    for (int x = 0; x < flow.w; ++x) {
      const size_t i = size_t(y) * flow.w + x;
      if (!flow.valid[i]) continue;
      const double tx = x + 0.5 + flow.dx(y, x);
      const double ty = y + 0.5 + flow.dy(y, x);
      const bool inside = tx >= 0.5 && tx <= flow.w - 0.5 && ty >= 0.5 && ty <= flow.h - 0.5;
      if (!inside || sample_bilinear_mask(plane_j, tx, ty) < 0.999) {
        flow.valid[i] = 0;
        flow.dx(y, x) = 0.0;
        flow.dy(y, x) = 0.0;
      }
    }
  }
}

SceneBundle render_scene(const SceneSpec& spec) {
  spec.validate();
  const int res = spec.resolution;
  const Camera cam = Camera::for_resolution(res);
  const std::vector<CameraPose> poses = make_trajectory(spec);

  SceneBundle bundle;
  bundle.spec = spec;

  // Landmarks come from the object footprint, or a default centered quad so
  // that mask adaptation is exercisable on object-free scenes too.
  double fx0 = -0.4, fx1 = 0.4, fy0 = -0.4, fy1 = 0.4;
  double depth_eff = 0.8;
  if (spec.object) {
    const ObjectSpec& o = *spec.object;
    depth_eff = o.kind == "billboard" ? std::min(o.depth, kBillboardDepth) : o.depth;
    fx0 = o.cx - o.width / 2.0;
    fx1 = o.cx + o.width / 2.0;
    fy0 = o.cy - depth_eff / 2.0;
    fy1 = o.cy + depth_eff / 2.0;
  }
  const std::array<Vec3, 4> bottom_world = {Vec3(fx0, fy0, 0.0), Vec3(fx1, fy0, 0.0),
                                            Vec3(fx1, fy1, 0.0), Vec3(fx0, fy1, 0.0)};

  for (int f = 0; f < spec.num_frames; ++f) {
    const CameraPose& pose = poses[f];
    PlaneLookup lookup;
    lookup.g_inv = plane_to_image(cam, pose).inverse();
    lookup.r = pose.r;
    lookup.c = pose.c;

    ImageF bg(res, res, 3);
    Mask plane_vis(res, res);
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        double u = 0.0, v = 0.0;
        if (lookup.pixel_to_plane(x + 0.5, y + 0.5, &u, &v)) {
          plane_vis.at(y, x) = 1;
          for (int ch = 0; ch < 3; ++ch)
            bg.at(y, x, ch) = plane_color(spec.plane_texture_seed, ch, u, v);
        } else {
          for (int ch = 0; ch < 3; ++ch) bg.at(y, x, ch) = 0.5;
        }
      }
    }

    Mask obj(res, res);
    ImageF frame = bg;
    if (spec.object) {
      std::vector<Vec2> corners;
      corners.reserve(8);
      for (const Vec3& w : bottom_world) corners.push_back(project_point(cam, pose, w));
      for (const Vec3& w : bottom_world)
        corners.push_back(project_point(cam, pose, Vec3(w.x(), w.y(), spec.object->height)));
      const std::vector<Vec2> hull = convex_hull(corners);
      double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
      for (const Vec2& p : hull) {
        min_x = std::min(min_x, p.x());
        max_x = std::max(max_x, p.x());
        min_y = std::min(min_y, p.y());
        max_y = std::max(max_y, p.y());
      }
      const int x0 = std::max(0, int(std::floor(min_x - 0.5)));
      const int x1 = std::min(res - 1, int(std::ceil(max_x)));
      const int y0 = std::max(0, int(std::floor(min_y - 0.5)));
      const int y1 = std::min(res - 1, int(std::ceil(max_y)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (point_in_convex_ccw(hull, Vec2(x + 0.5, y + 0.5))) {
            obj.at(y, x) = 1;
            for (int ch = 0; ch < 3; ++ch)
              frame.at(y, x, ch) = object_color(spec.rng_seed, ch, x, y);
          }
    }

    Mask plane_clear = plane_vis;
    for (size_t i = 0; i < plane_clear.v.size(); ++i)
      if (obj.v[i]) plane_clear.v[i] = 0;

    std::array<Vec2, 4> lm;
    for (int i = 0; i < 4; ++i) lm[size_t(i)] = project_point(cam, pose, bottom_world[size_t(i)]);

    bundle.frames.push_back(std::move(frame));
    bundle.background.push_back(std::move(bg));
    bundle.object_masks.push_back(std::move(obj));
    bundle.plane_masks.push_back(std::move(plane_clear));
    bundle.bottom_landmarks.push_back(lm);
  }

  bundle.homographies.push_back(Homography::identity());
  for (int j = 1; j < spec.num_frames; ++j) {
    const Homography h = plane_homography(cam, poses[0], poses[size_t(j)]);
    bundle.homographies.push_back(h);
  }
  for (int i = 0; i + 1 < spec.num_frames; ++i) {
    // Composed from the reference homographies so that bundle loading can
    // rebuild flow validity bit-for-bit from meta.json.
    const Homography h = bundle.homographies[size_t(i) + 1].compose_after(
        bundle.homographies[size_t(i)].inverse());
    require(condition_number(h.m) < kMaxPairCondition, ErrKind::numeric,
            "degenerate trajectory: ill-conditioned pair homography");
    FlowField flow = analytic_flow(h, bundle.plane_masks[size_t(i)]);
    restrict_flow_validity(flow, bundle.plane_masks[size_t(i) + 1]);
    bundle.flows.push_back(std::move(flow));
  }
  return bundle;
}

}  // namespace mvi::scene

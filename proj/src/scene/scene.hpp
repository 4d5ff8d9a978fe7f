#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/image.hpp"

namespace mvi::scene {

enum class Trajectory { static_cam, translate, orbit, forward };

Trajectory trajectory_from_string(const std::string& s);
std::string trajectory_to_string(Trajectory t);

// Axis-aligned footprint on the ground plane plus an extruded height.
// A billboard is a box with a very thin depth; both expose a 4-corner
// bottom face for landmark-based mask adaptation.
struct ObjectSpec {
  std::string kind = "box";  // "box" | "billboard"
  double cx = 0.0, cy = 0.0;
  double width = 0.8, depth = 0.8;
  double height = 0.6;
};

struct SceneSpec {
  int num_frames = 12;    // N+1 including the reference
  int resolution = 32;    // square frames, multiple of 8
  Trajectory trajectory = Trajectory::static_cam;
  double magnitude = 0.0;  // world units per frame; degrees for orbit
  uint64_t plane_texture_seed = 1;
  std::optional<ObjectSpec> object;
  uint64_t rng_seed = 1;

  void validate() const;
};

// World->camera rotation and camera center in world coordinates. The ground
// plane is z == 0 with the camera strictly above it.
struct CameraPose {
  Mat3 r = Mat3::Identity();
  Vec3 c = Vec3::Zero();
};

struct Camera {
  double focal = 0.0;
  double cx = 0.0, cy = 0.0;

  static Camera for_resolution(int resolution);
  Mat3 k() const;
};

struct SceneBundle {
  SceneSpec spec;
  std::vector<ImageF> frames;       // N+1 RGB
  std::vector<ImageF> background;   // N+1 RGB, plane only
  std::vector<Mask> object_masks;   // N+1
  std::vector<Mask> plane_masks;    // N+1, plane visible and unoccluded
  std::vector<FlowField> flows;     // N, defined on frame i, sampling frame i+1
  std::vector<Homography> homographies;  // N+1, frame 0 -> frame j on the plane
  std::vector<std::array<Vec2, 4>> bottom_landmarks;  // per frame, image px

  int num_frames() const { return int(frames.size()); }
  int resolution() const { return frames.empty() ? 0 : frames[0].h; }
};

// Deterministic band-limited value noise over plane coordinates.
double texture_value(uint64_t seed, int channel, double u, double v);

std::vector<CameraPose> make_trajectory(const SceneSpec& spec);

// Plane-induced transform taking view-a pixels of ground-plane points to
// view-b pixels. Pixel centers are at integer+0.5.
Homography plane_homography(const Camera& cam, const CameraPose& a, const CameraPose& b);

// flow(x) = warp(h_i_to_j, x) - x where visible(x), else zero and invalid.
FlowField analytic_flow(const Homography& h_i_to_j, const Mask& visible);

// Restricts flow validity to pixels whose warp target stays inside view j and
// fully on view j's plane mask.
void restrict_flow_validity(FlowField& flow, const Mask& plane_j);

SceneBundle render_scene(const SceneSpec& spec);

}  // namespace mvi::scene

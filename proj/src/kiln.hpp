#pragma once

// Procedural furnace-like scene generator: a 4-class layout (background, slag,
// camera edge, wall) with slowly growing slag discs, camera jitter and
// alpha-blended flame/smoke occlusions. Ground-truth masks are computed from
// the same geometry and never altered by occlusion.

#include "metrics.hpp"
#include "png_io.hpp"

namespace kseg {

inline constexpr std::uint8_t kClassBackground = 0;
inline constexpr std::uint8_t kClassSlag = 1;
inline constexpr std::uint8_t kClassCameraEdge = 2;
inline constexpr std::uint8_t kClassWall = 3;
inline constexpr std::size_t kNumClasses = 4;

struct SceneParams {
  std::size_t h = 64, w = 64;
  std::uint64_t seed = 0;
  double growth_rate = 0.02;  // blob radius growth in px per frame step
  std::size_t min_blobs = 2, max_blobs = 5;
  double start_radius_min = 2.5, start_radius_max = 4.5;
  double max_radius = 13.0;
  double occlusion_prob = 0.0;  // per frame
  double occlusion_opacity_min = 0.15, occlusion_opacity_max = 0.95;
  double visibility_threshold = 0.25;  // opacity at/above which a frame counts occluded
  double jitter = 1.5;                 // camera offset bound in px
  std::vector<double> removal_times;   // seconds at which slag is cut back
  double removal_factor = 0.45;
  double delta_seconds = 10.0;

  void validate() const {
    require(h >= 16 && w >= 16, ErrorClass::Config, "scene: image size must be >= 16 px");
    require(growth_rate >= 0.0, ErrorClass::Config, "scene: growth rate must be >= 0");
    require(occlusion_prob >= 0.0 && occlusion_prob <= 1.0, ErrorClass::Config,
            "scene: occlusion probability must be in [0,1]");
    require(min_blobs <= max_blobs, ErrorClass::Config,
            "scene: min_blobs must be <= max_blobs");
  }
};

struct SlagBlob {
  double cx, cy, r;
};

struct OcclusionState {
  enum Kind { None = 0, Flame = 1, Smoke = 2 };
  Kind kind = None;
  double cx = 0, cy = 0, extent = 0, opacity = 0;
};

struct KilnState {
  std::vector<SlagBlob> blobs;
  double off_x = 0, off_y = 0;  // camera offset
  double t = 0;                 // seconds
  OcclusionState occ;
  Rng rng{0};
  std::size_t next_removal = 0;
};

struct Frame {
  ImageU8 rgb;
  SegMask mask;
  bool occluded = false;
  double truth_fraction = 0;
  double timestamp = 0;
};

struct FramePair {
  Frame prev, cur;  // (I_{t-delta}, I_t)
};

KilnState init_scene(const SceneParams& params);
void advance_scene(KilnState& state, double dt_seconds, const SceneParams& params);
Frame render_frame(const KilnState& state, const SceneParams& params);

// Exact pixel count of the slag class from the scene geometry.
std::size_t analytic_slag_pixels(const KilnState& state, const SceneParams& params);

}  // namespace kseg

#include "kiln.hpp"

namespace kseg {

namespace {

constexpr double kHorizon = 0.55;       // wall/floor boundary as a fraction of height
constexpr double kEllipseRadius = 0.48; // camera opening half-extent as a fraction

struct Geometry {
  double cx, cy, rx, ry, horizon_y;
};

Geometry geometry(const SceneParams& p) {
  return {0.5 * p.w, 0.5 * p.h, kEllipseRadius * p.w, kEllipseRadius * p.h, kHorizon * p.h};
}

// Class of a scene-coordinate point, ignoring occlusion.
std::uint8_t classify(double sx, double sy, const KilnState& state, const Geometry& g) {
  const double ex = (sx - g.cx) / g.rx, ey = (sy - g.cy) / g.ry;
  if (ex * ex + ey * ey > 1.0) return kClassCameraEdge;
  if (sy >= g.horizon_y) {
    for (const auto& b : state.blobs) {
      const double dx = sx - b.cx, dy = sy - b.cy;
      if (dx * dx + dy * dy <= b.r * b.r) return kClassSlag;
    }
    return kClassBackground;
  }
  return kClassWall;
}

void base_color(std::uint8_t cls, double sx, double sy, double rgb[3]) {
  switch (cls) {
    case kClassBackground:
      rgb[0] = 62; rgb[1] = 42; rgb[2] = 52;
      break;
    case kClassSlag:
      rgb[0] = 205; rgb[1] = 175; rgb[2] = 150;
      break;
    case kClassCameraEdge:
      rgb[0] = 14; rgb[1] = 14; rgb[2] = 18;
      break;
    default: {  // wall, with horizontal banding texture
      const double band = 18.0 * std::sin(0.45 * sy) + 8.0 * std::sin(0.22 * sx);
      rgb[0] = 152 + band; rgb[1] = 112 + 0.6 * band; rgb[2] = 62 + 0.3 * band;
      break;
    }
  }
}

}  // namespace

KilnState init_scene(const SceneParams& params) {
  params.validate();
  KilnState state;
  state.rng = Rng(params.seed);
  const Geometry g = geometry(params);
  const std::size_t count =
      params.max_blobs == 0
          ? 0
          : params.min_blobs + state.rng.below(params.max_blobs - params.min_blobs + 1);
  for (std::size_t i = 0; i < count; ++i) {
    SlagBlob b;
    b.cx = state.rng.uniform(0.15 * params.w, 0.85 * params.w);
    b.cy = state.rng.uniform(g.horizon_y + 2.0, 0.92 * params.h);
    b.r = state.rng.uniform(params.start_radius_min, params.start_radius_max);
    state.blobs.push_back(b);
  }
  return state;
}

void advance_scene(KilnState& state, double dt_seconds, const SceneParams& params) {
  require(dt_seconds > 0.0, ErrorClass::Config, "advance_scene: dt must be > 0");
  state.t += dt_seconds;
  const double steps = dt_seconds / params.delta_seconds;
  for (auto& b : state.blobs)
    b.r = std::min(params.max_radius, b.r + params.growth_rate * steps);

  while (state.next_removal < params.removal_times.size() &&
         state.t >= params.removal_times[state.next_removal]) {
    for (auto& b : state.blobs) b.r *= params.removal_factor;
    ++state.next_removal;
  }

  // camera vibration: bounded random walk
  state.off_x = std::clamp(state.off_x + state.rng.uniform(-0.7, 0.7), -params.jitter,
                           params.jitter);
  state.off_y = std::clamp(state.off_y + state.rng.uniform(-0.7, 0.7), -params.jitter,
                           params.jitter);

  // occlusion re-sampled every frame
  state.occ = OcclusionState{};
  if (state.rng.uniform() < params.occlusion_prob) {
    const Geometry g = geometry(params);
    state.occ.kind = state.rng.uniform() < 0.6 ? OcclusionState::Flame : OcclusionState::Smoke;
    state.occ.cx = state.rng.uniform(0.3 * params.w, 0.7 * params.w);
    state.occ.cy = state.occ.kind == OcclusionState::Flame
                       ? state.rng.uniform(g.horizon_y - 4.0, 0.85 * params.h)
                       : state.rng.uniform(0.25 * params.h, g.horizon_y + 6.0);
    state.occ.extent = state.rng.uniform(0.5, 1.0) * params.h;
    state.occ.opacity =
        state.rng.uniform(params.occlusion_opacity_min, params.occlusion_opacity_max);
  }
}

Frame render_frame(const KilnState& state, const SceneParams& params) {
  const Geometry g = geometry(params);
  Frame f;
  f.timestamp = state.t;
  f.occluded = state.occ.kind != OcclusionState::None &&
               state.occ.opacity >= params.visibility_threshold;
  f.mask = SegMask(params.h, params.w);
  f.rgb.h = params.h;
  f.rgb.w = params.w;
  f.rgb.channels = 3;
  f.rgb.pixels.resize(params.h * params.w * 3);

  // deterministic per-frame pixel noise keyed by scene time
  Rng noise(params.seed ^ (0x51ab5eedULL + static_cast<std::uint64_t>(state.t * 10.0)));

  std::size_t slag_count = 0;
  for (std::size_t y = 0; y < params.h; ++y)
    for (std::size_t x = 0; x < params.w; ++x) {
      const double sx = x + state.off_x, sy = y + state.off_y;
      const std::uint8_t cls = classify(sx, sy, state, g);
      if (cls == kClassSlag) ++slag_count;
      f.mask.ids[y * params.w + x] = cls;

      double rgb[3];
      base_color(cls, sx, sy, rgb);
      // occlusion alters the rendered image only, never the mask
      if (state.occ.kind != OcclusionState::None) {
        const double dx = x - state.occ.cx, dy = y - state.occ.cy;
        const double d = std::sqrt(dx * dx + dy * dy) / state.occ.extent;
        if (d < 1.0) {
          // saturating core: a strong occlusion fully hides the scene across
          // most of its extent while faint haze stays translucent everywhere
          const double a = std::min(1.0, 2.4 * state.occ.opacity * std::pow(1.0 - d, 0.35));
          const double flame[3] = {255, 185, 70};
          const double smoke[3] = {168, 168, 172};
          const double* oc = state.occ.kind == OcclusionState::Flame ? flame : smoke;
          for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - a) * rgb[c] + a * oc[c];
        }
      }
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c] + noise.uniform(-7.0, 7.0);
        f.rgb.pixels[(y * params.w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  f.truth_fraction = static_cast<double>(slag_count) / static_cast<double>(params.h * params.w);
  return f;
}

std::size_t analytic_slag_pixels(const KilnState& state, const SceneParams& params) {
  const Geometry g = geometry(params);
  std::size_t n = 0;
  for (std::size_t y = 0; y < params.h; ++y)
    for (std::size_t x = 0; x < params.w; ++x)
      if (classify(x + state.off_x, y + state.off_y, state, g) == kClassSlag) ++n;
  return n;
}

}  // namespace kseg

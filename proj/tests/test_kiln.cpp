#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "kiln.hpp"
#include "losses.hpp"

using namespace kseg;

namespace {

SceneParams base_params(std::uint64_t seed = 1) {
  SceneParams p;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("scene generation is deterministic per seed") {
  auto p = base_params(5);
  auto a = init_scene(p);
  auto b = init_scene(p);
  for (int i = 0; i < 10; ++i) {
    advance_scene(a, p.delta_seconds, p);
    advance_scene(b, p.delta_seconds, p);
  }
  auto fa = render_frame(a, p);
  auto fb = render_frame(b, p);
  CHECK(fa.rgb.pixels == fb.rgb.pixels);
  CHECK(fa.mask.ids == fb.mask.ids);
  CHECK(fa.truth_fraction == fb.truth_fraction);

  auto c = init_scene(base_params(6));
  advance_scene(c, p.delta_seconds, p);
  CHECK(render_frame(c, p).rgb.pixels != fa.rgb.pixels);
}

TEST_CASE("masks use exactly the four class ids") {
  auto p = base_params(2);
  auto s = init_scene(p);
  std::set<std::uint8_t> seen;
  for (int i = 0; i < 20; ++i) {
    advance_scene(s, p.delta_seconds, p);
    auto f = render_frame(s, p);
    for (auto id : f.mask.ids) seen.insert(id);
  }
  for (auto id : seen) CHECK(id < kNumClasses);
  CHECK(seen.count(kClassBackground) == 1);
  CHECK(seen.count(kClassSlag) == 1);
  CHECK(seen.count(kClassCameraEdge) == 1);
  CHECK(seen.count(kClassWall) == 1);
}

TEST_CASE("occlusion changes pixels but never the mask") {
  auto clean = base_params(3);
  auto s = init_scene(clean);
  for (int i = 0; i < 5; ++i) advance_scene(s, clean.delta_seconds, clean);
  auto f_clean = render_frame(s, clean);

  // same state, occlusion forced on top
  auto occluded_state = s;
  occluded_state.occ.kind = OcclusionState::Smoke;
  occluded_state.occ.cx = 32;
  occluded_state.occ.cy = 32;
  occluded_state.occ.extent = 40;
  occluded_state.occ.opacity = 0.9;
  auto f_occ = render_frame(occluded_state, clean);

  CHECK(f_occ.mask.ids == f_clean.mask.ids);
  CHECK(f_occ.truth_fraction == f_clean.truth_fraction);
  CHECK(f_occ.rgb.pixels != f_clean.rgb.pixels);
  CHECK(f_occ.occluded);
  CHECK_FALSE(f_clean.occluded);
}

TEST_CASE("faint haze below the visibility threshold does not flag the frame") {
  auto p = base_params(3);
  auto s = init_scene(p);
  s.occ.kind = OcclusionState::Smoke;
  s.occ.opacity = p.visibility_threshold / 2;
  s.occ.extent = 30;
  CHECK_FALSE(render_frame(s, p).occluded);
}

TEST_CASE("class frequencies are heavily skewed away from slag") {
  auto p = base_params(4);
  auto s = init_scene(p);
  std::vector<SegMask> masks;
  for (int i = 0; i < 30; ++i) {
    advance_scene(s, p.delta_seconds, p);
    masks.push_back(render_frame(s, p).mask);
  }
  auto freq = class_frequencies(masks, kNumClasses).freq;
  CHECK(freq[kClassSlag] < 0.25);
  CHECK(freq[kClassSlag] > 0.0);
  CHECK(freq[kClassWall] > freq[kClassSlag]);
  double sum = 0;
  for (double f : freq) sum += f;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("slag grows monotonically without removals") {
  auto p = base_params(8);
  p.jitter = 0.0;  // keep camera still so growth is the only change
  auto s = init_scene(p);
  std::size_t prev = analytic_slag_pixels(s, p);
  bool grew = false;
  for (int i = 0; i < 40; ++i) {
    advance_scene(s, p.delta_seconds, p);
    std::size_t cur = analytic_slag_pixels(s, p);
    CHECK(cur >= prev);
    grew = grew || cur > prev;
    prev = cur;
  }
  CHECK(grew);
}

TEST_CASE("removal events shrink the slag area") {
  auto p = base_params(9);
  p.jitter = 0.0;
  p.removal_times = {55.0};
  auto s = init_scene(p);
  for (int i = 0; i < 5; ++i) advance_scene(s, p.delta_seconds, p);  // t=50
  std::size_t before = analytic_slag_pixels(s, p);
  advance_scene(s, p.delta_seconds, p);  // t=60, removal fires
  std::size_t after = analytic_slag_pixels(s, p);
  CHECK(after < before);
  for (const auto& b : s.blobs) CHECK(b.r < p.start_radius_max + 10 * p.growth_rate);
}

TEST_CASE("radius growth saturates at the configured maximum") {
  auto p = base_params(10);
  auto s = init_scene(p);
  for (int i = 0; i < 2000; ++i) advance_scene(s, p.delta_seconds, p);
  for (const auto& b : s.blobs) CHECK(b.r <= p.max_radius);
}

TEST_CASE("analytic slag count matches the rendered mask exactly") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto p = base_params(seed);
    auto s = init_scene(p);
    for (int i = 0; i < 15; ++i) advance_scene(s, p.delta_seconds, p);
    auto f = render_frame(s, p);
    std::size_t mask_count = 0;
    for (auto id : f.mask.ids) mask_count += id == kClassSlag;
    CHECK(mask_count == analytic_slag_pixels(s, p));
    CHECK(f.truth_fraction ==
          doctest::Approx(double(mask_count) / double(p.h * p.w)).epsilon(1e-12));
  }
}

TEST_CASE("occlusion probability controls how often frames are occluded") {
  auto p = base_params(12);
  p.occlusion_prob = 0.5;
  p.occlusion_opacity_min = 0.5;  // always above visibility threshold
  auto s = init_scene(p);
  int occ = 0, n = 200;
  for (int i = 0; i < n; ++i) {
    advance_scene(s, p.delta_seconds, p);
    occ += render_frame(s, p).occluded;
  }
  CHECK(occ > n / 4);
  CHECK(occ < 3 * n / 4);

  auto q = base_params(12);
  auto s2 = init_scene(q);
  for (int i = 0; i < 50; ++i) {
    advance_scene(s2, q.delta_seconds, q);
    CHECK_FALSE(render_frame(s2, q).occluded);
  }
}

TEST_CASE("camera jitter stays inside its bound") {
  auto p = base_params(13);
  auto s = init_scene(p);
  for (int i = 0; i < 300; ++i) {
    advance_scene(s, p.delta_seconds, p);
    CHECK(std::abs(s.off_x) <= p.jitter);
    CHECK(std::abs(s.off_y) <= p.jitter);
  }
}

TEST_CASE("scene parameter validation") {
  auto p = base_params();
  p.h = 4;
  CHECK_THROWS_AS(init_scene(p), Error);
  p = base_params();
  p.min_blobs = 6;
  p.max_blobs = 2;
  CHECK_THROWS_AS(init_scene(p), Error);
  p = base_params();
  p.occlusion_prob = 1.5;
  CHECK_THROWS_AS(init_scene(p), Error);
}

TEST_CASE("png round trip preserves a rendered frame") {
  auto p = base_params(14);
  auto s = init_scene(p);
  advance_scene(s, p.delta_seconds, p);
  auto f = render_frame(s, p);
  const std::string path = (std::filesystem::temp_directory_path() / "kseg_frame.png").string();
  write_png(path, f.rgb);
  auto back = read_png(path);
  CHECK(back.h == f.rgb.h);
  CHECK(back.w == f.rgb.w);
  CHECK(back.channels == 3);
  CHECK(back.pixels == f.rgb.pixels);
  std::remove(path.c_str());
}

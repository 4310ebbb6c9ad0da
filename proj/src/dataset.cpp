#include "dataset.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace kseg {

namespace {

std::string frame_name(const char* prefix, std::size_t idx, char tag) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06zu_%c.png", prefix, idx, tag);
  return buf;
}

ImageU8 mask_image(const SegMask& m) {
  ImageU8 img;
  img.h = m.h;
  img.w = m.w;
  img.channels = 1;
  img.pixels = m.ids;
  return img;
}

const char* split_name(std::size_t idx, const std::array<std::size_t, 3>& sizes) {
  if (idx < sizes[0]) return "train";
  if (idx < sizes[0] + sizes[1]) return "val";
  return "test";
}

void write_manifest(const std::string& path, const std::vector<nlohmann::json>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(bool(os), ErrorClass::Io, "cannot write manifest " + path);
  for (const auto& r : records) os << r.dump() << '\n';
  require(bool(os), ErrorClass::Io, "manifest write failed " + path);
}

}  // namespace

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::abs(sum - 1.0) < 1e-9, ErrorClass::Config, "split ratios must sum to 1");
  require(n >= 1, ErrorClass::Config, "dataset needs at least one item");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = n * ratios[i];
    sizes[i] = static_cast<std::size_t>(q);
    frac[i] = q - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++sizes[best];
    frac[best] = -1;
    ++assigned;
  }
  return sizes;
}

std::vector<nlohmann::json> make_dataset(const DatasetParams& params) {
  params.scene.validate();
  require(!params.out_dir.empty(), ErrorClass::Config, "dataset output directory not set");
  const fs::path out(params.out_dir);
  fs::create_directories(out / "images");
  fs::create_directories(out / "masks");
  fs::create_directories(out / "disc");

  const auto sizes = split_sizes(params.n_pairs, params.split_ratios);

  // frame pairs: fresh scene per pair; a share of frames carries occlusion of
  // any strength (masks stay exact ground truth), so segmenters meet corrupted
  // inputs during training and the temporal model learns to lean on the
  // cleaner previous frame
  SceneParams pair_scene = params.scene;
  pair_scene.occlusion_prob = params.pair_occlusion_prob;
  pair_scene.occlusion_opacity_min = 0.08;

  std::vector<nlohmann::json> manifest;
  manifest.reserve(params.n_pairs);
  for (std::size_t i = 0; i < params.n_pairs; ++i) {
    SceneParams sp = pair_scene;
    sp.seed = detail::mix_seed(params.scene.seed, i);
    auto state = init_scene(sp);
    Rng warm(detail::mix_seed(sp.seed, 0xda7a));
    // warmups span the whole growth curve so slag fractions match what long
    // streams eventually reach
    const std::size_t warmup = warm.below(600);
    for (std::size_t s = 0; s < warmup; ++s) advance_scene(state, sp.delta_seconds, sp);

    advance_scene(state, sp.delta_seconds, sp);
    Frame prev = render_frame(state, sp);
    advance_scene(state, sp.delta_seconds, sp);
    Frame cur = render_frame(state, sp);

    const std::string pa = frame_name("p", i, 'a'), pb = frame_name("p", i, 'b');
    write_png((out / "images" / pa).string(), prev.rgb);
    write_png((out / "images" / pb).string(), cur.rgb);
    write_png((out / "masks" / pa).string(), mask_image(prev.mask));
    write_png((out / "masks" / pb).string(), mask_image(cur.mask));

    manifest.push_back({{"pair_id", i},
                        {"split", split_name(i, sizes)},
                        {"prev_image", "images/" + pa},
                        {"prev_mask", "masks/" + pa},
                        {"cur_image", "images/" + pb},
                        {"cur_mask", "masks/" + pb},
                        {"t_prev", prev.timestamp},
                        {"t_cur", cur.timestamp},
                        {"occluded", cur.occluded},
                        {"truth_fraction", cur.truth_fraction}});
  }
  write_manifest((out / "manifest.jsonl").string(), manifest);

  // discriminator frames: roughly half occluded, full opacity range so the
  // boundary around the visibility threshold stays hard
  SceneParams disc_scene = params.scene;
  if (disc_scene.occlusion_prob == 0.0) disc_scene.occlusion_prob = 0.5;
  const auto disc_sizes = split_sizes(params.n_disc_frames, params.split_ratios);
  std::vector<nlohmann::json> disc;
  disc.reserve(params.n_disc_frames);
  for (std::size_t i = 0; i < params.n_disc_frames; ++i) {
    SceneParams sp = disc_scene;
    sp.seed = detail::mix_seed(params.scene.seed ^ 0xd15cULL, i);
    // keep opacities away from the visibility threshold: a haze at 0.24 vs
    // 0.26 opacity is indistinguishable in pixels, so labels drawn from that
    // band would be noise rather than signal
    Rng band(detail::mix_seed(sp.seed, 0xba5dULL));
    if (band.below(2) == 0) {
      sp.occlusion_opacity_min = 0.08;
      sp.occlusion_opacity_max = 0.5 * sp.visibility_threshold;
    } else {
      sp.occlusion_opacity_min =
          std::min(1.3 * sp.visibility_threshold, sp.occlusion_opacity_max);
    }
    auto state = init_scene(sp);
    Rng warm(detail::mix_seed(sp.seed, 0xda7a));
    const std::size_t warmup = 1 + warm.below(600);
    for (std::size_t s = 0; s < warmup; ++s) advance_scene(state, sp.delta_seconds, sp);
    Frame f = render_frame(state, sp);

    const std::string name = frame_name("d", i, 'x');
    write_png((out / "disc" / name).string(), f.rgb);
    disc.push_back({{"frame_id", i},
                    {"split", split_name(i, disc_sizes)},
                    {"image", "disc/" + name},
                    {"occluded", f.occluded},
                    {"timestamp", f.timestamp},
                    {"truth_fraction", f.truth_fraction}});
  }
  write_manifest((out / "disc_manifest.jsonl").string(), disc);
  return manifest;
}

std::vector<nlohmann::json> make_stream(const StreamParams& params) {
  params.scene.validate();
  require(!params.out_dir.empty(), ErrorClass::Config, "stream output directory not set");
  require(params.profile == "gradual" || params.profile == "removal", ErrorClass::Config,
          "unknown stream profile " + params.profile);
  require(params.n_frames >= 2, ErrorClass::Config, "stream too short");

  const fs::path out(params.out_dir);
  const std::string dirname = "stream_" + params.profile;
  fs::create_directories(out / dirname);

  SceneParams sp = params.scene;
  sp.removal_times.clear();
  if (params.profile == "removal") {
    // a few cut-backs spread over the stream
    const double span = params.n_frames * sp.delta_seconds;
    sp.removal_times = {0.3 * span, 0.6 * span, 0.85 * span};
  }

  auto state = init_scene(sp);
  std::vector<nlohmann::json> records;
  records.reserve(params.n_frames);
  for (std::size_t i = 0; i < params.n_frames; ++i) {
    advance_scene(state, sp.delta_seconds, sp);
    Frame f = render_frame(state, sp);
    const std::string name = frame_name("s", i, 'x');
    write_png((out / dirname / name).string(), f.rgb);
    write_png((out / dirname / ("m" + name)).string(), mask_image(f.mask));
    records.push_back({{"frame_id", i},
                       {"image", dirname + "/" + name},
                       {"mask", dirname + "/m" + name},
                       {"timestamp", f.timestamp},
                       {"occluded", f.occluded},
                       {"truth_fraction", f.truth_fraction}});
  }
  write_manifest((out / (dirname + ".jsonl")).string(), records);
  return records;
}

std::vector<nlohmann::json> read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorClass::Io, "cannot read manifest " + path);
  std::vector<nlohmann::json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorClass::Io,
                  "corrupt manifest line " + std::to_string(line_no) + " in " + path);
    }
  }
  return records;
}

Tensor<float> load_image_tensor(const std::string& path) {
  ImageU8 img = read_png(path);
  require(img.channels == 3, ErrorClass::Io, "expected rgb image " + path);
  auto t = Tensor<float>::zeros({1, 3, img.h, img.w});
  const std::size_t hw = img.h * img.w;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      t.data()[c * hw + i] = img.pixels[i * 3 + c] / 255.0f;
  return t;
}

SegMask load_mask(const std::string& path) {
  ImageU8 img = read_png(path);
  require(img.channels == 1, ErrorClass::Io, "expected grayscale mask " + path);
  SegMask m(img.h, img.w);
  m.ids = img.pixels;
  return m;
}

}  // namespace kseg

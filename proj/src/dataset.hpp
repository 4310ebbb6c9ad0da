#pragma once

// Dataset and stream generation on disk: frame-pair corpus for the segmenters,
// a single-frame occlusion corpus for the discriminator, and long evaluation
// streams. All artifacts are PNG images plus JSON-lines manifests.

#include <json.hpp>

#include "kiln.hpp"
#include "tensor.hpp"

namespace kseg {

struct DatasetParams {
  SceneParams scene;          // occlusion_prob here applies to discriminator frames
  std::size_t n_pairs = 420;
  std::size_t n_disc_frames = 1000;
  std::array<double, 3> split_ratios{0.64, 0.16, 0.20};  // train/val/test
  // per-frame occlusion probability inside pair scenes; occluded targets stay
  // in the corpus with exact masks
  double pair_occlusion_prob = 0.35;
  std::string out_dir;
};

struct StreamParams {
  SceneParams scene;
  std::string profile = "gradual";  // or "removal"
  std::size_t n_frames = 600;
  std::string out_dir;
};

// largest-remainder apportionment; sizes sum to n
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

// Writes images/, masks/, manifest.jsonl (pairs) and disc/, disc_manifest.jsonl
// (single frames). Returns the pair manifest records in write order.
std::vector<nlohmann::json> make_dataset(const DatasetParams& params);

// Writes stream frames and stream_<profile>.jsonl; returns the records.
std::vector<nlohmann::json> make_stream(const StreamParams& params);

std::vector<nlohmann::json> read_manifest(const std::string& path);

// image loading for training/inference
Tensor<float> load_image_tensor(const std::string& path);
SegMask load_mask(const std::string& path);

}  // namespace kseg

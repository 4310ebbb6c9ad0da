#pragma once

// Flat key=value run configuration. A config file provides defaults, CLI
// flags override by calling set() again.

#include <fstream>
#include <map>

#include "common.hpp"

namespace kseg {

struct RunConfig {
  std::string model = "pspnet";  // unet | pspnet | pspnet-lstm | discriminator
  std::string loss;              // ce | dice | tanimoto; empty picks the model default
  std::string weighting;         // none | isv | isrv; empty picks the model default
  std::uint64_t seed = 0;
  std::size_t epochs = 0;  // 0 picks the model default
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t window = 60;
  double threshold = 0.5;  // occlusion gate
  double tau = 0.05;       // outlier threshold on |fraction - truth|
  double leak = 0.0;       // gate leakage fraction for stability experiments
  std::string out = "out";
  std::string data;     // dataset directory (manifest.jsonl inside)
  std::string stream;   // stream manifest path
  std::string log;      // stream record log path (default <out>/stream_log.jsonl)
  std::string run_id;   // default run-<seed>
  std::string checkpoint;
  std::string base_checkpoint;      // framewise source for temporal transfer
  std::string disc_checkpoint;
  std::string temporal_checkpoint;  // optional second segmenter for stream
  std::size_t pairs = 420;
  std::size_t disc_frames = 1000;
  std::size_t frames = 600;
  std::size_t height = 64, width = 64;
  double occlusion_prob = 0.25;  // stream generation

  void set(const std::string& key, const std::string& value) {
    auto u64 = [&] {
      try {
        return std::stoull(value);
      } catch (const std::exception&) {
        throw Error(ErrorClass::Config, "config key " + key + ": expected integer, got " + value);
      }
    };
    auto f64 = [&] {
      try {
        return std::stod(value);
      } catch (const std::exception&) {
        throw Error(ErrorClass::Config, "config key " + key + ": expected number, got " + value);
      }
    };
    if (key == "model") model = value;
    else if (key == "loss") loss = value;
    else if (key == "weighting") weighting = value;
    else if (key == "seed") seed = u64();
    else if (key == "epochs") epochs = u64();
    else if (key == "lr") lr = f64();
    else if (key == "batch") batch = u64();
    else if (key == "window") window = u64();
    else if (key == "threshold") threshold = f64();
    else if (key == "tau") tau = f64();
    else if (key == "leak") leak = f64();
    else if (key == "out") out = value;
    else if (key == "data") data = value;
    else if (key == "stream") stream = value;
    else if (key == "log") log = value;
    else if (key == "run_id") run_id = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "base_checkpoint") base_checkpoint = value;
    else if (key == "disc_checkpoint") disc_checkpoint = value;
    else if (key == "temporal_checkpoint") temporal_checkpoint = value;
    else if (key == "pairs") pairs = u64();
    else if (key == "disc_frames") disc_frames = u64();
    else if (key == "frames") frames = u64();
    else if (key == "height") height = u64();
    else if (key == "width") width = u64();
    else if (key == "occlusion_prob") occlusion_prob = f64();
    else throw Error(ErrorClass::Config, "unknown config key " + key);
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), ErrorClass::Io, "cannot read config " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorClass::Config,
              "config " + path + " line " + std::to_string(line_no) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void validate_model() const {
    require(model == "unet" || model == "pspnet" || model == "pspnet-lstm" ||
                model == "discriminator",
            ErrorClass::Config, "unknown model " + model);
  }

  std::string default_loss() const { return model == "unet" ? "dice" : "ce"; }
  std::string default_weighting() const { return model == "unet" ? "isv" : "isrv"; }
  std::string effective_loss() const { return loss.empty() ? default_loss() : loss; }
  std::string effective_weighting() const {
    return weighting.empty() ? default_weighting() : weighting;
  }
  std::string effective_log() const { return log.empty() ? out + "/stream_log.jsonl" : log; }
  std::string effective_run_id() const {
    return run_id.empty() ? "run-" + std::to_string(seed) : run_id;
  }
};

}  // namespace kseg

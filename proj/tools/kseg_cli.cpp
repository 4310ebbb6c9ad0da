// Command-line front end. Everything goes through the C API in kseg.h; on
// failure prints one line "error <class>: <message>" to stderr and exits
// with the status code.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kseg.h"

namespace {

struct ConfigDeleter {
  void operator()(kseg_config* c) const { kseg_config_free(c); }
};
using ConfigPtr = std::unique_ptr<kseg_config, ConfigDeleter>;

int fail(kseg_status st) {
  std::fprintf(stderr, "error %s: %s\n", kseg_status_name(st), kseg_last_error());
  return static_cast<int>(st);
}

// flag overrides are applied after the config file so they win
struct Overrides {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string config_file;

  void attach(CLI::App* cmd, const char* key, const char* description) {
    cmd->add_option_function<std::string>(
        std::string("--") + key,
        [this, key = std::string(key)](const std::string& v) { kv.emplace_back(key, v); },
        description);
  }

  int apply(kseg_config* cfg) const {
    if (!config_file.empty()) {
      if (auto st = kseg_config_load_file(cfg, config_file.c_str()); st != KSEG_OK)
        return fail(st);
    }
    for (const auto& [k, v] : kv)
      if (auto st = kseg_config_set(cfg, k.c_str(), v.c_str()); st != KSEG_OK) return fail(st);
    return 0;
  }
};

void add_common(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_file, "key = value configuration file");
  ov.attach(cmd, "seed", "RNG seed");
  ov.attach(cmd, "out", "output directory");
  ov.attach(cmd, "model", "unet | pspnet | pspnet-lstm | discriminator");
  ov.attach(cmd, "loss", "ce | dice | tanimoto");
  ov.attach(cmd, "weighting", "none | isv | isrv");
  ov.attach(cmd, "window", "running variance window (default 60)");
  ov.attach(cmd, "threshold", "occlusion gate threshold (default 0.5)");
  ov.attach(cmd, "data", "dataset directory");
  ov.attach(cmd, "checkpoint", "checkpoint path");
  ov.attach(cmd, "base_checkpoint", "trained pspnet for temporal transfer");
  ov.attach(cmd, "disc_checkpoint", "discriminator checkpoint");
  ov.attach(cmd, "temporal_checkpoint", "second segmenter for stream");
  ov.attach(cmd, "stream", "stream manifest path");
  ov.attach(cmd, "log", "stream record log path");
  ov.attach(cmd, "run_id", "record log run id");
  ov.attach(cmd, "epochs", "training epochs");
  ov.attach(cmd, "lr", "learning rate");
  ov.attach(cmd, "batch", "batch size");
  ov.attach(cmd, "pairs", "frame pairs to generate");
  ov.attach(cmd, "disc_frames", "discriminator frames to generate");
  ov.attach(cmd, "frames", "stream length to generate");
  ov.attach(cmd, "height", "image height");
  ov.attach(cmd, "width", "image width");
  ov.attach(cmd, "occlusion_prob", "per-frame stream occlusion probability");
  ov.attach(cmd, "tau", "outlier threshold");
  ov.attach(cmd, "leak", "stream gate leakage fraction");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic slag segmentation toolkit"};
  app.require_subcommand(1);

  Overrides ov_gen, ov_train, ov_eval, ov_stream;
  auto* gen = app.add_subcommand("generate", "write dataset and evaluation streams");
  add_common(gen, ov_gen);
  auto* train = app.add_subcommand("train", "train a model, write checkpoint + CSV log");
  add_common(train, ov_train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string split = "test";
  eval->add_option("--split", split, "train | val | test");
  add_common(eval, ov_eval);
  auto* stream = app.add_subcommand("stream", "run the streaming monitor over a stream");
  add_common(stream, ov_stream);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  double tolerance = 1e-4;
  gradcheck->add_option("--tolerance", tolerance, "max relative error");

  CLI11_PARSE(app, argc, argv);

  ConfigPtr cfg(kseg_config_new());
  char buf[8192];

  if (gen->parsed()) {
    if (int rc = ov_gen.apply(cfg.get())) return rc;
    if (auto st = kseg_generate(cfg.get()); st != KSEG_OK) return fail(st);
    std::puts("dataset and streams written");
  } else if (train->parsed()) {
    if (int rc = ov_train.apply(cfg.get())) return rc;
    if (auto st = kseg_train(cfg.get(), buf, sizeof(buf)); st != KSEG_OK) return fail(st);
    std::printf("checkpoint written: %s\n", buf);
  } else if (eval->parsed()) {
    if (int rc = ov_eval.apply(cfg.get())) return rc;
    if (auto st = kseg_eval(cfg.get(), split.c_str(), buf, sizeof(buf)); st != KSEG_OK)
      return fail(st);
    std::fputs(buf, stdout);
  } else if (stream->parsed()) {
    if (int rc = ov_stream.apply(cfg.get())) return rc;
    if (auto st = kseg_stream(cfg.get(), buf, sizeof(buf)); st != KSEG_OK) return fail(st);
    std::printf("%s\n", buf);
  } else if (gradcheck->parsed()) {
    auto st = kseg_gradcheck(tolerance, buf, sizeof(buf));
    std::fputs(buf, stdout);
    if (st != KSEG_OK) return fail(st);
    std::puts("all gradient checks passed");
  }
  return 0;
}

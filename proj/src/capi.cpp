#include "kseg.h"

#include <cstring>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "trainer.hpp"

using namespace kseg;

struct kseg_config {
  RunConfig cfg;
};

namespace {

thread_local std::string g_last_error = "ok";

kseg_status status_of(ErrorClass c) {
  switch (c) {
    case ErrorClass::Io: return KSEG_ERR_IO;
    case ErrorClass::Config: return KSEG_ERR_CONFIG;
    case ErrorClass::Shape: return KSEG_ERR_SHAPE;
    case ErrorClass::Numeric: return KSEG_ERR_NUMERIC;
    case ErrorClass::State: return KSEG_ERR_STATE;
  }
  return KSEG_ERR_STATE;
}

void copy_out(char* dst, size_t cap, const std::string& s) {
  if (!dst || cap == 0) return;
  const size_t n = std::min(cap - 1, s.size());
  std::memcpy(dst, s.data(), n);
  dst[n] = '\0';
}

template <class Fn>
kseg_status guarded(Fn&& fn) {
  try {
    fn();
    return KSEG_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.cls);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KSEG_ERR_STATE;
  }
}

kseg_status invalid(const char* msg) {
  g_last_error = msg;
  return KSEG_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* kseg_version(void) { return "1.0.0"; }

const char* kseg_last_error(void) { return g_last_error.c_str(); }

const char* kseg_status_name(kseg_status status) {
  switch (status) {
    case KSEG_OK: return "ok";
    case KSEG_ERR_IO: return "io";
    case KSEG_ERR_CONFIG: return "config";
    case KSEG_ERR_SHAPE: return "shape";
    case KSEG_ERR_NUMERIC: return "numeric";
    case KSEG_ERR_STATE: return "state";
    case KSEG_ERR_INVALID_ARGUMENT: return "invalid_argument";
  }
  return "unknown";
}

kseg_config* kseg_config_new(void) { return new kseg_config(); }

void kseg_config_free(kseg_config* cfg) { delete cfg; }

kseg_status kseg_config_load_file(kseg_config* cfg, const char* path) {
  if (!cfg || !path) return invalid("null config or path");
  return guarded([&] { cfg->cfg.load_file(path); });
}

kseg_status kseg_config_set(kseg_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return invalid("null config, key or value");
  return guarded([&] { cfg->cfg.set(key, value); });
}

kseg_status kseg_generate(kseg_config* cfg) {
  if (!cfg) return invalid("null config");
  return guarded([&] {
    const RunConfig& c = cfg->cfg;
    DatasetParams dp;
    dp.scene.h = c.height;
    dp.scene.w = c.width;
    dp.scene.seed = c.seed;
    dp.n_pairs = c.pairs;
    dp.n_disc_frames = c.disc_frames;
    dp.out_dir = c.out;
    make_dataset(dp);
    for (const char* profile : {"gradual", "removal"}) {
      StreamParams sp;
      sp.scene = dp.scene;
      sp.scene.seed = detail::mix_seed(c.seed, profile[0]);
      sp.scene.occlusion_prob = c.occlusion_prob;
      sp.profile = profile;
      sp.n_frames = c.frames;
      sp.out_dir = c.out;
      make_stream(sp);
    }
  });
}

kseg_status kseg_train(kseg_config* cfg, char* out_checkpoint_path, size_t cap) {
  if (!cfg) return invalid("null config");
  return guarded([&] {
    auto res = train_model(cfg->cfg);
    copy_out(out_checkpoint_path, cap, res.checkpoint_path);
  });
}

kseg_status kseg_eval(kseg_config* cfg, const char* split, char* out_report, size_t cap) {
  if (!cfg || !split) return invalid("null config or split");
  return guarded([&] {
    if (!cfg->cfg.checkpoint.empty() &&
        read_checkpoint_descriptor(cfg->cfg.checkpoint).at("kind") == "discriminator") {
      auto res = eval_discriminator(cfg->cfg, split);
      char line[160];
      std::snprintf(line, sizeof(line),
                    "precision %s\nrecall    %6.2f%%\naccuracy  %6.2f%%\nframes    %zu\n",
                    res.precision ? (std::to_string(100.0 * *res.precision) + "%").c_str()
                                  : "n/a",
                    100.0 * res.recall, 100.0 * res.accuracy, res.frames);
      copy_out(out_report, cap, std::string(line) + "report: " + res.csv_path + "\n");
      return;
    }
    auto res = eval_checkpoint(cfg->cfg, split);
    const char* names[4] = {"background", "slag", "camera edge", "wall"};
    char line[96];
    std::string report = "class          iou\n";
    for (std::size_t c = 0; c < res.iou.size(); ++c) {
      std::snprintf(line, sizeof(line), "%-12s %6.2f%%\n", names[c], 100.0 * res.iou[c]);
      report += line;
    }
    std::snprintf(line, sizeof(line), "%-12s %6.2f%%\n%-12s %6.2f%%\n", "miou",
                  100.0 * res.miou, "accuracy", 100.0 * res.accuracy);
    report += line;
    report += "report: " + res.csv_path + "\n";
    copy_out(out_report, cap, report);
  });
}

kseg_status kseg_stream(kseg_config* cfg, char* out_summary, size_t cap) {
  if (!cfg) return invalid("null config");
  return guarded([&] {
    auto res = run_stream(cfg->cfg);
    nlohmann::json j{{"log", res.log_path},
                     {"total_frames", res.total_frames},
                     {"filtered_frames", res.filtered_frames},
                     {"models", nlohmann::json::array()}};
    for (const auto& m : res.models)
      j["models"].push_back({{"model", m.tag},
                             {"frames", m.frames},
                             {"outliers", m.outliers},
                             {"median_running_variance", m.median_running_variance}});
    copy_out(out_summary, cap, j.dump(2));
  });
}

kseg_status kseg_gradcheck(double tolerance, char* out_report, size_t cap) {
  std::string report;
  double worst = 0.0;
  const kseg_status st = guarded([&] {
    for (const auto& [name, err] : gradcheck_suite()) {
      char line[96];
      std::snprintf(line, sizeof(line), "%-22s %.3e\n", name.c_str(), err);
      report += line;
      worst = std::max(worst, err);
    }
  });
  copy_out(out_report, cap, report);
  if (st != KSEG_OK) return st;
  if (worst > tolerance) {
    g_last_error = "numeric: gradient check exceeded tolerance";
    return KSEG_ERR_NUMERIC;
  }
  return KSEG_OK;
}

}  // extern "C"

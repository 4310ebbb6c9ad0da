#pragma once

// Training, evaluation and the streaming monitor built on the dataset and
// model modules. All entry points take a RunConfig and work off the disk
// artifacts written by make_dataset / make_stream.

#include "dataset.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "runconfig.hpp"

namespace kseg {

struct EpochRow {
  std::size_t epoch;
  double train_loss;
  double val_slag_iou;  // discriminator logs val accuracy here
};

struct TrainResult {
  std::string checkpoint_path;
  double best_val = 0.0;
  std::vector<EpochRow> rows;
};

struct EvalResult {
  std::vector<double> iou;  // per class
  double miou = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix cm{0};
  std::string csv_path;
};

struct ModelSummary {
  std::string tag;  // framewise | temporal
  std::size_t frames = 0, outliers = 0;
  double median_running_variance = 0.0;
  std::size_t variance_points = 0;
};

struct StreamResult {
  std::string log_path;
  std::size_t total_frames = 0, filtered_frames = 0;
  std::vector<ModelSummary> models;
};

struct DiscEvalResult {
  std::optional<double> precision;  // absent when nothing was predicted occluded
  double recall = 0.0, accuracy = 0.0;
  std::size_t frames = 0;
  std::string csv_path;
};

TrainResult train_model(const RunConfig& cfg);
EvalResult eval_checkpoint(const RunConfig& cfg, const std::string& split);
DiscEvalResult eval_discriminator(const RunConfig& cfg, const std::string& split);
StreamResult run_stream(const RunConfig& cfg);

// append-only JSON-lines record log
void append_record(const std::string& path, const nlohmann::json& record);
std::vector<nlohmann::json> read_log(const std::string& path);

// finite-difference check of every op and each model at tiny size;
// returns (name, max relative error) pairs
std::vector<std::pair<std::string, double>> gradcheck_suite();

}  // namespace kseg

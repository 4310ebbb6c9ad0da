#include "trainer.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "gradcheck.hpp"
#include "losses.hpp"

namespace fs = std::filesystem;

namespace kseg {

namespace {

struct PairSample {
  Tensor<float> prev, cur;
  SegMask prev_mask, cur_mask;
};

struct PairSplits {
  std::vector<PairSample> train, val, test;
};

PairSplits load_pairs(const RunConfig& cfg) {
  require(!cfg.data.empty(), ErrorClass::Config, "dataset directory not set");
  const fs::path root(cfg.data);
  auto manifest = read_manifest((root / "manifest.jsonl").string());
  PairSplits s;
  for (const auto& r : manifest) {
    PairSample p;
    p.prev = load_image_tensor((root / r.at("prev_image").get<std::string>()).string());
    p.cur = load_image_tensor((root / r.at("cur_image").get<std::string>()).string());
    p.prev_mask = load_mask((root / r.at("prev_mask").get<std::string>()).string());
    p.cur_mask = load_mask((root / r.at("cur_mask").get<std::string>()).string());
    const std::string split = r.at("split");
    (split == "train" ? s.train : split == "val" ? s.val : s.test).push_back(std::move(p));
  }
  require(!s.train.empty() && !s.val.empty() && !s.test.empty(), ErrorClass::State,
          "dataset is missing a split");
  return s;
}

Tensor<float> stack_images(const std::vector<const Tensor<float>*>& imgs) {
  const auto& s0 = imgs[0]->shape();
  Tensor<float> out = Tensor<float>::zeros({imgs.size(), s0[1], s0[2], s0[3]});
  const std::size_t per = imgs[0]->size();
  for (std::size_t i = 0; i < imgs.size(); ++i)
    std::copy(imgs[i]->data().begin(), imgs[i]->data().end(), out.data().begin() + i * per);
  return out;
}

WeightScheme parse_weighting(const std::string& name) {
  if (name == "none") return WeightScheme::None;
  if (name == "isv") return WeightScheme::Isv;
  if (name == "isrv") return WeightScheme::Isrv;
  throw Error(ErrorClass::Config, "unknown weighting scheme " + name);
}

Tensor<float> seg_loss(const std::string& loss, const Tensor<float>& probs,
                       const std::vector<SegMask>& targets, const ClassWeightTable& weights) {
  if (loss == "ce") return cross_entropy_loss(probs, targets, weights);
  const auto target = one_hot<float>(targets, weights.weight.size());
  if (loss == "dice") return dice_loss(probs, target, weights);
  if (loss == "tanimoto") return tanimoto_loss(probs, target, weights);
  throw Error(ErrorClass::Config, "unknown loss " + loss);
}

std::vector<std::vector<float>> snapshot(const ParamStore<float>& store) {
  std::vector<std::vector<float>> out;
  for (const auto& e : store.entries()) out.push_back(e.tensor.data());
  return out;
}

void restore(ParamStore<float>& store, const std::vector<std::vector<float>>& snap) {
  auto& entries = store.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].tensor.data() = snap[i];
}

void write_train_csv(const std::string& path, const char* val_col,
                     const std::vector<EpochRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  require(bool(os), ErrorClass::Io, "cannot write " + path);
  os << "epoch,train_loss," << val_col << "\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_slag_iou);
    os << buf;
  }
}

float finite_loss(const Tensor<float>& loss) {
  const float v = loss.item();
  require(std::isfinite(v), ErrorClass::Numeric, "training aborted: loss is not finite");
  return v;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig mc;
  mc.h = cfg.height;
  mc.w = cfg.width;
  mc.seed = cfg.seed;
  return mc;
}

std::string default_ckpt(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out + "/" + cfg.model + ".ckpt" : cfg.checkpoint;
}

template <class Forward>
double val_slag_iou(const std::vector<PairSample>& val, Forward&& forward) {
  ConfusionMatrix cm(kNumClasses);
  for (const auto& p : val) cm.merge(confusion_matrix(forward(p), p.cur_mask, kNumClasses));
  return iou_class(cm, kClassSlag);
}

template <class Model, class Forward>
TrainResult train_segmenter_impl(const RunConfig& cfg, Model& model, ParamStore<float>& params,
                                 const PairSplits& data, std::size_t default_epochs,
                                 Forward&& forward_batch) {
  std::vector<SegMask> train_masks;
  for (const auto& p : data.train) train_masks.push_back(p.cur_mask);
  const auto weights = class_weights(class_frequencies(train_masks, kNumClasses),
                                     parse_weighting(cfg.effective_weighting()));
  const std::string loss_name = cfg.effective_loss();
  const std::size_t epochs = cfg.epochs ? cfg.epochs : default_epochs;

  Adam<float> adam(static_cast<float>(cfg.lr));
  auto trainable = params.trainable();
  require(!trainable.empty(), ErrorClass::State, "no trainable parameters");

  TrainResult res;
  res.best_val = -1.0;
  std::vector<std::vector<float>> best = snapshot(params);
  Rng order_rng(detail::mix_seed(cfg.seed, 0x0bdfULL));

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto idx = shuffled_indices(data.train.size(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
      const std::size_t end = std::min(idx.size(), start + cfg.batch);
      std::vector<const PairSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.train[idx[i]]);
      std::vector<SegMask> masks;
      for (const auto* p : batch) masks.push_back(p->cur_mask);
      auto probs = forward_batch(batch, true);
      auto loss = seg_loss(loss_name, probs, masks, weights);
      loss_sum += finite_loss(loss);
      ++batches;
      params.zero_grads();
      backward(loss);
      adam.step(trainable);
    }
    const double val = val_slag_iou(data.val, [&](const PairSample& p) {
      std::vector<const PairSample*> one{&p};
      return argmax_mask(forward_batch(one, false));
    });
    res.rows.push_back({epoch, loss_sum / batches, val});
    if (val > res.best_val) {
      res.best_val = val;
      best = snapshot(params);
    }
  }
  restore(params, best);

  fs::create_directories(cfg.out);
  res.checkpoint_path = default_ckpt(cfg);
  save_checkpoint(res.checkpoint_path, model.descriptor(), params);
  write_train_csv(cfg.out + "/train_" + cfg.model + ".csv", "val_slag_iou", res.rows);
  return res;
}

TrainResult train_discriminator(const RunConfig& cfg) {
  require(!cfg.data.empty(), ErrorClass::Config, "dataset directory not set");
  const fs::path root(cfg.data);
  auto manifest = read_manifest((root / "disc_manifest.jsonl").string());
  struct DiscSample {
    Tensor<float> img;
    float label;
  };
  std::vector<DiscSample> train, val;
  for (const auto& r : manifest) {
    const std::string split = r.at("split");
    if (split == "test") continue;
    DiscSample s{load_image_tensor((root / r.at("image").get<std::string>()).string()),
                 r.at("occluded").get<bool>() ? 1.0f : 0.0f};
    (split == "train" ? train : val).push_back(std::move(s));
  }
  require(!train.empty() && !val.empty(), ErrorClass::State, "discriminator corpus incomplete");

  Discriminator<float> model(model_config(cfg));
  Adam<float> adam(static_cast<float>(cfg.lr));
  auto trainable = model.store().trainable();
  const std::size_t epochs = cfg.epochs ? cfg.epochs : 40;

  TrainResult res;
  res.best_val = -1.0;
  std::vector<std::vector<float>> best = snapshot(model.store());
  Rng order_rng(detail::mix_seed(cfg.seed, 0x0bdfULL));

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto idx = shuffled_indices(train.size(), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
      const std::size_t end = std::min(idx.size(), start + cfg.batch);
      std::vector<const Tensor<float>*> imgs;
      std::vector<float> labels;
      for (std::size_t i = start; i < end; ++i) {
        imgs.push_back(&train[idx[i]].img);
        labels.push_back(train[idx[i]].label);
      }
      auto loss = binary_cross_entropy(model.forward(stack_images(imgs), true), labels);
      loss_sum += finite_loss(loss);
      ++batches;
      model.store().zero_grads();
      backward(loss);
      adam.step(trainable);
    }
    std::size_t correct = 0;
    for (const auto& s : val) {
      const float p = model.forward(s.img, false).item();
      correct += (p >= cfg.threshold) == (s.label > 0.5f);
    }
    const double acc = static_cast<double>(correct) / val.size();
    res.rows.push_back({epoch, loss_sum / batches, acc});
    if (acc > res.best_val) {
      res.best_val = acc;
      best = snapshot(model.store());
    }
  }
  restore(model.store(), best);

  fs::create_directories(cfg.out);
  res.checkpoint_path = default_ckpt(cfg);
  save_checkpoint(res.checkpoint_path, model.descriptor(), model.store());
  write_train_csv(cfg.out + "/train_discriminator.csv", "val_accuracy", res.rows);
  return res;
}

// combined name space for the temporal model so one checkpoint holds both the
// frozen trunk and the trained convLSTM head
ParamStore<float> temporal_store(PSPNetLSTM<float>& model) {
  ParamStore<float> s;
  for (auto& e : model.trunk_model().store().entries())
    s.add("trunk." + e.name, e.tensor, e.is_buffer);
  for (auto& e : model.store().entries()) s.add("temporal." + e.name, e.tensor, e.is_buffer);
  return s;
}

TrainResult train_temporal(const RunConfig& cfg, const PairSplits& data) {
  require(!cfg.base_checkpoint.empty(), ErrorClass::Config,
          "temporal training needs base_checkpoint (a trained pspnet)");
  auto desc = read_checkpoint_descriptor(cfg.base_checkpoint);
  require(desc.at("kind") == "pspnet", ErrorClass::State,
          "base_checkpoint is not a pspnet checkpoint");
  ModelConfig base_cfg = ModelConfig::from_json(desc.at("config"));
  PSPNet<float> base(base_cfg);
  load_checkpoint_into(cfg.base_checkpoint, base.store());

  ModelConfig lstm_cfg = base_cfg;
  lstm_cfg.seed = cfg.seed;
  PSPNetLSTM<float> model(base, lstm_cfg);
  auto combined = temporal_store(model);

  return train_segmenter_impl(
      cfg, model, combined, data, 150,
      [&](const std::vector<const PairSample*>& batch, bool) {
        std::vector<const Tensor<float>*> prev, cur;
        for (const auto* p : batch) {
          prev.push_back(&p->prev);
          cur.push_back(&p->cur);
        }
        return model.forward(stack_images(prev), stack_images(cur));
      });
}

}  // namespace

TrainResult train_model(const RunConfig& cfg) {
  cfg.validate_model();
  if (cfg.model == "discriminator") return train_discriminator(cfg);
  auto data = load_pairs(cfg);
  if (cfg.model == "unet") {
    UNetMini<float> model(model_config(cfg));
    return train_segmenter_impl(cfg, model, model.store(), data, 12,
                                [&](const std::vector<const PairSample*>& batch, bool) {
                                  std::vector<const Tensor<float>*> cur;
                                  for (const auto* p : batch) cur.push_back(&p->cur);
                                  return model.forward(stack_images(cur));
                                });
  }
  if (cfg.model == "pspnet") {
    PSPNet<float> model(model_config(cfg));
    return train_segmenter_impl(cfg, model, model.store(), data, 120,
                                [&](const std::vector<const PairSample*>& batch, bool train) {
                                  std::vector<const Tensor<float>*> cur;
                                  for (const auto* p : batch) cur.push_back(&p->cur);
                                  return model.forward(stack_images(cur), train);
                                });
  }
  return train_temporal(cfg, data);
}

namespace {

// a loaded segmenter behind one call shape
struct LoadedSegmenter {
  std::string kind;
  std::unique_ptr<UNetMini<float>> unet;
  std::unique_ptr<PSPNet<float>> pspnet;
  std::unique_ptr<PSPNet<float>> lstm_base;
  std::unique_ptr<PSPNetLSTM<float>> lstm;

  SegMask predict(const Tensor<float>& prev, const Tensor<float>& cur) const {
    if (unet) return argmax_mask(unet->forward(cur));
    if (pspnet) return argmax_mask(pspnet->forward(cur, false));
    return argmax_mask(lstm->forward(prev, cur));
  }
};

LoadedSegmenter load_segmenter(const std::string& path) {
  auto desc = read_checkpoint_descriptor(path);
  LoadedSegmenter m;
  m.kind = desc.at("kind");
  ModelConfig mc = ModelConfig::from_json(desc.at("config"));
  if (m.kind == "unet") {
    m.unet = std::make_unique<UNetMini<float>>(mc);
    load_checkpoint_into(path, m.unet->store());
  } else if (m.kind == "pspnet") {
    m.pspnet = std::make_unique<PSPNet<float>>(mc);
    load_checkpoint_into(path, m.pspnet->store());
  } else if (m.kind == "pspnet_lstm") {
    m.lstm_base = std::make_unique<PSPNet<float>>(mc);
    m.lstm = std::make_unique<PSPNetLSTM<float>>(*m.lstm_base, mc);
    auto combined = temporal_store(*m.lstm);
    load_checkpoint_into(path, combined);
  } else {
    throw Error(ErrorClass::State, "checkpoint " + path + " is not a segmenter");
  }
  return m;
}

}  // namespace

EvalResult eval_checkpoint(const RunConfig& cfg, const std::string& split) {
  require(!cfg.checkpoint.empty(), ErrorClass::Config, "checkpoint path not set");
  auto model = load_segmenter(cfg.checkpoint);
  auto data = load_pairs(cfg);
  const auto& samples = split == "train" ? data.train : split == "val" ? data.val : data.test;
  require(split == "train" || split == "val" || split == "test", ErrorClass::Config,
          "unknown split " + split);

  EvalResult res;
  res.cm = ConfusionMatrix(kNumClasses);
  for (const auto& p : samples)
    res.cm.merge(confusion_matrix(model.predict(p.prev, p.cur), p.cur_mask, kNumClasses));
  for (std::size_t c = 0; c < kNumClasses; ++c) res.iou.push_back(iou_class(res.cm, c));
  res.miou = mean_iou(res.cm);
  res.accuracy = pixel_accuracy(res.cm);

  fs::create_directories(cfg.out);
  res.csv_path = cfg.out + "/eval_" + model.kind + "_" + split + ".csv";
  std::ofstream os(res.csv_path, std::ios::trunc);
  require(bool(os), ErrorClass::Io, "cannot write " + res.csv_path);
  const char* names[4] = {"background", "slag", "camera_edge", "wall"};
  os << "class,iou\n";
  char buf[64];
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g\n", names[c], res.iou[c]);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "miou,%.9g\naccuracy,%.9g\n", res.miou, res.accuracy);
  os << buf;
  return res;
}

DiscEvalResult eval_discriminator(const RunConfig& cfg, const std::string& split) {
  require(!cfg.checkpoint.empty(), ErrorClass::Config, "checkpoint path not set");
  require(!cfg.data.empty(), ErrorClass::Config, "dataset directory not set");
  auto desc = read_checkpoint_descriptor(cfg.checkpoint);
  require(desc.at("kind") == "discriminator", ErrorClass::State,
          "checkpoint is not a discriminator");
  Discriminator<float> model(ModelConfig::from_json(desc.at("config")));
  load_checkpoint_into(cfg.checkpoint, model.store());

  const fs::path root(cfg.data);
  auto manifest = read_manifest((root / "disc_manifest.jsonl").string());
  std::vector<bool> pred, truth;
  for (const auto& r : manifest) {
    if (r.at("split") != split) continue;
    auto img = load_image_tensor((root / r.at("image").get<std::string>()).string());
    pred.push_back(model.forward(img, false).item() >= cfg.threshold);
    truth.push_back(r.at("occluded").get<bool>());
  }
  require(!pred.empty(), ErrorClass::State, "no discriminator frames in split " + split);

  DiscEvalResult res;
  res.frames = pred.size();
  std::tie(res.precision, res.recall) = precision_recall(pred, truth);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  res.accuracy = static_cast<double>(correct) / pred.size();

  fs::create_directories(cfg.out);
  res.csv_path = cfg.out + "/eval_discriminator_" + split + ".csv";
  std::ofstream os(res.csv_path, std::ios::trunc);
  require(bool(os), ErrorClass::Io, "cannot write " + res.csv_path);
  char buf[128];
  os << "metric,value\n";
  if (res.precision) {
    std::snprintf(buf, sizeof(buf), "precision,%.9g\n", *res.precision);
    os << buf;
  } else {
    os << "precision,\n";
  }
  std::snprintf(buf, sizeof(buf), "recall,%.9g\naccuracy,%.9g\nframes,%zu\n", res.recall,
                res.accuracy, res.frames);
  os << buf;
  return res;
}

void append_record(const std::string& path, const nlohmann::json& record) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  require(fd >= 0, ErrorClass::Io, "cannot open log " + path);
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw Error(ErrorClass::Io, "cannot lock log " + path);
  }
  const std::string line = record.dump() + "\n";
  const ssize_t n = ::write(fd, line.data(), line.size());
  ::flock(fd, LOCK_UN);
  ::close(fd);
  require(n == static_cast<ssize_t>(line.size()), ErrorClass::Io, "short write to log " + path);
}

std::vector<nlohmann::json> read_log(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorClass::Io, "cannot read log " + path);
  std::vector<nlohmann::json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorClass::Io, "corrupt log line " + std::to_string(line_no) + " in " + path);
    }
  }
  return records;
}

StreamResult run_stream(const RunConfig& cfg) {
  require(!cfg.stream.empty(), ErrorClass::Config, "stream manifest path not set");
  require(!cfg.disc_checkpoint.empty(), ErrorClass::Config, "disc_checkpoint not set");
  require(!cfg.checkpoint.empty(), ErrorClass::Config, "checkpoint (framewise segmenter) not set");
  auto manifest = read_manifest(cfg.stream);
  require(manifest.size() >= cfg.window, ErrorClass::State,
          "stream shorter than the monitor window");

  auto disc_desc = read_checkpoint_descriptor(cfg.disc_checkpoint);
  require(disc_desc.at("kind") == "discriminator", ErrorClass::State,
          "disc_checkpoint is not a discriminator");
  Discriminator<float> disc(ModelConfig::from_json(disc_desc.at("config")));
  load_checkpoint_into(cfg.disc_checkpoint, disc.store());

  struct StreamModel {
    std::string tag;
    LoadedSegmenter model;
    RunningVarianceMonitor monitor;
    std::vector<double> rvs;
    std::size_t frames = 0, outliers = 0;
    std::ofstream csv;
  };
  std::vector<std::unique_ptr<StreamModel>> models;
  fs::create_directories(cfg.out);
  auto add_model = [&](const std::string& path) {
    auto sm = std::make_unique<StreamModel>(
        StreamModel{"", load_segmenter(path), RunningVarianceMonitor(cfg.window), {}, 0, 0, {}});
    sm->tag = sm->model.kind == "pspnet_lstm" ? "temporal" : "framewise";
    sm->csv.open(cfg.out + "/stream_" + sm->tag + ".csv", std::ios::trunc);
    require(bool(sm->csv), ErrorClass::Io, "cannot write stream csv");
    sm->csv << "timestamp,frame_id,fraction_slag,running_variance\n";
    models.push_back(std::move(sm));
  };
  add_model(cfg.checkpoint);
  if (!cfg.temporal_checkpoint.empty()) add_model(cfg.temporal_checkpoint);

  const fs::path root = fs::path(cfg.stream).parent_path();
  const std::string log_path = cfg.effective_log();
  const std::string run = cfg.effective_run_id();

  StreamResult res;
  res.log_path = log_path;
  Tensor<float> prev_img;  // most recent unfiltered frame
  std::int64_t prev_id = -1;
  // forced gate leakage for stability experiments: every round(1/leak)-th
  // frame the discriminator would filter passes through instead
  const std::size_t leak_period =
      cfg.leak > 0.0 ? static_cast<std::size_t>(std::lround(1.0 / cfg.leak)) : 0;
  std::size_t gated = 0;

  for (const auto& r : manifest) {
    ++res.total_frames;
    const std::size_t frame_id = r.at("frame_id");
    const double timestamp = r.at("timestamp");
    auto img = load_image_tensor((root / r.at("image").get<std::string>()).string());
    const double occ_prob = disc.forward(img, false).item();
    const bool gate_filtered = occ_prob >= cfg.threshold;
    bool filtered = gate_filtered;
    if (filtered && leak_period && ++gated % leak_period == 0) filtered = false;
    res.filtered_frames += filtered;

    const double truth = r.at("truth_fraction");
    for (auto& sm : models) {
      nlohmann::json rec{{"run", run},
                         {"frame_id", frame_id},
                         {"timestamp", timestamp},
                         {"model", sm->tag},
                         {"occlusion_prob", occ_prob},
                         {"filtered", filtered},
                         {"truth_fraction", truth}};
      if (!filtered) {
        const Tensor<float>& p = prev_id < 0 ? img : prev_img;
        auto pred = sm->model.predict(p, img);
        const double frac =
            slag_fraction(pred, MonitorConfig{cfg.window, kClassSlag, pred.h, pred.w});
        rec["fraction"] = frac;
        rec["prev_frame_id"] = prev_id < 0 ? static_cast<std::int64_t>(frame_id) : prev_id;
        ++sm->frames;
        sm->outliers += std::abs(frac - truth) > cfg.tau;
        char num[96];
        if (auto rv = sm->monitor.push(frac)) {
          rec["running_variance"] = *rv;
          sm->rvs.push_back(*rv);
          std::snprintf(num, sizeof(num), "%.9g,%zu,%.9g,%.12g\n", timestamp, frame_id, frac,
                        *rv);
        } else {
          std::snprintf(num, sizeof(num), "%.9g,%zu,%.9g,\n", timestamp, frame_id, frac);
        }
        sm->csv << num;
      }
      append_record(log_path, rec);
    }
    // leaked frames never become I_{t-delta}: the gate verdict, not the
    // leak injection, decides which frames are trustworthy context
    if (!gate_filtered) {
      prev_img = img;
      prev_id = static_cast<std::int64_t>(frame_id);
    }
  }

  nlohmann::json summary{{"run", run},
                         {"total_frames", res.total_frames},
                         {"filtered_frames", res.filtered_frames},
                         {"window", cfg.window},
                         {"tau", cfg.tau},
                         {"models", nlohmann::json::array()}};
  for (auto& sm : models) {
    ModelSummary ms;
    ms.tag = sm->tag;
    ms.frames = sm->frames;
    ms.outliers = sm->outliers;
    ms.variance_points = sm->rvs.size();
    if (!sm->rvs.empty()) {
      std::vector<double> sorted = sm->rvs;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      ms.median_running_variance =
          n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
    res.models.push_back(ms);
    summary["models"].push_back({{"model", ms.tag},
                                 {"frames", ms.frames},
                                 {"outliers", ms.outliers},
                                 {"variance_points", ms.variance_points},
                                 {"median_running_variance", ms.median_running_variance}});
  }
  std::ofstream os(cfg.out + "/stream_summary.json", std::ios::trunc);
  require(bool(os), ErrorClass::Io, "cannot write stream summary");
  os << summary.dump(2) << "\n";
  return res;
}

std::vector<std::pair<std::string, double>> gradcheck_suite() {
  using D = double;
  std::vector<std::pair<std::string, double>> out;
  Rng rng(99);
  auto randt = [&](const Shape& s, bool req = true) {
    Tensor<D> t = Tensor<D>::zeros(s);
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    t.set_requires_grad(req);
    t.set_trainable(req);
    return t;
  };
  auto check = [&](const std::string& name, const std::function<Tensor<D>()>& f,
                   std::vector<Tensor<D>> params) {
    out.emplace_back(name, grad_check<D>(f, std::move(params), 1e-5));
  };

  {
    auto x = randt({1, 2, 6, 6});
    auto k = randt({3, 2, 3, 3});
    auto b = randt({3});
    check("conv2d", [&] { return sum_all(conv2d(x, k, b, 1, 1)); }, {x, k, b});
  }
  {
    auto x = randt({1, 3, 4, 4});
    auto k = randt({3, 2, 2, 2});
    check("transposed_conv2d", [&] { return sum_all(mul(transposed_conv2d(x, k, 2),
                                                        transposed_conv2d(x, k, 2))); },
          {x, k});
  }
  {
    auto x = randt({1, 2, 6, 6});
    check("max_pool2d", [&] { return sum_all(mul(max_pool2d(x, 2), max_pool2d(x, 2))); }, {x});
    check("adaptive_avg_pool2d",
          [&] { return sum_all(mul(adaptive_avg_pool2d(x, 3), adaptive_avg_pool2d(x, 3))); },
          {x});
    check("upsample_bilinear",
          [&] { return sum_all(mul(upsample_bilinear(x, 9, 9), upsample_bilinear(x, 9, 9))); },
          {x});
    check("relu", [&] { return sum_all(mul(relu(x), relu(x))); }, {x});
    check("sigmoid", [&] { return sum_all(mul(sigmoid(x), sigmoid(x))); }, {x});
    check("tanh", [&] { return sum_all(mul(tanh_op(x), tanh_op(x))); }, {x});
    check("softmax_channels",
          [&] { return sum_all(mul(softmax_channels(x), softmax_channels(x))); }, {x});
  }
  {
    auto x = randt({1, 4, 5, 5});
    auto gamma = randt({4});
    auto beta = randt({4});
    auto w = randt({1, 4, 5, 5}, false);
    check("batch_norm",
          [&] {
            BatchNormStats<D> stats;
            auto y = batch_norm(x, gamma, beta, stats, true);
            return sum_all(mul(sigmoid(y), w));
          },
          {x, gamma, beta});
  }
  {
    ParamStore<D> store;
    ConvLSTMCell<D> cell(store, "cell", 2, 3, 17);
    for (auto& e : store.entries())
      for (auto& v : e.tensor.data()) v = rng.uniform(-0.5, 0.5);
    auto x1 = randt({1, 2, 4, 4}, false);
    auto x2 = randt({1, 2, 4, 4}, false);
    auto w = randt({1, 3, 4, 4}, false);
    check("convlstm_step",
          [&] {
            auto s = cell.step(x2, cell.step(x1, cell.zero_state(1, 4, 4)));
            return sum_all(mul(s.h, w));
          },
          store.trainable());
  }
  {
    auto a = randt({1, 2, 4, 4});
    auto b = randt({1, 3, 4, 4});
    check("concat_channels",
          [&] {
            auto c = concat_channels(a, b);
            return sum_all(mul(c, c));
          },
          {a, b});
    check("slice_channels",
          [&] {
            auto c = slice_channels(b, 1, 2);
            return sum_all(mul(c, c));
          },
          {b});
  }
  {
    auto x = randt({3, 5});
    auto w = randt({5, 2});
    auto b = randt({2});
    check("dense", [&] { return sum_all(mul(dense(x, w, b), dense(x, w, b))); }, {x, w, b});
  }
  {
    auto logits = randt({1, 3, 4, 4});
    SegMask mask(4, 4);
    Rng mrng(7);
    for (auto& id : mask.ids) id = static_cast<std::uint8_t>(mrng.below(3));
    ClassWeightTable wt;
    wt.freq = {0.5, 0.3, 0.2};
    wt.weight = {1.0, 2.0, 3.0};
    std::vector<SegMask> masks{mask};
    auto probs = [&] { return softmax_channels(logits); };
    check("cross_entropy_loss", [&] { return cross_entropy_loss(probs(), masks, wt); },
          {logits});
    auto target = one_hot<D>(masks, 3);
    check("dice_loss", [&] { return dice_loss(probs(), target, wt); }, {logits});
    check("tanimoto_loss", [&] { return tanimoto_loss(probs(), target, wt); }, {logits});
  }
  {
    auto z = randt({4, 1});
    std::vector<D> labels{1, 0, 1, 0};
    check("binary_cross_entropy", [&] { return binary_cross_entropy(sigmoid(z), labels); },
          {z});
  }

  // full models at tiny size
  ModelConfig mc;
  mc.h = mc.w = 8;
  mc.in_channels = 2;
  mc.num_classes = 3;
  mc.base_filters = 2;
  mc.unet_depth = 2;
  mc.backbone_filters = 2;
  mc.pyramid_bins = {1, 2};
  mc.output_stride = 4;
  mc.seed = 21;

  SegMask mask(8, 8);
  Rng mrng(3);
  for (auto& id : mask.ids) id = static_cast<std::uint8_t>(mrng.below(3));
  std::vector<SegMask> masks{mask};
  ClassWeightTable wt;
  wt.freq = {0.4, 0.3, 0.3};
  wt.weight = {1.0, 1.0, 1.0};
  auto x = randt({1, 2, 8, 8}, false);

  {
    UNetMini<D> unet(mc);
    check("unet", [&] { return cross_entropy_loss(unet.forward(x), masks, wt); },
          unet.store().trainable());
  }
  {
    PSPNet<D> psp(mc);
    psp.forward(x, true);  // prime batch norm running stats, then check in eval mode
    check("pspnet", [&] { return cross_entropy_loss(psp.forward(x, false), masks, wt); },
          psp.store().trainable());
  }
  {
    PSPNet<D> base(mc);
    base.forward(x, true);
    PSPNetLSTM<D> lstm(base, mc);
    auto x2 = randt({1, 2, 8, 8}, false);
    check("pspnet_lstm", [&] { return cross_entropy_loss(lstm.forward(x2, x), masks, wt); },
          lstm.store().trainable());
  }
  {
    ModelConfig dc = mc;
    dc.dropout = 0.0;
    Discriminator<D> disc(dc);
    disc.forward(x, true);
    std::vector<D> labels{1};
    check("discriminator", [&] { return binary_cross_entropy(disc.forward(x, false), labels); },
          disc.store().trainable());
  }
  return out;
}

}  // namespace kseg

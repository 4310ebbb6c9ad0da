#pragma once

// The three segmentation networks and the occlusion discriminator, built on
// the autodiff core. Parameters and running statistics are registered in a
// ParamStore so checkpointing and freezing can work by name.

#include <json.hpp>

#include "init.hpp"
#include "metrics.hpp"
#include "nn_ops.hpp"

namespace kseg {

struct ModelConfig {
  std::size_t h = 64, w = 64;
  std::size_t in_channels = 3;
  std::size_t num_classes = 4;
  std::size_t base_filters = 4;       // U-Net first-stage filters (64/16)
  std::size_t unet_depth = 3;         // number of down-steps
  std::size_t backbone_filters = 8;   // backbone stem channels
  std::size_t blocks_per_stage = 1;   // residual blocks per backbone stage
  std::vector<std::size_t> pyramid_bins{1, 2, 3, 6};
  std::size_t lstm_hidden = 0;        // 0 = trunk output channels
  std::size_t output_stride = 8;
  double dropout = 0.25;              // discriminator blocks
  std::uint64_t seed = 0;

  void validate() const {
    require(num_classes >= 2, ErrorClass::Config, "num_classes must be >= 2");
    require(base_filters >= 1, ErrorClass::Config, "base_filters must be >= 1");
    for (std::size_t i = 1; i < pyramid_bins.size(); ++i)
      require(pyramid_bins[i] > pyramid_bins[i - 1], ErrorClass::Config,
              "pyramid_bins must be strictly increasing");
    require((output_stride & (output_stride - 1)) == 0 && output_stride >= 2,
            ErrorClass::Config, "output_stride must be a power of two");
  }

  nlohmann::json to_json() const {
    return {{"h", h},
            {"w", w},
            {"in_channels", in_channels},
            {"num_classes", num_classes},
            {"base_filters", base_filters},
            {"unet_depth", unet_depth},
            {"backbone_filters", backbone_filters},
            {"blocks_per_stage", blocks_per_stage},
            {"pyramid_bins", pyramid_bins},
            {"lstm_hidden", lstm_hidden},
            {"output_stride", output_stride},
            {"dropout", dropout},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.h = j.at("h");
    c.w = j.at("w");
    c.in_channels = j.at("in_channels");
    c.num_classes = j.at("num_classes");
    c.base_filters = j.at("base_filters");
    c.unet_depth = j.at("unet_depth");
    c.backbone_filters = j.at("backbone_filters");
    c.blocks_per_stage = j.at("blocks_per_stage");
    c.pyramid_bins = j.at("pyramid_bins").get<std::vector<std::size_t>>();
    c.lstm_hidden = j.at("lstm_hidden");
    c.output_stride = j.at("output_stride");
    c.dropout = j.at("dropout");
    c.seed = j.at("seed");
    return c;
  }
};

template <class T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool is_buffer = false;  // running statistics, saved but never trained
};

template <class T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t, bool is_buffer = false) {
    for (const auto& e : entries_)
      require(e.name != name, ErrorClass::State, "duplicate parameter name " + name);
    if (is_buffer) {
      t.set_requires_grad(false);
      t.set_trainable(false);
    }
    entries_.push_back({name, t, is_buffer});
    return t;
  }

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::vector<ParamEntry<T>>& entries() { return entries_; }

  Tensor<T> get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.tensor;
    throw Error(ErrorClass::State, "no parameter named " + name);
  }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_)
      if (!e.is_buffer && e.tensor.trainable()) out.push_back(e.tensor);
    return out;
  }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (!e.is_buffer) n += e.tensor.size();
    return n;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

// ---- layers -----------------------------------------------------------------

template <class T>
struct ConvLayer {
  Tensor<T> w, b;
  std::size_t stride = 1, pad = 0, dil = 1;

  ConvLayer() = default;
  ConvLayer(ParamStore<T>& store, const std::string& name, std::size_t oc, std::size_t ic,
            std::size_t k, std::uint64_t seed, std::size_t stride_ = 1, std::size_t pad_ = 0,
            std::size_t dil_ = 1)
      : stride(stride_), pad(pad_), dil(dil_) {
    w = store.add(name + ".w", init_params<T>({oc, ic, k, k}, InitScheme::He, seed));
    b = store.add(name + ".b", init_params<T>({oc}, InitScheme::Zeros, seed + 1));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad, dil); }
};

template <class T>
struct BNLayer {
  Tensor<T> gamma, beta, run_mean, run_var;

  BNLayer() = default;
  BNLayer(ParamStore<T>& store, const std::string& name, std::size_t c) {
    gamma = store.add(name + ".gamma", init_params<T>({c}, InitScheme::Constant, 0, T(1)));
    beta = store.add(name + ".beta", init_params<T>({c}, InitScheme::Zeros, 0));
    run_mean = store.add(name + ".run_mean", init_params<T>({c}, InitScheme::Zeros, 0), true);
    run_var = store.add(name + ".run_var", init_params<T>({c}, InitScheme::Constant, 0, T(1)),
                        true);
  }

  Tensor<T> operator()(const Tensor<T>& x, bool train) const {
    BatchNormStats<T> stats;
    stats.mean = run_mean.data();
    stats.var = run_var.data();
    stats.initialized = true;
    auto y = batch_norm(x, gamma, beta, stats, train);
    if (train) {
      const_cast<std::vector<T>&>(run_mean.data()) = stats.mean;
      const_cast<std::vector<T>&>(run_var.data()) = stats.var;
    }
    return y;
  }
};

// Residual block: conv-BN-ReLU-conv-BN plus (projected) shortcut, then ReLU.
template <class T>
struct ResidualBlock {
  ConvLayer<T> conv1, conv2, proj;
  BNLayer<T> bn1, bn2, bn_proj;
  bool has_proj = false;

  ResidualBlock() = default;
  ResidualBlock(ParamStore<T>& store, const std::string& name, std::size_t in_c,
                std::size_t out_c, std::size_t stride, std::size_t dil, std::uint64_t seed) {
    conv1 = ConvLayer<T>(store, name + ".conv1", out_c, in_c, 3, seed, stride, dil, dil);
    bn1 = BNLayer<T>(store, name + ".bn1", out_c);
    conv2 = ConvLayer<T>(store, name + ".conv2", out_c, out_c, 3, seed + 2, 1, dil, dil);
    bn2 = BNLayer<T>(store, name + ".bn2", out_c);
    if (in_c != out_c || stride != 1) {
      has_proj = true;
      proj = ConvLayer<T>(store, name + ".proj", out_c, in_c, 1, seed + 4, stride, 0, 1);
      bn_proj = BNLayer<T>(store, name + ".bn_proj", out_c);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, bool train) const {
    auto y = bn2(conv2(relu(bn1(conv1(x), train))), train);
    auto shortcut = has_proj ? bn_proj(proj(x), train) : x;
    return relu(add(y, shortcut));
  }
};

// ---- U-Net-mini -------------------------------------------------------------

template <class T>
class UNetMini {
 public:
  explicit UNetMini(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t div = std::size_t(1) << cfg_.unet_depth;
    require(cfg_.h % div == 0 && cfg_.w % div == 0, ErrorClass::Config,
            "input size must be divisible by 2^depth");
    std::uint64_t s = 0;
    auto seed = [&] { return detail::mix_seed(cfg_.seed, s++); };

    std::size_t in_c = cfg_.in_channels;
    for (std::size_t d = 0; d < cfg_.unet_depth; ++d) {
      const std::size_t f = cfg_.base_filters << d;
      enc_.push_back({ConvLayer<T>(store_, "enc" + std::to_string(d) + ".c1", f, in_c, 3,
                                   seed(), 1, 1),
                      ConvLayer<T>(store_, "enc" + std::to_string(d) + ".c2", f, f, 3, seed(),
                                   1, 1)});
      in_c = f;
    }
    const std::size_t bf = cfg_.base_filters << cfg_.unet_depth;
    bottleneck_ = {ConvLayer<T>(store_, "bottleneck.c1", bf, in_c, 3, seed(), 1, 1),
                   ConvLayer<T>(store_, "bottleneck.c2", bf, bf, 3, seed(), 1, 1)};
    for (std::size_t d = cfg_.unet_depth; d-- > 0;) {
      const std::size_t f = cfg_.base_filters << d;
      const std::size_t up_in = cfg_.base_filters << (d + 1);
      // transposed kernels are laid out [IC,OC,KH,KW]
      Tensor<T> upk = store_.add("dec" + std::to_string(d) + ".up",
                                 init_params<T>({up_in, f, 2, 2}, InitScheme::He, seed()));
      dec_.push_back({upk,
                      ConvLayer<T>(store_, "dec" + std::to_string(d) + ".c1", f, 2 * f, 3,
                                   seed(), 1, 1),
                      ConvLayer<T>(store_, "dec" + std::to_string(d) + ".c2", f, f, 3, seed(),
                                   1, 1)});
    }
    head_ = ConvLayer<T>(store_, "head", cfg_.num_classes, cfg_.base_filters, 1, seed());
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    require(x.shape().size() == 4 && x.shape()[2] == cfg_.h && x.shape()[3] == cfg_.w,
            ErrorClass::Shape, "unet: input size mismatch");
    std::vector<Tensor<T>> skips;
    Tensor<T> cur = x;
    for (const auto& e : enc_) {
      cur = relu(e.c2(relu(e.c1(cur))));
      skips.push_back(cur);
      cur = max_pool2d(cur, 2);
    }
    cur = relu(bottleneck_.c2(relu(bottleneck_.c1(cur))));
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      cur = transposed_conv2d(cur, dec_[i].up, 2);
      cur = concat_channels(skips[skips.size() - 1 - i], cur);
      cur = relu(dec_[i].c2(relu(dec_[i].c1(cur))));
    }
    return softmax_channels(head_(cur));
  }

  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

  nlohmann::json descriptor() const {
    return {{"kind", "unet"}, {"config", cfg_.to_json()}};
  }

 private:
  struct EncStage {
    ConvLayer<T> c1, c2;
  };
  struct DecStage {
    Tensor<T> up;
    ConvLayer<T> c1, c2;
  };
  ModelConfig cfg_;
  ParamStore<T> store_;
  std::vector<EncStage> enc_;
  EncStage bottleneck_;
  std::vector<DecStage> dec_;
  ConvLayer<T> head_;
};

// ---- dilated backbone + PSPNet ----------------------------------------------

template <class T>
class PSPNet {
 public:
  explicit PSPNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    require(cfg_.h % cfg_.output_stride == 0 && cfg_.w % cfg_.output_stride == 0,
            ErrorClass::Config, "input size must be divisible by output_stride");
    std::uint64_t s = 1000;
    auto seed = [&] { return detail::mix_seed(cfg_.seed, s++); };

    const std::size_t c0 = cfg_.backbone_filters;
    trunk_c_ = 2 * c0;
    stem_ = ConvLayer<T>(store_, "stem", c0, cfg_.in_channels, 3, seed(), 2, 1);
    stem_bn_ = BNLayer<T>(store_, "stem_bn", c0);

    // Stages downsample until the cumulative stride reaches output_stride,
    // then trade stride for dilation (2, then 4, ...).
    const std::size_t stage_channels[4] = {c0, trunk_c_, trunk_c_, trunk_c_};
    std::size_t cum_stride = 2, dil = 1, in_c = c0;
    for (std::size_t st = 0; st < 4; ++st) {
      std::size_t stride = 1;
      if (st > 0) {
        if (cum_stride * 2 <= cfg_.output_stride) {
          stride = 2;
          cum_stride *= 2;
        } else {
          dil *= 2;
        }
      }
      for (std::size_t blk = 0; blk < cfg_.blocks_per_stage; ++blk) {
        const std::string name = "stage" + std::to_string(st) + ".block" + std::to_string(blk);
        blocks_.emplace_back(store_, name, in_c, stage_channels[st],
                             blk == 0 ? stride : 1, dil, seed());
        block_dilation_.push_back(dil);
        in_c = stage_channels[st];
      }
    }

    const std::size_t nb = cfg_.pyramid_bins.size();
    require(trunk_c_ % nb == 0, ErrorClass::Config,
            "trunk channels must be divisible by the number of pyramid bins");
    const std::size_t fh = cfg_.h / cfg_.output_stride;
    require(cfg_.pyramid_bins.back() <= fh && cfg_.pyramid_bins.back() <= cfg_.w / cfg_.output_stride,
            ErrorClass::Config, "pyramid bin exceeds backbone feature-map extent");
    for (std::size_t i = 0; i < nb; ++i)
      pyramid_convs_.push_back(ConvLayer<T>(store_, "pyramid" + std::to_string(i), trunk_c_ / nb,
                                            trunk_c_, 1, seed()));
    fuse_ = ConvLayer<T>(store_, "fuse", trunk_c_, 2 * trunk_c_, 3, seed(), 1, 1);
    head_ = ConvLayer<T>(store_, "head", cfg_.num_classes, trunk_c_, 1, seed());
  }

  Tensor<T> backbone(const Tensor<T>& x, bool train) const {
    Tensor<T> cur = relu(stem_bn_(stem_(x), train));
    for (const auto& b : blocks_) cur = b(cur, train);
    return cur;
  }

  Tensor<T> pyramid_pooling(const Tensor<T>& features, bool /*train*/) const {
    std::vector<Tensor<T>> parts{features};
    const std::size_t fh = features.shape()[2], fw = features.shape()[3];
    for (std::size_t i = 0; i < cfg_.pyramid_bins.size(); ++i) {
      auto pooled = adaptive_avg_pool2d(features, cfg_.pyramid_bins[i]);
      parts.push_back(upsample_bilinear(pyramid_convs_[i](pooled), fh, fw));
    }
    return concat_channels(parts);
  }

  // Backbone + pyramid pooling + fuse conv: everything the LSTM variant shares.
  Tensor<T> trunk(const Tensor<T>& x, bool train) const {
    return relu(fuse_(pyramid_pooling(backbone(x, train), train)));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train = false) const {
    require(x.shape()[2] == cfg_.h && x.shape()[3] == cfg_.w, ErrorClass::Shape,
            "pspnet: input size mismatch");
    auto logits = upsample_bilinear(head_(trunk(x, train)), cfg_.h, cfg_.w);
    return softmax_channels(logits);
  }

  std::size_t trunk_channels() const { return trunk_c_; }
  const std::vector<std::size_t>& block_dilations() const { return block_dilation_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

  nlohmann::json descriptor() const {
    return {{"kind", "pspnet"}, {"config", cfg_.to_json()}};
  }

 private:
  template <class U>
  friend class PSPNetLSTM;

  ModelConfig cfg_;
  ParamStore<T> store_;
  ConvLayer<T> stem_;
  BNLayer<T> stem_bn_;
  std::vector<ResidualBlock<T>> blocks_;
  std::vector<std::size_t> block_dilation_;
  std::vector<ConvLayer<T>> pyramid_convs_;
  ConvLayer<T> fuse_;
  ConvLayer<T> head_;
  std::size_t trunk_c_ = 0;
};

// ---- convLSTM ---------------------------------------------------------------

template <class T>
struct ConvLSTMState {
  Tensor<T> h, c;
};

// Standard peephole-free convLSTM cell with 3x3 zero-padded gate convolutions.
template <class T>
struct ConvLSTMCell {
  // per gate: input conv, hidden conv, bias
  ConvLayer<T> wxi, whi, wxf, whf, wxo, who, wxg, whg;
  Tensor<T> bi, bf, bo, bg;
  std::size_t hidden = 0;

  ConvLSTMCell() = default;
  ConvLSTMCell(ParamStore<T>& store, const std::string& name, std::size_t in_c,
               std::size_t hidden_c, std::uint64_t seed) : hidden(hidden_c) {
    auto gate_conv = [&](const std::string& g, std::size_t ic, std::uint64_t s) {
      ConvLayer<T> c;
      c.w = store.add(name + "." + g + ".w", init_params<T>({hidden_c, ic, 3, 3}, InitScheme::He, s));
      c.stride = 1;
      c.pad = 1;
      return c;
    };
    std::uint64_t s = seed;
    wxi = gate_conv("wxi", in_c, s++);
    whi = gate_conv("whi", hidden_c, s++);
    wxf = gate_conv("wxf", in_c, s++);
    whf = gate_conv("whf", hidden_c, s++);
    wxo = gate_conv("wxo", in_c, s++);
    who = gate_conv("who", hidden_c, s++);
    wxg = gate_conv("wxg", in_c, s++);
    whg = gate_conv("whg", hidden_c, s++);
    bi = store.add(name + ".bi", init_params<T>({hidden_c}, InitScheme::Zeros, 0));
    // forget gate biased open so the cell starts out carrying state forward
    bf = store.add(name + ".bf", init_params<T>({hidden_c}, InitScheme::Constant, 0, T(1)));
    bo = store.add(name + ".bo", init_params<T>({hidden_c}, InitScheme::Zeros, 0));
    bg = store.add(name + ".bg", init_params<T>({hidden_c}, InitScheme::Zeros, 0));
  }

  ConvLSTMState<T> step(const Tensor<T>& x, const ConvLSTMState<T>& state) const {
    require(x.shape()[2] == state.h.shape()[2] && x.shape()[3] == state.h.shape()[3],
            ErrorClass::Shape, "convlstm: spatial extent mismatch between input and state");
    auto biased = [&](const Tensor<T>& pre, const Tensor<T>& bias) {
      return add(pre, broadcast_bias(bias, pre.shape()));
    };
    auto i = sigmoid(biased(add(conv_nobias(wxi, x), conv_nobias(whi, state.h)), bi));
    auto f = sigmoid(biased(add(conv_nobias(wxf, x), conv_nobias(whf, state.h)), bf));
    auto o = sigmoid(biased(add(conv_nobias(wxo, x), conv_nobias(who, state.h)), bo));
    auto g = tanh_op(biased(add(conv_nobias(wxg, x), conv_nobias(whg, state.h)), bg));
    auto c_next = add(mul(f, state.c), mul(i, g));
    auto h_next = mul(o, tanh_op(c_next));
    return {h_next, c_next};
  }

  ConvLSTMState<T> zero_state(std::size_t n, std::size_t h, std::size_t w) const {
    return {Tensor<T>::zeros({n, hidden, h, w}), Tensor<T>::zeros({n, hidden, h, w})};
  }

 private:
  static Tensor<T> conv_nobias(const ConvLayer<T>& c, const Tensor<T>& x) {
    return conv2d(x, c.w, Tensor<T>(), c.stride, c.pad, c.dil);
  }

  static Tensor<T> broadcast_bias(const Tensor<T>& bias, const Shape& shape) {
    const std::size_t N = shape[0], C = shape[1], HW = shape[2] * shape[3];
    require(bias.size() == C, ErrorClass::Shape, "bias broadcast: channel mismatch");
    auto n = detail::make_op_node<T>(shape, {bias.node()});
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::fill(n->val.begin() + (b * C + c) * HW, n->val.begin() + (b * C + c + 1) * HW,
                  bias.data()[c]);
    auto nb = bias.node();
    Node<T>* self = n.get();
    n->backprop = [self, nb, N, C, HW] {
      if (!nb->requires_grad) return;
      nb->ensure_grad();
      for (std::size_t b = 0; b < N; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          T acc = 0;
          const T* g = self->grad.data() + (b * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) acc += g[i];
          nb->grad[c] += acc;
        }
    };
    return Tensor<T>(n);
  }
};

// PSPNet with the final 1x1 conv replaced by a two-cell shared-weight convLSTM.
// The trunk is a frozen copy of a trained PSPNet.
template <class T>
class PSPNetLSTM {
 public:
  PSPNetLSTM(const PSPNet<T>& base, ModelConfig cfg) : cfg_(std::move(cfg)), trunk_(cfg_) {
    // copy trunk weights bit-exactly and freeze everything except head
    auto& dst = trunk_.store().entries();
    const auto& src = base.store().entries();
    require(dst.size() == src.size(), ErrorClass::State,
            "lstm variant: base architecture incompatible with config");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      require(dst[i].name == src[i].name && dst[i].tensor.shape() == src[i].tensor.shape(),
              ErrorClass::State, "lstm variant: base architecture incompatible with config");
      dst[i].tensor.data() = src[i].tensor.data();
      dst[i].tensor.set_requires_grad(false);
      dst[i].tensor.set_trainable(false);
    }
    hidden_ = cfg_.lstm_hidden ? cfg_.lstm_hidden : trunk_.trunk_channels();
    std::uint64_t s = 5000;
    cell_ = ConvLSTMCell<T>(store_, "convlstm", trunk_.trunk_channels(), hidden_,
                            detail::mix_seed(cfg_.seed, s));
    head_ = ConvLayer<T>(store_, "lstm_head", cfg_.num_classes, hidden_, 1,
                         detail::mix_seed(cfg_.seed, s + 100));
  }

  // prev = I_{t-delta}, cur = I_t; both pass through the identical trunk.
  Tensor<T> forward(const Tensor<T>& prev, const Tensor<T>& cur) const {
    require(prev.shape() == cur.shape(), ErrorClass::Shape,
            "pspnet-lstm: frame pair sizes differ");
    auto f_prev = trunk_.trunk(prev, false);
    auto f_cur = trunk_.trunk(cur, false);
    auto s0 = cell_.zero_state(f_prev.shape()[0], f_prev.shape()[2], f_prev.shape()[3]);
    auto s1 = cell_.step(f_prev, s0);
    auto s2 = cell_.step(f_cur, s1);
    auto logits = upsample_bilinear(head_(s2.h), cfg_.h, cfg_.w);
    return softmax_channels(logits);
  }

  Tensor<T> trunk_features(const Tensor<T>& x) const { return trunk_.trunk(x, false); }

  const ConvLSTMCell<T>& cell() const { return cell_; }
  ConvLSTMCell<T>& cell() { return cell_; }
  PSPNet<T>& trunk_model() { return trunk_; }
  const PSPNet<T>& trunk_model() const { return trunk_; }
  // trainable store: convLSTM + head only
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  std::size_t hidden_channels() const { return hidden_; }

  nlohmann::json descriptor() const {
    return {{"kind", "pspnet_lstm"}, {"config", cfg_.to_json()}};
  }

 private:
  ModelConfig cfg_;
  PSPNet<T> trunk_;
  ParamStore<T> store_;
  ConvLSTMCell<T> cell_;
  ConvLayer<T> head_;
  std::size_t hidden_ = 0;
};

// ---- occlusion discriminator --------------------------------------------------

template <class T>
class Discriminator {
 public:
  explicit Discriminator(ModelConfig cfg) : cfg_(std::move(cfg)), dropout_rng_(cfg_.seed) {
    cfg_.validate();
    require(cfg_.h % 8 == 0 && cfg_.w % 8 == 0 && cfg_.h >= 8 && cfg_.w >= 8,
            ErrorClass::Config, "input too small for three pooling stages");
    std::uint64_t s = 9000;
    auto seed = [&] { return detail::mix_seed(cfg_.seed, s++); };
    const std::size_t chans[3] = {8, 16, 32};
    std::size_t in_c = cfg_.in_channels;
    for (std::size_t blk = 0; blk < 3; ++blk) {
      const std::string n = "block" + std::to_string(blk);
      blocks_.push_back({ConvLayer<T>(store_, n + ".c1", chans[blk], in_c, 3, seed(), 1, 1),
                         BNLayer<T>(store_, n + ".bn1", chans[blk]),
                         ConvLayer<T>(store_, n + ".c2", chans[blk], chans[blk], 3, seed(), 1, 1),
                         BNLayer<T>(store_, n + ".bn2", chans[blk])});
      in_c = chans[blk];
    }
    feat_ = in_c * (cfg_.h / 8) * (cfg_.w / 8);
    dense_w_ = store_.add("dense.w", init_params<T>({feat_, 1}, InitScheme::Glorot, seed()));
    dense_b_ = store_.add("dense.b", init_params<T>({1}, InitScheme::Zeros, 0));
  }

  // [N,3,H,W] -> [N,1] occlusion probabilities; dropout active only in training.
  Tensor<T> forward(const Tensor<T>& x, bool train = false) {
    require(x.shape()[2] == cfg_.h && x.shape()[3] == cfg_.w, ErrorClass::Shape,
            "discriminator: input size mismatch");
    Tensor<T> cur = x;
    for (auto& b : blocks_) {
      cur = relu(b.bn1(b.c1(cur), train));
      cur = relu(b.bn2(b.c2(cur), train));
      cur = max_pool2d(cur, 2);
      cur = dropout(cur, static_cast<T>(cfg_.dropout), dropout_rng_, train);
    }
    cur = reshape(cur, {x.shape()[0], feat_});
    return sigmoid(dense(cur, dense_w_, dense_b_));
  }

  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

  nlohmann::json descriptor() const {
    nlohmann::json layers = nlohmann::json::array();
    for (int blk = 0; blk < 3; ++blk) {
      layers.push_back("conv");
      layers.push_back("conv");
      layers.push_back("max_pool");
      layers.push_back("dropout");
    }
    layers.push_back("dense");
    return {{"kind", "discriminator"}, {"config", cfg_.to_json()}, {"layers", layers}};
  }

 private:
  struct Block {
    ConvLayer<T> c1;
    BNLayer<T> bn1;
    ConvLayer<T> c2;
    BNLayer<T> bn2;
  };
  ModelConfig cfg_;
  ParamStore<T> store_;
  std::vector<Block> blocks_;
  Tensor<T> dense_w_, dense_b_;
  std::size_t feat_ = 0;
  Rng dropout_rng_;
};

// Per-pixel argmax decoding of a probability map, batch item b.
template <class T>
SegMask argmax_mask(const Tensor<T>& probs, std::size_t b = 0) {
  const std::size_t C = probs.shape()[1], H = probs.shape()[2], W = probs.shape()[3];
  SegMask m(H, W);
  for (std::size_t i = 0; i < H * W; ++i) {
    std::size_t best = 0;
    T bv = probs.data()[(b * C) * H * W + i];
    for (std::size_t c = 1; c < C; ++c) {
      const T v = probs.data()[(b * C + c) * H * W + i];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    m.ids[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

}  // namespace kseg

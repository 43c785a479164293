#ifndef MIR_MODELS_CNN_LSTM_HPP
#define MIR_MODELS_CNN_LSTM_HPP

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mir/engine/param.hpp"
#include "mir/engine/tape.hpp"
#include "mir/models/init.hpp"
#include "mir/rng.hpp"
#include "mir/tensor.hpp"

namespace mir::models {

// Batch-norm running-average update weight and variance floor shared by both
// models' normalization layers.
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kLnEpsilon = 1e-5;

// Signal classifier: two conv blocks (conv -> batchnorm -> maxpool -> dropout),
// two stacked LSTMs returning full sequences, flatten, hidden dense, dropout,
// softmax output. Filter counts 64/128 follow the source architecture; kernel
// size, pooling, LSTM width, and hidden width are config defaults.
struct CnnLstmConfig {
  std::int64_t input_length = 100;
  std::int64_t input_channels = 4;
  std::int64_t num_classes = 8;
  std::int64_t conv_filters1 = 64;
  std::int64_t conv_filters2 = 128;
  std::int64_t kernel_size = 3;
  std::int64_t pool_window = 2;
  std::int64_t pool_stride = 2;
  std::int64_t lstm_units = 64;
  std::int64_t hidden_dense = 64;
  double dropout_rate = 0.4;
};

inline void to_json(nlohmann::json& j, const CnnLstmConfig& c) {
  j = nlohmann::json{{"model", "cnn_lstm"},
                     {"input_length", c.input_length},
                     {"input_channels", c.input_channels},
                     {"num_classes", c.num_classes},
                     {"conv_filters1", c.conv_filters1},
                     {"conv_filters2", c.conv_filters2},
                     {"kernel_size", c.kernel_size},
                     {"pool_window", c.pool_window},
                     {"pool_stride", c.pool_stride},
                     {"lstm_units", c.lstm_units},
                     {"hidden_dense", c.hidden_dense},
                     {"dropout_rate", c.dropout_rate}};
}

// Strict parse: `bad` is raised for a wrong/missing model tag or unknown keys,
// so config typos never silently fall back to defaults.
inline CnnLstmConfig cnn_lstm_config_from_json(const nlohmann::json& j,
                                               Err bad = Err::ConfigMismatch) {
  require(j.is_object() && j.value("model", std::string()) == "cnn_lstm", bad,
          "expected a cnn_lstm model config");
  static const std::set<std::string> allowed = {
      "model",       "input_length", "input_channels", "num_classes",
      "conv_filters1", "conv_filters2", "kernel_size",  "pool_window",
      "pool_stride", "lstm_units",   "hidden_dense",   "dropout_rate"};
  for (const auto& item : j.items())
    require(allowed.count(item.key()) > 0, bad,
            "unknown cnn_lstm config key '" + item.key() + "'");
  CnnLstmConfig c;
  c.input_length = j.value("input_length", c.input_length);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.conv_filters1 = j.value("conv_filters1", c.conv_filters1);
  c.conv_filters2 = j.value("conv_filters2", c.conv_filters2);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.pool_window = j.value("pool_window", c.pool_window);
  c.pool_stride = j.value("pool_stride", c.pool_stride);
  c.lstm_units = j.value("lstm_units", c.lstm_units);
  c.hidden_dense = j.value("hidden_dense", c.hidden_dense);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  return c;
}

template <class T>
class CnnLstmModelT {
 public:
  using Tape = engine::TapeT<T>;
  using Ref = typename Tape::Ref;

  CnnLstmConfig cfg;
  engine::ParamStore<T> params;
  engine::BnStats<T> bn1;
  engine::BnStats<T> bn2;

  CnnLstmModelT(const CnnLstmConfig& c, std::uint64_t seed)
      : cfg(c), bn1(c.conv_filters1), bn2(c.conv_filters2) {
    require(cfg.input_length >= 1 && cfg.input_channels >= 1 && cfg.num_classes >= 1 &&
                cfg.conv_filters1 >= 1 && cfg.conv_filters2 >= 1 && cfg.kernel_size >= 1 &&
                cfg.pool_window >= 1 && cfg.pool_stride >= 1 && cfg.lstm_units >= 1 &&
                cfg.hidden_dense >= 1,
            Err::ShapeMismatch, "cnn_lstm: config dimensions must be positive");
    const std::int64_t k = cfg.kernel_size;
    add_glorot(params, "conv1.w", {k, cfg.input_channels, cfg.conv_filters1},
               k * cfg.input_channels, k * cfg.conv_filters1, seed);
    add_zeros(params, "conv1.b", {cfg.conv_filters1});
    add_ones(params, "bn1.gamma", {cfg.conv_filters1});
    add_zeros(params, "bn1.beta", {cfg.conv_filters1});
    add_glorot(params, "conv2.w", {k, cfg.conv_filters1, cfg.conv_filters2},
               k * cfg.conv_filters1, k * cfg.conv_filters2, seed);
    add_zeros(params, "conv2.b", {cfg.conv_filters2});
    add_ones(params, "bn2.gamma", {cfg.conv_filters2});
    add_zeros(params, "bn2.beta", {cfg.conv_filters2});
    const std::int64_t h = cfg.lstm_units;
    add_lstm("lstm1", cfg.conv_filters2, h, seed);
    add_lstm("lstm2", h, h, seed);
    const std::int64_t flat = seq_length() * h;
    add_glorot(params, "dense1.w", {flat, cfg.hidden_dense}, flat, cfg.hidden_dense, seed);
    add_zeros(params, "dense1.b", {cfg.hidden_dense});
    add_glorot(params, "out.w", {cfg.hidden_dense, cfg.num_classes}, cfg.hidden_dense,
               cfg.num_classes, seed);
    add_zeros(params, "out.b", {cfg.num_classes});
  }

  // Sequence length that reaches the LSTMs: both convs use Same padding, each
  // pool divides the length by its stride (floor of the valid-window count).
  std::int64_t seq_length() const {
    std::int64_t l = cfg.input_length;
    l = (l - cfg.pool_window) / cfg.pool_stride + 1;
    l = (l - cfg.pool_window) / cfg.pool_stride + 1;
    return l;
  }

  // x [B, input_length, input_channels] -> probabilities [B, num_classes].
  // `l2_refs`, when supplied, receives the tape refs of the regularized
  // parameters (conv kernels and LSTM kernel/recurrent weights).
  Ref forward(Tape& t, Ref x, engine::Mode mode, std::uint64_t seed,
              std::vector<Ref>* l2_refs = nullptr) {
    const auto& vx = t.val(x);
    require(vx.rank() == 3 && vx.dim(1) == cfg.input_length && vx.dim(2) == cfg.input_channels,
            Err::ShapeMismatch, "cnn_lstm: expected input [B," +
                                    std::to_string(cfg.input_length) + "," +
                                    std::to_string(cfg.input_channels) + "], got " +
                                    shape_str(vx.shape));
    const std::int64_t b = vx.dim(0);
    auto P = [&](const char* name) { return t.param(params.get(name)); };
    auto reg = [&](Ref r) {
      if (l2_refs) l2_refs->push_back(r);
      return r;
    };
    const T rate = static_cast<T>(cfg.dropout_rate);

    Ref h = t.conv1d(x, reg(P("conv1.w")), P("conv1.b"), 1, engine::Padding::Same);
    h = t.batchnorm1d(h, P("bn1.gamma"), P("bn1.beta"), bn1, mode, static_cast<T>(kBnMomentum),
                      static_cast<T>(kBnEpsilon));
    h = t.maxpool1d(h, cfg.pool_window, cfg.pool_stride);
    h = t.dropout(h, rate, mode, derive_seed(seed, tag_hash("drop1")));

    h = t.conv1d(h, reg(P("conv2.w")), P("conv2.b"), 1, engine::Padding::Same);
    h = t.batchnorm1d(h, P("bn2.gamma"), P("bn2.beta"), bn2, mode, static_cast<T>(kBnMomentum),
                      static_cast<T>(kBnEpsilon));
    h = t.maxpool1d(h, cfg.pool_window, cfg.pool_stride);
    h = t.dropout(h, rate, mode, derive_seed(seed, tag_hash("drop2")));

    h = t.lstm(h, reg(P("lstm1.w")), reg(P("lstm1.u")), P("lstm1.b"), true);
    h = t.lstm(h, reg(P("lstm2.w")), reg(P("lstm2.u")), P("lstm2.b"), true);
    h = t.reshape(h, {b, seq_length() * cfg.lstm_units});
    h = t.dense(h, P("dense1.w"), P("dense1.b"), engine::Activation::Relu);
    h = t.dropout(h, rate, mode, derive_seed(seed, tag_hash("drop3")));
    return t.dense(h, P("out.w"), P("out.b"), engine::Activation::Softmax);
  }

  std::string config_json() const {
    nlohmann::json j = cfg;
    return j.dump();
  }

  // Non-learnable tensors that must survive a save/load roundtrip.
  std::vector<std::pair<std::string, BasicTensor<T>*>> state_tensors() {
    return {{"bn1.running_mean", &bn1.mean},
            {"bn1.running_var", &bn1.var},
            {"bn2.running_mean", &bn2.mean},
            {"bn2.running_var", &bn2.var}};
  }

  // A restored model has valid running statistics even if it never trained
  // in this process.
  void mark_loaded() {
    bn1.initialized = true;
    bn2.initialized = true;
  }

  template <class U>
  CnnLstmModelT<U> cast() const {
    CnnLstmModelT<U> dst(cfg, 0);
    for (const auto& p : params) {
      auto& d = dst.params.get(p->name);
      d.value = p->value.template cast<U>();
      d.set_trainable(p->trainable);
    }
    dst.bn1.mean = bn1.mean.template cast<U>();
    dst.bn1.var = bn1.var.template cast<U>();
    dst.bn1.initialized = bn1.initialized;
    dst.bn2.mean = bn2.mean.template cast<U>();
    dst.bn2.var = bn2.var.template cast<U>();
    dst.bn2.initialized = bn2.initialized;
    return dst;
  }

 private:
  // Kernel weights are Glorot; the forget-gate bias quarter starts at 1 so
  // early training does not flush cell state (gate order [i,f,g,o]).
  void add_lstm(const std::string& prefix, std::int64_t din, std::int64_t h, std::uint64_t seed) {
    add_glorot(params, prefix + ".w", {din, 4 * h}, din, 4 * h, seed);
    add_glorot(params, prefix + ".u", {h, 4 * h}, h, 4 * h, seed);
    auto& bias = add_zeros(params, prefix + ".b", {4 * h});
    for (std::int64_t i = h; i < 2 * h; ++i) bias.value[i] = T(1);
  }
};

using CnnLstmModel = CnnLstmModelT<double>;

}  // namespace mir::models

#endif  // MIR_MODELS_CNN_LSTM_HPP

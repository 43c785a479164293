#include "mir/train_eval.hpp"

#include <cstdio>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "mir/models/cnn_lstm.hpp"
#include "mir/models/toy_swin.hpp"

namespace mir::train {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Builds the model named by the checkpoint's config tag, restores it, and
// hands it to `fn` — the one place that knows every concrete model type.
template <class Fn>
auto with_restored_model(const models::Checkpoint& ckpt, Fn&& fn) {
  const std::string kind = models::checkpoint_model_kind(ckpt);
  const auto cfg_json = nlohmann::json::parse(ckpt.config_json);
  if (kind == "cnn_lstm") {
    models::CnnLstmModel model(models::cnn_lstm_config_from_json(cfg_json), 0);
    models::restore_model(model, ckpt);
    return fn(model);
  }
  require(kind == "toy_swin", Err::ConfigMismatch, "unknown model kind '" + kind + "'");
  models::ToySwinModel model(models::toy_swin_config_from_json(cfg_json), 0);
  models::restore_model(model, ckpt);
  return fn(model);
}

}  // namespace

void validate(const TrainConfig& cfg) {
  require(cfg.epochs >= 1, Err::ConfigMismatch, "epochs must be >= 1");
  require(cfg.batch_size >= 1, Err::ConfigMismatch, "batch size must be >= 1");
  require(cfg.lr >= 0.0, Err::ConfigMismatch, "learning rate must be >= 0");
  require(cfg.l2 >= 0.0, Err::ConfigMismatch, "l2 rate must be >= 0");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, Err::ConfigMismatch,
          "dropout must lie in [0,1)");
}

std::string epoch_stats_csv(const std::vector<EpochStats>& stats) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& s : stats) {
    out += std::to_string(s.epoch);
    out += ',';
    out += fmt_double(s.train_loss);
    out += ',';
    out += fmt_double(s.train_acc);
    out += ',';
    out += fmt_double(s.val_loss);
    out += ',';
    out += fmt_double(s.val_acc);
    out += '\n';
  }
  return out;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& m) {
  require(m.k >= 1, Err::EmptySplit, "confusion matrix is empty");
  MetricsReport r;
  r.matrix = m;
  const std::int64_t total = m.total();
  require(total >= 1, Err::EmptySplit, "confusion matrix holds no examples");
  r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);

  r.support.resize(static_cast<std::size_t>(m.k));
  r.precision.resize(static_cast<std::size_t>(m.k));
  r.recall.resize(static_cast<std::size_t>(m.k));
  r.f1.resize(static_cast<std::size_t>(m.k));
  double weighted_num = 0.0;
  for (std::int64_t c = 0; c < m.k; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::int64_t j = 0; j < m.k; ++j) {
      row += m.at(c, j);
      col += m.at(j, c);
    }
    const std::int64_t tp = m.at(c, c);
    const double precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    const double f1 =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.support[static_cast<std::size_t>(c)] = row;
    r.precision[static_cast<std::size_t>(c)] = precision;
    r.recall[static_cast<std::size_t>(c)] = recall;
    r.f1[static_cast<std::size_t>(c)] = f1;
    weighted_num += static_cast<double>(row) * f1;
  }
  r.weighted_f1 = weighted_num / static_cast<double>(total);
  return r;
}

std::string metrics_report_json(const MetricsReport& report) {
  nlohmann::json j;
  auto& matrix = j["matrix"] = nlohmann::json::array();
  for (std::int64_t i = 0; i < report.matrix.k; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::int64_t c = 0; c < report.matrix.k; ++c) row.push_back(report.matrix.at(i, c));
    matrix.push_back(std::move(row));
  }
  j["accuracy"] = report.accuracy;
  j["weighted_f1"] = report.weighted_f1;
  auto& classes = j["per_class"] = nlohmann::json::array();
  for (std::int64_t c = 0; c < report.matrix.k; ++c) {
    nlohmann::json e;
    e["class"] = c;
    if (report.matrix.k == pipeline::kNumClasses)
      e["name"] = pipeline::class_name(static_cast<pipeline::ClassLabel>(c));
    e["support"] = report.support[static_cast<std::size_t>(c)];
    e["precision"] = report.precision[static_cast<std::size_t>(c)];
    e["recall"] = report.recall[static_cast<std::size_t>(c)];
    e["f1"] = report.f1[static_cast<std::size_t>(c)];
    classes.push_back(std::move(e));
  }
  return j.dump(2);
}

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find("model name");
    if (pos != std::string::npos) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
      }
      break;
    }
  }
  return cpu + " | " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware threads";
}

LatencyReport summarize_latency(std::vector<double> times_ms, std::int64_t min_samples) {
  require(static_cast<std::int64_t>(times_ms.size()) >= std::max<std::int64_t>(min_samples, 1),
          Err::TooFewSamples,
          "need at least " + std::to_string(min_samples) + " timed samples, got " +
              std::to_string(times_ms.size()));
  LatencyReport r;
  r.times_ms = std::move(times_ms);
  std::vector<double> sorted = r.times_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double sum = 0.0;
  for (double t : sorted) sum += t;
  r.mean_ms = sum / static_cast<double>(n);
  r.median_ms = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(n)));  // nearest-rank percentile
  r.p95_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
  r.hardware = hardware_descriptor();
  return r;
}

std::string latency_report_csv(const LatencyReport& report) {
  std::string out;
  out += "# hardware: " + report.hardware + "\n";
  out += "# batch_size: " + std::to_string(report.batch_size) + "\n";
  out += "# precision: " + report.precision + "\n";
  out += "# samples: " + std::to_string(report.times_ms.size()) + "\n";
  out += "# mean_ms: " + fmt_double(report.mean_ms) + "\n";
  out += "# median_ms: " + fmt_double(report.median_ms) + "\n";
  out += "# p95_ms: " + fmt_double(report.p95_ms) + "\n";
  out += "sample,ms\n";
  for (std::size_t i = 0; i < report.times_ms.size(); ++i)
    out += std::to_string(i) + "," + fmt_double(report.times_ms[i]) + "\n";
  return out;
}

Tensor batch_tensor(const std::vector<pipeline::LabeledExample>& examples,
                    const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  require(begin < end && end <= order.size(), Err::EmptyInput, "empty batch range");
  const auto& first = examples[order[begin]];
  Shape shape;
  shape.push_back(static_cast<std::int64_t>(end - begin));
  for (auto d : first.dims) shape.push_back(d);
  Tensor out(shape);
  std::size_t o = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& e = examples[order[i]];
    require(e.dims == first.dims, Err::ShapeMismatch,
            "batch mixes window shapes " + shape_str(e.dims) + " and " + shape_str(first.dims));
    for (float v : e.data) out.data[o++] = static_cast<double>(v);
  }
  return out;
}

std::vector<int> batch_labels(const std::vector<pipeline::LabeledExample>& examples,
                              const std::vector<std::size_t>& order, std::size_t begin,
                              std::size_t end) {
  std::vector<int> labels;
  labels.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i)
    labels.push_back(static_cast<int>(examples[order[i]].label));
  return labels;
}

std::vector<double> default_l2_grid() { return {0.0001, 0.05, 0.1}; }

std::vector<double> default_dropout_grid() {
  return {0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};
}

std::string grid_table_csv(const std::vector<GridCellResult>& table) {
  std::string out = "l2,dropout,val_accuracy,best_epoch\n";
  for (const auto& c : table)
    out += fmt_double(c.l2) + "," + fmt_double(c.dropout) + "," + fmt_double(c.val_accuracy) +
           "," + std::to_string(c.best_epoch) + "\n";
  return out;
}

MetricsReport evaluate_checkpoint(const models::Checkpoint& ckpt,
                                  const std::vector<pipeline::LabeledExample>& split,
                                  std::int64_t batch_size) {
  return with_restored_model(
      ckpt, [&](auto& model) { return evaluate(model, split, batch_size); });
}

LatencyReport latency_bench(const models::Checkpoint& ckpt,
                            const std::vector<pipeline::LabeledExample>& samples,
                            std::int64_t warmup) {
  require(static_cast<std::int64_t>(samples.size()) >= 100, Err::TooFewSamples,
          "latency bench needs at least 100 samples, got " + std::to_string(samples.size()));
  // convert inputs up front so only the forward pass is timed
  std::vector<TensorF> inputs;
  inputs.reserve(samples.size());
  for (const auto& e : samples) inputs.push_back(example_tensor<float>(e));

  return with_restored_model(ckpt, [&](auto& model) {
    auto model_f32 = model.template cast<float>();
    volatile float sink = 0.0f;
    LatencyReport r = time_inference(
        static_cast<std::int64_t>(inputs.size()), warmup, [&](std::int64_t i) {
          engine::TapeT<float> t;
          auto probs = model_f32.forward(
              t, t.input(inputs[static_cast<std::size_t>(i) % inputs.size()]),
              engine::Mode::Eval, 0);
          sink = sink + t.val(probs)[0];
        });
    (void)sink;
    r.batch_size = 1;
    r.precision = "float32";
    return r;
  });
}

}  // namespace mir::train

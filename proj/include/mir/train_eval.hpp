#ifndef MIR_TRAIN_EVAL_HPP
#define MIR_TRAIN_EVAL_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mir/common.hpp"
#include "mir/engine/adam.hpp"
#include "mir/engine/tape.hpp"
#include "mir/models/checkpoint.hpp"
#include "mir/pipeline.hpp"
#include "mir/rng.hpp"
#include "mir/tensor.hpp"

namespace mir::train {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t epochs = 1000;   // video runs use 100
  std::int64_t batch_size = 128;  // video runs use 32
  double lr = 0.001;
  double l2 = 0.0;
  double dropout = 0.0;  // bookkeeping: the model owns dropout placement
  bool class_weights = true;
  std::uint64_t seed = 0;
};

// lr = 0 is allowed on purpose: the fixed-point run (parameters must stay
// bitwise unchanged) is part of the diagnostics protocol.
void validate(const TrainConfig& cfg);

struct EpochStats {
  std::int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

// header "epoch,train_loss,train_acc,val_loss,val_acc"; doubles printed with
// %.17g so equal trajectories serialize to identical bytes
std::string epoch_stats_csv(const std::vector<EpochStats>& stats);

struct TrainResult {
  models::Checkpoint checkpoint;  // snapshot at the selected epoch
  std::vector<EpochStats> stats;
  std::int64_t best_epoch = 0;  // 1-based
  double best_val_accuracy = 0.0;
};

struct ConfusionMatrix {
  std::int64_t k = 0;
  std::vector<std::int64_t> counts;  // k*k, rows = true class, cols = predicted

  explicit ConfusionMatrix(std::int64_t classes = 0)
      : k(classes), counts(static_cast<std::size_t>(classes * classes), 0) {}

  std::int64_t& at(std::int64_t truth, std::int64_t pred) {
    return counts[static_cast<std::size_t>(truth * k + pred)];
  }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const {
    return counts[static_cast<std::size_t>(truth * k + pred)];
  }
  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::int64_t trace() const {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < k; ++i) n += at(i, i);
    return n;
  }
};

struct MetricsReport {
  ConfusionMatrix matrix;
  double accuracy = 0.0;
  std::vector<std::int64_t> support;  // per class, row sums
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double weighted_f1 = 0.0;
};

// Derives every metric from the matrix alone: accuracy = trace/total (exact
// integer arithmetic before the one division), F1 = 2PR/(P+R) with 0/0 -> 0,
// weighted F1 = sum(support_c * F1_c) / sum(support_c).
MetricsReport metrics_from_confusion(const ConfusionMatrix& m);

std::string metrics_report_json(const MetricsReport& report);

struct LatencyReport {
  std::vector<double> times_ms;  // warmup-excluded, one entry per timed pass
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::int64_t batch_size = 1;
  std::string precision = "float32";
  std::string hardware;
};

std::string hardware_descriptor();
std::string latency_report_csv(const LatencyReport& report);

// Sorts a copy of the raw times into mean/median/p95 (nearest-rank).
// Raises TooFewSamples below min_samples.
LatencyReport summarize_latency(std::vector<double> times_ms, std::int64_t min_samples = 100);

// ---------------------------------------------------------------------------
// Batching helpers
// ---------------------------------------------------------------------------

// [n] + example dims, double precision, gathered in index order.
Tensor batch_tensor(const std::vector<pipeline::LabeledExample>& examples,
                    const std::vector<std::size_t>& order, std::size_t begin, std::size_t end);

std::vector<int> batch_labels(const std::vector<pipeline::LabeledExample>& examples,
                              const std::vector<std::size_t>& order, std::size_t begin,
                              std::size_t end);

template <class T>
BasicTensor<T> example_tensor(const pipeline::LabeledExample& e) {
  Shape shape;
  shape.push_back(1);
  for (auto d : e.dims) shape.push_back(d);
  BasicTensor<T> out(shape);
  for (std::size_t i = 0; i < e.data.size(); ++i) out.data[i] = static_cast<T>(e.data[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

// Runs one forward pass and returns (loss ref, probs ref); catches the
// tape's non-finite guard and reports it as a diverged run with position.
template <class Model>
std::pair<engine::Tape::Ref, engine::Tape::Ref> objective(
    engine::Tape& t, Model& model, const Tensor& x, const std::vector<int>& labels,
    const std::vector<double>& weights, const TrainConfig& cfg, engine::Mode mode,
    std::uint64_t forward_seed) {
  std::vector<engine::Tape::Ref> l2_refs;
  auto probs = model.forward(t, t.input(x), mode, forward_seed,
                             cfg.l2 > 0.0 ? &l2_refs : nullptr);
  auto loss = t.weighted_sce(probs, labels, weights);
  if (cfg.l2 > 0.0 && !l2_refs.empty()) loss = t.add(loss, t.l2_penalty(l2_refs, cfg.l2));
  return {loss, probs};
}

inline std::int64_t argmax_row(const Tensor& probs, std::int64_t row) {
  const std::int64_t k = probs.dim(1);
  std::int64_t arg = 0;
  double best = probs[row * k];
  for (std::int64_t j = 1; j < k; ++j)
    if (probs[row * k + j] > best) {
      best = probs[row * k + j];
      arg = j;
    }
  return arg;
}

}  // namespace detail

// Evaluates loss/accuracy of `model` over `split` in eval mode (no dropout,
// running batch-norm statistics). Weighted mean loss, plain accuracy.
template <class Model>
std::pair<double, double> evaluate_loss_acc(Model& model,
                                            const std::vector<pipeline::LabeledExample>& split,
                                            const std::vector<double>& weights,
                                            std::int64_t batch_size, const TrainConfig& cfg,
                                            std::int64_t epoch) {
  std::vector<std::size_t> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double num = 0.0, den = 0.0;
  std::int64_t correct = 0;
  for (std::size_t begin = 0; begin < split.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(split.size(), begin + static_cast<std::size_t>(batch_size));
    const Tensor x = batch_tensor(split, order, begin, end);
    const auto labels = batch_labels(split, order, begin, end);
    engine::Tape t;
    engine::Tape::Ref loss, probs;
    try {
      // eval passes never regularize: val loss measures fit, not objective
      TrainConfig eval_cfg = cfg;
      eval_cfg.l2 = 0.0;
      std::tie(loss, probs) = detail::objective(t, model, x, labels, weights, eval_cfg,
                                                engine::Mode::Eval, 0);
    } catch (const Error& e) {
      if (e.kind() == Err::NumericError)
        raise(Err::DivergedLoss, "validation diverged at epoch " + std::to_string(epoch) +
                                     " batch " + std::to_string(begin / batch_size) + ": " +
                                     e.what());
      throw;
    }
    const double loss_v = t.val(loss)[0];
    require(std::isfinite(loss_v), Err::DivergedLoss,
            "non-finite validation loss at epoch " + std::to_string(epoch) + " batch " +
                std::to_string(begin / batch_size));
    double sw = 0.0;
    for (int y : labels) sw += weights[static_cast<std::size_t>(y)];
    num += loss_v * sw;
    den += sw;
    const auto& vp = t.val(probs);
    for (std::int64_t r = 0; r < vp.dim(0); ++r)
      if (detail::argmax_row(vp, r) == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return {num / den, static_cast<double>(correct) / static_cast<double>(split.size())};
}

// Full training protocol: per epoch a seeded shuffle, weighted cross-entropy
// (+ L2 on the model's designated kernels), Adam respecting freeze flags, and
// an eval-mode validation pass. The returned checkpoint is the snapshot at
// the highest validation accuracy; ties go to the latest epoch.
template <class Model>
TrainResult train(Model& model, const pipeline::SplitAssignment& data, const TrainConfig& cfg) {
  validate(cfg);
  require(!data.train.empty(), Err::EmptySplit, "training split is empty");
  require(!data.validation.empty(), Err::EmptySplit, "validation split is empty");

  std::vector<double> weights(pipeline::kNumClasses, 1.0);
  if (cfg.class_weights)
    weights = pipeline::compute_class_weights(pipeline::count_classes(data.train));

  engine::Adam adam(cfg.lr);
  TrainResult result;
  result.best_val_accuracy = -1.0;

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, tag_hash("shuffle"), static_cast<std::uint64_t>(epoch)));
    deterministic_shuffle(order, shuffle_rng);

    double num = 0.0, den = 0.0;
    std::int64_t correct = 0, batch_index = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const Tensor x = batch_tensor(data.train, order, begin, end);
      const auto labels = batch_labels(data.train, order, begin, end);

      model.params.zero_grads();
      engine::Tape t;
      engine::Tape::Ref loss, probs;
      const std::uint64_t fseed = derive_seed(cfg.seed, tag_hash("dropout"),
                                              static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(batch_index));
      try {
        std::tie(loss, probs) =
            detail::objective(t, model, x, labels, weights, cfg, engine::Mode::Train, fseed);
        t.backward(loss);
      } catch (const Error& e) {
        if (e.kind() == Err::NumericError)
          raise(Err::DivergedLoss, "training diverged at epoch " + std::to_string(epoch) +
                                       " batch " + std::to_string(batch_index) + ": " + e.what());
        throw;
      }
      const double loss_v = t.val(loss)[0];
      require(std::isfinite(loss_v), Err::DivergedLoss,
              "non-finite training loss at epoch " + std::to_string(epoch) + " batch " +
                  std::to_string(batch_index));
      adam.step(model.params);

      double sw = 0.0;
      for (int y : labels) sw += weights[static_cast<std::size_t>(y)];
      num += loss_v * sw;
      den += sw;
      const auto& vp = t.val(probs);
      for (std::int64_t r = 0; r < vp.dim(0); ++r)
        if (detail::argmax_row(vp, r) == labels[static_cast<std::size_t>(r)]) ++correct;
    }

    EpochStats s;
    s.epoch = epoch;
    s.train_loss = num / den;
    s.train_acc = static_cast<double>(correct) / static_cast<double>(data.train.size());
    std::tie(s.val_loss, s.val_acc) =
        evaluate_loss_acc(model, data.validation, weights, cfg.batch_size, cfg, epoch);
    result.stats.push_back(s);

    if (s.val_acc >= result.best_val_accuracy) {  // ties -> latest epoch
      result.best_val_accuracy = s.val_acc;
      result.best_epoch = epoch;
      result.checkpoint = models::snapshot_model(model, cfg.seed, &adam);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

std::vector<double> default_l2_grid();       // {0.0001, 0.05, 0.1}
std::vector<double> default_dropout_grid();  // {0.10, 0.15, ..., 0.50}

struct GridCellResult {
  double l2 = 0.0;
  double dropout = 0.0;
  double val_accuracy = 0.0;
  std::int64_t best_epoch = 0;
};

struct GridSearchResult {
  double l2 = 0.0;
  double dropout = 0.0;
  TrainResult best;
  std::vector<GridCellResult> table;  // every cell, in evaluation order
};

std::string grid_table_csv(const std::vector<GridCellResult>& table);

// `train_cell(l2, dropout) -> TrainResult` runs one combination; injecting a
// stub makes the selection rule testable without real training. Ties go to
// the smaller l2, then the smaller dropout.
template <class TrainFn>
GridSearchResult grid_search(const std::vector<double>& l2_values,
                             const std::vector<double>& dropout_values, TrainFn&& train_cell) {
  require(!l2_values.empty() && !dropout_values.empty(), Err::EmptyGrid,
          "grid must contain at least one l2 and one dropout value");
  GridSearchResult out;
  bool first = true;
  for (double l2 : l2_values)
    for (double dropout : dropout_values) {
      TrainResult r = train_cell(l2, dropout);
      GridCellResult cell;
      cell.l2 = l2;
      cell.dropout = dropout;
      cell.val_accuracy = r.best_val_accuracy;
      cell.best_epoch = r.best_epoch;
      out.table.push_back(cell);
      const bool better =
          first || cell.val_accuracy > out.best.best_val_accuracy ||
          (cell.val_accuracy == out.best.best_val_accuracy &&
           (l2 < out.l2 || (l2 == out.l2 && dropout < out.dropout)));
      if (better) {
        out.l2 = l2;
        out.dropout = dropout;
        out.best = std::move(r);
        first = false;
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation & latency
// ---------------------------------------------------------------------------

template <class Model>
MetricsReport evaluate(Model& model, const std::vector<pipeline::LabeledExample>& split,
                       std::int64_t batch_size = 128) {
  require(!split.empty(), Err::EmptySplit, "evaluation split is empty");
  std::vector<std::size_t> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  ConfusionMatrix m(pipeline::kNumClasses);
  for (std::size_t begin = 0; begin < split.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(split.size(), begin + static_cast<std::size_t>(batch_size));
    const Tensor x = batch_tensor(split, order, begin, end);
    const auto labels = batch_labels(split, order, begin, end);
    engine::Tape t;
    auto probs = model.forward(t, t.input(x), engine::Mode::Eval, 0);
    const auto& vp = t.val(probs);
    for (std::int64_t r = 0; r < vp.dim(0); ++r)
      ++m.at(labels[static_cast<std::size_t>(r)], detail::argmax_row(vp, r));
  }
  return metrics_from_confusion(m);
}

// Checkpoint-level entry points (dispatch on the config's model tag).
MetricsReport evaluate_checkpoint(const models::Checkpoint& ckpt,
                                  const std::vector<pipeline::LabeledExample>& split,
                                  std::int64_t batch_size = 128);

// Times `count` batch-1 calls of `fn(i)` after `warmup` untimed calls.
template <class Fn>
LatencyReport time_inference(std::int64_t count, std::int64_t warmup, Fn&& fn,
                             std::int64_t min_samples = 100) {
  require(count >= min_samples, Err::TooFewSamples,
          "need at least " + std::to_string(min_samples) + " timed samples, got " +
              std::to_string(count));
  for (std::int64_t i = 0; i < warmup; ++i) fn(i);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn(warmup + i);
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return summarize_latency(std::move(times), min_samples);
}

// 32-bit eval-mode batch-1 passes over the given examples (>= 100), one timed
// pass per example after `warmup` untimed passes cycling through them.
LatencyReport latency_bench(const models::Checkpoint& ckpt,
                            const std::vector<pipeline::LabeledExample>& samples,
                            std::int64_t warmup);

}  // namespace mir::train

#endif  // MIR_TRAIN_EVAL_HPP

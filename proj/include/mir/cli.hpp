#ifndef MIR_CLI_HPP
#define MIR_CLI_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mir/common.hpp"
#include "mir/models/cnn_lstm.hpp"
#include "mir/models/toy_swin.hpp"
#include "mir/pipeline.hpp"
#include "mir/synth.hpp"
#include "mir/train_eval.hpp"

namespace mir::cli {

// ---------------------------------------------------------------------------
// RunConfig: the union of every tunable, loadable from one JSON file.
// Unknown keys are rejected; the effective config is echoed into every
// output directory so a run is reproducible from the echo + seed alone.
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::string modality = "signal";  // "signal" | "frames"
  double intention_seconds = 1.0;
  int sample_rate_hz = 500;  // applied to manifest signal recordings
  int fps = 60;              // applied to manifest frame sequences
  std::vector<int> signal_columns = {1, 2, 3, 4};
  std::int64_t signal_window = 100;
  double signal_overlap = 0.5;
  std::int64_t frame_window = 32;
  double frame_overlap = 0.5;
  double ratio_train = 0.7;
  double ratio_validation = 0.15;
  double ratio_test = 0.15;
  std::string split_unit = "recording";  // "recording" | "example"
  int oversample_factor = 3;             // signal modality only
  double augment_sigma_scale = 0.05;     // x mean train channel std; 0 disables
  int augment_copies = 2;                // frames modality only
  pipeline::FrameAugmentConfig frame_augment;
  std::string frame_values = "auto";  // "auto" | "raw255" | "unit"
  std::int64_t frame_target_height = 224;
  std::int64_t frame_target_width = 224;
  double scaler_epsilon = 1e-8;
};

struct ModelSection {
  std::string kind = "cnn_lstm";  // "cnn_lstm" | "toy_swin"
  std::string freeze = "none";    // "none" | "paper" (toy_swin only)
  models::CnnLstmConfig cnn_lstm;
  models::ToySwinConfig toy_swin;
};

struct BenchConfig {
  std::int64_t samples = 100;
  std::int64_t warmup = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;  // the implementation is single-threaded; 1 is the CI mode
  synth::SynthSpec synth;
  PipelineConfig pipeline;
  ModelSection model;
  train::TrainConfig train;
  std::vector<double> grid_l2 = train::default_l2_grid();
  std::vector<double> grid_dropout = train::default_dropout_grid();
  BenchConfig bench;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& cfg);

// exit code for a categorized error: config 2, data 3, numeric 4
int exit_code_for(const Error& e);

// ---------------------------------------------------------------------------
// Commands. Each writes its artifacts plus a config.json echo into out_dir
// and refuses a non-empty out_dir unless force is set.
// ---------------------------------------------------------------------------

struct SynthSummary {
  std::int64_t signal_files = 0;
  std::int64_t frame_files = 0;
  std::string manifest_path;
};

SynthSummary cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool force,
                       const std::string& modality = "both");  // signal|frames|both

struct PrepareSummary {
  std::string modality;
  std::vector<std::int64_t> train_counts_before;  // per-class, pre oversample/augment
  std::vector<std::int64_t> train_counts_after;
  std::vector<std::int64_t> validation_counts;
  std::vector<std::int64_t> test_counts;
};

PrepareSummary cmd_prepare(const RunConfig& cfg, const std::string& manifest_path,
                           const std::string& out_dir, bool force);

struct TrainSummary {
  std::string model_kind;
  std::int64_t epochs = 0;
  std::int64_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::string checkpoint_path;
  std::string stats_path;
};

TrainSummary cmd_train(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool force);

struct GridSummary {
  std::string model_kind;
  double l2 = 0.0;
  double dropout = 0.0;
  double best_val_accuracy = 0.0;
  std::int64_t best_epoch = 0;
  std::size_t cells = 0;
  std::string checkpoint_path;
  std::string table_path;
};

GridSummary cmd_grid(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& out_dir, bool force);

struct EvalSummary {
  std::string split;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::string report_path;
};

EvalSummary cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                     const std::string& data_dir, const std::string& split,
                     const std::string& out_dir, bool force);

struct BenchSummary {
  std::string model_kind;
  std::size_t samples = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::string report_path;
};

// Benches a saved checkpoint, or a freshly initialized model of the
// configured kind when checkpoint_path is empty. Sample windows come from the
// prepared data_dir's test split when given, otherwise they are generated to
// match the model's input shape.
BenchSummary cmd_bench(const RunConfig& cfg, const std::string& checkpoint_path,
                       const std::string& data_dir, const std::string& out_dir, bool force);

// Full argv-level entry point used by the binary: parses flags, dispatches,
// prints a one-line summary, and maps errors to categorized exit codes.
int run_cli(int argc, const char* const* argv);

}  // namespace mir::cli

#endif  // MIR_CLI_HPP

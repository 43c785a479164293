#include "mir/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "mir/dataset_io.hpp"
#include "mir/ingest.hpp"
#include "mir/io.hpp"
#include "mir/models/checkpoint.hpp"
#include "mir/rng.hpp"

namespace fs = std::filesystem;

namespace mir::cli {

namespace {

// ---------------------------------------------------------------------------
// Strict JSON sections: every key must be consumed or the config is rejected.
// ---------------------------------------------------------------------------

class Section {
 public:
  Section(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j_.is_object(), Err::ConfigError, "'" + where_ + "' must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      raise(Err::ConfigError, "config key '" + where_ + "." + key + "' has the wrong type");
    }
  }

  // returns the subsection when present, marking the key as consumed
  const nlohmann::json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items())
      require(seen_.count(item.key()) > 0, Err::ConfigError,
              "unknown config key '" + where_ + "." + item.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

synth::SynthSpec parse_synth_section(const nlohmann::json& j) {
  Section s(j, "synth");
  synth::SynthSpec out;
  s.get("subjects", out.subjects);
  s.get("trials", out.trials);
  s.get("duration_seconds", out.duration_seconds);
  s.get("sample_rate_hz", out.sample_rate_hz);
  s.get("fps", out.fps);
  s.get("channels", out.channels);
  s.get("intention_scale", out.intention_scale);
  s.get("subject_gain_spread", out.subject_gain_spread);
  s.get("noise_floor", out.noise_floor);
  s.get("frame_noise", out.frame_noise);
  s.get("frame_height", out.frame_height);
  s.get("frame_width", out.frame_width);
  s.get("frame_channels", out.frame_channels);
  s.get("blob_speed", out.blob_speed);
  if (const auto* sig = s.sub("signatures")) {
    require(sig->is_array(), Err::ConfigError, "synth.signatures must be an array");
    out.signatures.clear();
    for (const auto& act : *sig) {
      require(act.is_array(), Err::ConfigError,
              "each synth.signatures entry must be an array of tones");
      synth::ActivitySignature a;
      for (const auto& tone : act) {
        Section ts(tone, "synth.signatures[][]");
        synth::ChannelTone t;
        ts.get("carrier_hz", t.carrier_hz);
        ts.get("amplitude", t.amplitude);
        ts.finish();
        a.tones.push_back(t);
      }
      out.signatures.push_back(std::move(a));
    }
  } else {
    out.signatures = synth::default_signatures(out.channels);
  }
  s.finish();
  return out;
}

nlohmann::json synth_section_to_json(const synth::SynthSpec& spec) {
  nlohmann::json j;
  j["subjects"] = spec.subjects;
  j["trials"] = spec.trials;
  j["duration_seconds"] = spec.duration_seconds;
  j["sample_rate_hz"] = spec.sample_rate_hz;
  j["fps"] = spec.fps;
  j["channels"] = spec.channels;
  j["intention_scale"] = spec.intention_scale;
  j["subject_gain_spread"] = spec.subject_gain_spread;
  j["noise_floor"] = spec.noise_floor;
  j["frame_noise"] = spec.frame_noise;
  j["frame_height"] = spec.frame_height;
  j["frame_width"] = spec.frame_width;
  j["frame_channels"] = spec.frame_channels;
  j["blob_speed"] = spec.blob_speed;
  auto& sigs = j["signatures"] = nlohmann::json::array();
  for (const auto& a : spec.signatures) {
    nlohmann::json act = nlohmann::json::array();
    for (const auto& t : a.tones)
      act.push_back({{"carrier_hz", t.carrier_hz}, {"amplitude", t.amplitude}});
    sigs.push_back(std::move(act));
  }
  return j;
}

PipelineConfig parse_pipeline_section(const nlohmann::json& j) {
  Section s(j, "pipeline");
  PipelineConfig out;
  s.get("modality", out.modality);
  s.get("intention_seconds", out.intention_seconds);
  s.get("sample_rate_hz", out.sample_rate_hz);
  s.get("fps", out.fps);
  s.get("signal_columns", out.signal_columns);
  s.get("signal_window", out.signal_window);
  s.get("signal_overlap", out.signal_overlap);
  s.get("frame_window", out.frame_window);
  s.get("frame_overlap", out.frame_overlap);
  s.get("ratio_train", out.ratio_train);
  s.get("ratio_validation", out.ratio_validation);
  s.get("ratio_test", out.ratio_test);
  s.get("split_unit", out.split_unit);
  s.get("oversample_factor", out.oversample_factor);
  s.get("augment_sigma_scale", out.augment_sigma_scale);
  s.get("augment_copies", out.augment_copies);
  s.get("frame_flip", out.frame_augment.horizontal_flip);
  s.get("frame_brightness", out.frame_augment.brightness);
  s.get("frame_contrast", out.frame_augment.contrast);
  s.get("frame_saturation", out.frame_augment.saturation);
  s.get("frame_hue", out.frame_augment.hue);
  s.get("frame_noise_sigma", out.frame_augment.noise_sigma);
  s.get("frame_values", out.frame_values);
  s.get("frame_target_height", out.frame_target_height);
  s.get("frame_target_width", out.frame_target_width);
  s.get("scaler_epsilon", out.scaler_epsilon);
  s.finish();
  return out;
}

nlohmann::json pipeline_section_to_json(const PipelineConfig& p) {
  nlohmann::json j;
  j["modality"] = p.modality;
  j["intention_seconds"] = p.intention_seconds;
  j["sample_rate_hz"] = p.sample_rate_hz;
  j["fps"] = p.fps;
  j["signal_columns"] = p.signal_columns;
  j["signal_window"] = p.signal_window;
  j["signal_overlap"] = p.signal_overlap;
  j["frame_window"] = p.frame_window;
  j["frame_overlap"] = p.frame_overlap;
  j["ratio_train"] = p.ratio_train;
  j["ratio_validation"] = p.ratio_validation;
  j["ratio_test"] = p.ratio_test;
  j["split_unit"] = p.split_unit;
  j["oversample_factor"] = p.oversample_factor;
  j["augment_sigma_scale"] = p.augment_sigma_scale;
  j["augment_copies"] = p.augment_copies;
  j["frame_flip"] = p.frame_augment.horizontal_flip;
  j["frame_brightness"] = p.frame_augment.brightness;
  j["frame_contrast"] = p.frame_augment.contrast;
  j["frame_saturation"] = p.frame_augment.saturation;
  j["frame_hue"] = p.frame_augment.hue;
  j["frame_noise_sigma"] = p.frame_augment.noise_sigma;
  j["frame_values"] = p.frame_values;
  j["frame_target_height"] = p.frame_target_height;
  j["frame_target_width"] = p.frame_target_width;
  j["scaler_epsilon"] = p.scaler_epsilon;
  return j;
}

// model subsections delegate to the models' own strict parsers; the "model"
// discriminator is implied by model.kind, so it may not appear in the file
nlohmann::json with_model_tag(const nlohmann::json& j, const char* tag, const char* where) {
  require(j.is_object(), Err::ConfigError, std::string("'") + where + "' must be a JSON object");
  require(!j.contains("model"), Err::ConfigError,
          std::string("'") + where + ".model' is implied by model.kind; remove it");
  nlohmann::json tagged = j;
  tagged["model"] = tag;
  return tagged;
}

ModelSection parse_model_section(const nlohmann::json& j) {
  Section s(j, "model");
  ModelSection out;
  s.get("kind", out.kind);
  s.get("freeze", out.freeze);
  if (const auto* c = s.sub("cnn_lstm"))
    out.cnn_lstm = models::cnn_lstm_config_from_json(with_model_tag(*c, "cnn_lstm", "model.cnn_lstm"),
                                                     Err::ConfigError);
  if (const auto* c = s.sub("toy_swin"))
    out.toy_swin = models::toy_swin_config_from_json(with_model_tag(*c, "toy_swin", "model.toy_swin"),
                                                     Err::ConfigError);
  s.finish();
  return out;
}

nlohmann::json model_section_to_json(const ModelSection& m) {
  nlohmann::json j;
  j["kind"] = m.kind;
  j["freeze"] = m.freeze;
  nlohmann::json c = m.cnn_lstm;
  c.erase("model");
  j["cnn_lstm"] = std::move(c);
  nlohmann::json t = m.toy_swin;
  t.erase("model");
  j["toy_swin"] = std::move(t);
  return j;
}

train::TrainConfig parse_train_section(const nlohmann::json& j) {
  Section s(j, "train");
  train::TrainConfig out;
  s.get("epochs", out.epochs);
  s.get("batch_size", out.batch_size);
  s.get("lr", out.lr);
  s.get("l2", out.l2);
  s.get("class_weights", out.class_weights);
  s.finish();
  return out;
}

nlohmann::json train_section_to_json(const train::TrainConfig& t) {
  nlohmann::json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["l2"] = t.l2;
  j["class_weights"] = t.class_weights;
  return j;
}

// ---------------------------------------------------------------------------
// Output directories and artifact plumbing
// ---------------------------------------------------------------------------

void claim_out_dir(const std::string& out_dir, bool force) {
  require(!out_dir.empty(), Err::ConfigError, "an output directory is required (--out)");
  std::error_code ec;
  if (fs::exists(out_dir, ec)) {
    require(fs::is_directory(out_dir, ec), Err::ConfigError,
            "output path '" + out_dir + "' exists and is not a directory");
    const bool empty = fs::directory_iterator(out_dir, ec) == fs::directory_iterator();
    require(empty || force, Err::ConfigError,
            "output directory '" + out_dir + "' is not empty; pass --force to overwrite");
  } else {
    fs::create_directories(out_dir);
  }
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  io::write_file(out_dir + "/config.json", run_config_to_json(cfg).dump(2) + "\n");
}

void write_json(const nlohmann::json& j, const std::string& path) {
  io::write_file(path, j.dump(2) + "\n");
}

std::string split_file(const std::string& data_dir, const std::string& split) {
  require(split == "train" || split == "validation" || split == "test", Err::ConfigError,
          "split must be train, validation, or test, got '" + split + "'");
  return data_dir + "/" + split + ".bin";
}

ingest::Modality parse_modality(const std::string& s) {
  if (s == "signal") return ingest::Modality::Signal;
  require(s == "frames", Err::ConfigError, "modality must be 'signal' or 'frames', got '" + s + "'");
  return ingest::Modality::Frames;
}

pipeline::SplitUnit parse_split_unit(const std::string& s) {
  if (s == "recording") return pipeline::SplitUnit::Recording;
  require(s == "example", Err::ConfigError,
          "split_unit must be 'recording' or 'example', got '" + s + "'");
  return pipeline::SplitUnit::Example;
}

std::string normalize_model_kind(const std::string& s) {
  if (s == "cnn_lstm" || s == "cnnlstm") return "cnn_lstm";
  if (s == "toy_swin" || s == "toyswin") return "toy_swin";
  raise(Err::ConfigError, "model kind must be 'cnn_lstm' or 'toy_swin', got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Training plumbing shared by cmd_train / cmd_grid
// ---------------------------------------------------------------------------

pipeline::SplitAssignment load_prepared_splits(const std::string& data_dir) {
  pipeline::SplitAssignment data;
  data.train = dataset::read_examples(data_dir + "/train.bin");
  data.validation = dataset::read_examples(data_dir + "/validation.bin");
  data.test = dataset::read_examples(data_dir + "/test.bin");
  return data;
}

// One full training run of the configured model kind with the given l2 and
// dropout; the freeze policy applies to toy_swin only.
train::TrainResult run_training(const RunConfig& cfg, const pipeline::SplitAssignment& data,
                                double l2, double dropout) {
  train::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.l2 = l2;
  tc.dropout = dropout;
  if (cfg.model.kind == "cnn_lstm") {
    auto mcfg = cfg.model.cnn_lstm;
    mcfg.dropout_rate = dropout;
    models::CnnLstmModel model(mcfg, cfg.seed);
    return train::train(model, data, tc);
  }
  auto mcfg = cfg.model.toy_swin;
  mcfg.head_dropout = dropout;
  models::ToySwinModel model(mcfg, cfg.seed);
  if (cfg.model.freeze == "paper") model.apply_freeze(models::FreezePolicy::PaperPolicy);
  return train::train(model, data, tc);
}

double configured_dropout(const RunConfig& cfg) {
  return cfg.model.kind == "cnn_lstm" ? cfg.model.cnn_lstm.dropout_rate
                                      : cfg.model.toy_swin.head_dropout;
}

std::vector<std::int64_t> count_or_zero(const std::vector<pipeline::LabeledExample>& ex) {
  return pipeline::count_classes(ex);
}

nlohmann::json counts_json(const std::vector<std::int64_t>& counts) {
  return nlohmann::json(counts);
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig serialization
// ---------------------------------------------------------------------------

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["synth"] = synth_section_to_json(cfg.synth);
  j["pipeline"] = pipeline_section_to_json(cfg.pipeline);
  j["model"] = model_section_to_json(cfg.model);
  j["train"] = train_section_to_json(cfg.train);
  j["grid"] = {{"l2", cfg.grid_l2}, {"dropout", cfg.grid_dropout}};
  j["bench"] = {{"samples", cfg.bench.samples}, {"warmup", cfg.bench.warmup}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  Section s(j, "config");
  RunConfig out;
  s.get("seed", out.seed);
  s.get("threads", out.threads);
  if (const auto* sub = s.sub("synth")) out.synth = parse_synth_section(*sub);
  if (const auto* sub = s.sub("pipeline")) out.pipeline = parse_pipeline_section(*sub);
  if (const auto* sub = s.sub("model")) out.model = parse_model_section(*sub);
  if (const auto* sub = s.sub("train")) out.train = parse_train_section(*sub);
  if (const auto* sub = s.sub("grid")) {
    Section g(*sub, "grid");
    g.get("l2", out.grid_l2);
    g.get("dropout", out.grid_dropout);
    g.finish();
  }
  if (const auto* sub = s.sub("bench")) {
    Section b(*sub, "bench");
    b.get("samples", out.bench.samples);
    b.get("warmup", out.bench.warmup);
    b.finish();
  }
  s.finish();
  validate_run_config(out);
  return out;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = io::read_file(path);
  const auto j = nlohmann::json::parse(text, nullptr, false);
  require(!j.is_discarded(), Err::ConfigError, "'" + path + "' is not valid JSON");
  return run_config_from_json(j);
}

void validate_run_config(const RunConfig& cfg) {
  require(cfg.threads >= 1, Err::ConfigError, "threads must be >= 1");
  synth::validate_spec(cfg.synth);

  const auto& p = cfg.pipeline;
  parse_modality(p.modality);
  parse_split_unit(p.split_unit);
  require(p.intention_seconds > 0.0, Err::ConfigError, "intention_seconds must be positive");
  require(p.sample_rate_hz >= 1, Err::ConfigError, "sample_rate_hz must be >= 1");
  require(p.fps >= 1, Err::ConfigError, "fps must be >= 1");
  require(!p.signal_columns.empty(), Err::ConfigError, "signal_columns must be non-empty");
  require(p.signal_window >= 1, Err::ConfigError, "signal_window must be >= 1");
  require(p.frame_window >= 1, Err::ConfigError, "frame_window must be >= 1");
  require(p.signal_overlap >= 0.0 && p.signal_overlap < 1.0, Err::ConfigError,
          "signal_overlap must lie in [0,1)");
  require(p.frame_overlap >= 0.0 && p.frame_overlap < 1.0, Err::ConfigError,
          "frame_overlap must lie in [0,1)");
  require(p.oversample_factor >= 1, Err::ConfigError, "oversample_factor must be >= 1");
  require(p.augment_sigma_scale >= 0.0, Err::ConfigError, "augment_sigma_scale must be >= 0");
  require(p.augment_copies >= 0, Err::ConfigError, "augment_copies must be >= 0");
  require(p.frame_values == "auto" || p.frame_values == "raw255" || p.frame_values == "unit",
          Err::ConfigError,
          "frame_values must be 'auto', 'raw255', or 'unit', got '" + p.frame_values + "'");
  require(p.frame_target_height >= 1 && p.frame_target_width >= 1, Err::ConfigError,
          "frame target resolution must be positive");
  require(p.scaler_epsilon > 0.0, Err::ConfigError, "scaler_epsilon must be positive");

  require(cfg.model.kind == "cnn_lstm" || cfg.model.kind == "toy_swin", Err::ConfigError,
          "model.kind must be 'cnn_lstm' or 'toy_swin', got '" + cfg.model.kind + "'");
  require(cfg.model.freeze == "none" || cfg.model.freeze == "paper", Err::ConfigError,
          "model.freeze must be 'none' or 'paper', got '" + cfg.model.freeze + "'");
  require(cfg.model.freeze == "none" || cfg.model.kind == "toy_swin", Err::ConfigError,
          "the paper freeze policy applies to the toy_swin model only");

  train::TrainConfig tc = cfg.train;
  tc.dropout = configured_dropout(cfg);
  train::validate(tc);
  require(!cfg.grid_l2.empty() && !cfg.grid_dropout.empty(), Err::ConfigError,
          "grid.l2 and grid.dropout must be non-empty");
  for (double v : cfg.grid_l2)
    require(v >= 0.0, Err::ConfigError, "grid.l2 entries must be >= 0");
  for (double v : cfg.grid_dropout)
    require(v >= 0.0 && v < 1.0, Err::ConfigError, "grid.dropout entries must lie in [0,1)");
  require(cfg.bench.samples >= 1, Err::ConfigError, "bench.samples must be >= 1");
  require(cfg.bench.warmup >= 0, Err::ConfigError, "bench.warmup must be >= 0");
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrCategory::Config:
      return 2;
    case ErrCategory::Data:
      return 3;
    case ErrCategory::Numeric:
      return 4;
  }
  return 3;
}

// ---------------------------------------------------------------------------
// cmd_synth
// ---------------------------------------------------------------------------

SynthSummary cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool force,
                       const std::string& modality) {
  require(modality == "signal" || modality == "frames" || modality == "both", Err::ConfigError,
          "synth modality must be 'signal', 'frames', or 'both', got '" + modality + "'");
  claim_out_dir(out_dir, force);

  synth::SynthSpec spec = cfg.synth;
  spec.seed = cfg.seed;

  SynthSummary out;
  ingest::DatasetManifest manifest;
  if (modality == "signal" || modality == "both") {
    const auto m = synth::write_synth_dataset(spec, out_dir, ingest::Modality::Signal);
    out.signal_files = static_cast<std::int64_t>(m.entries.size());
    manifest.entries.insert(manifest.entries.end(), m.entries.begin(), m.entries.end());
  }
  if (modality == "frames" || modality == "both") {
    const auto m = synth::write_synth_dataset(spec, out_dir, ingest::Modality::Frames);
    out.frame_files = static_cast<std::int64_t>(m.entries.size());
    manifest.entries.insert(manifest.entries.end(), m.entries.begin(), m.entries.end());
  }
  out.manifest_path = out_dir + "/manifest.csv";
  ingest::save_manifest(manifest, out.manifest_path);
  echo_config(cfg, out_dir);
  return out;
}

// ---------------------------------------------------------------------------
// cmd_prepare
// ---------------------------------------------------------------------------

namespace {

std::vector<pipeline::LabeledExample> window_signal_entries(
    const RunConfig& cfg, const ingest::DatasetManifest& manifest,
    const std::string& manifest_path) {
  const auto& p = cfg.pipeline;
  std::vector<pipeline::LabeledExample> all;
  for (const auto& entry : manifest.entries) {
    if (entry.modality != ingest::Modality::Signal) continue;
    auto rec = ingest::parse_signal_text(ingest::resolve_path(manifest_path, entry.path),
                                         p.signal_columns);
    rec.subject_id = entry.subject;
    rec.activity = entry.activity;
    rec.trial = entry.trial;
    rec.sample_rate_hz = p.sample_rate_hz;
    const auto segments = pipeline::split_groups(rec, p.intention_seconds);
    for (const auto* seg : {&segments.first, &segments.second}) {
      auto windows = pipeline::segment_windows(*seg, p.signal_window, p.signal_overlap);
      std::move(windows.begin(), windows.end(), std::back_inserter(all));
    }
  }
  return all;
}

std::vector<pipeline::LabeledExample> window_frame_entries(
    const RunConfig& cfg, const ingest::DatasetManifest& manifest,
    const std::string& manifest_path) {
  const auto& p = cfg.pipeline;
  std::vector<pipeline::LabeledExample> all;
  for (const auto& entry : manifest.entries) {
    if (entry.modality != ingest::Modality::Frames) continue;
    auto seq = ingest::read_frame_container(ingest::resolve_path(manifest_path, entry.path));
    seq.subject_id = entry.subject;
    seq.activity = entry.activity;
    seq.trial = entry.trial;
    seq.fps = p.fps;

    bool unit_scale = p.frame_values == "unit";
    if (p.frame_values == "auto") {
      float hi = 0.0f;
      for (float v : seq.data) hi = std::max(hi, v);
      unit_scale = hi <= 1.0f;
    }

    const auto segments = pipeline::split_groups(seq, p.intention_seconds);
    for (const auto* seg : {&segments.first, &segments.second}) {
      auto windows = pipeline::segment_windows(*seg, p.frame_window, p.frame_overlap);
      for (auto& e : windows) {
        const bool sized =
            e.dims[1] == p.frame_target_height && e.dims[2] == p.frame_target_width;
        if (!unit_scale) {
          e = pipeline::scale_frames(e, p.frame_target_height, p.frame_target_width);
        } else if (!sized) {
          // already unit-range: lift into [0,255] so scale_frames resizes and
          // lands back in [0,1]
          for (auto& v : e.data) v *= 255.0f;
          e = pipeline::scale_frames(e, p.frame_target_height, p.frame_target_width);
        }
        all.push_back(std::move(e));
      }
    }
  }
  return all;
}

}  // namespace

PrepareSummary cmd_prepare(const RunConfig& cfg, const std::string& manifest_path,
                           const std::string& out_dir, bool force) {
  const auto& p = cfg.pipeline;
  const auto modality = parse_modality(p.modality);
  claim_out_dir(out_dir, force);

  const auto manifest = ingest::load_manifest(manifest_path);
  auto all = modality == ingest::Modality::Signal
                 ? window_signal_entries(cfg, manifest, manifest_path)
                 : window_frame_entries(cfg, manifest, manifest_path);
  require(!all.empty(), Err::EmptyInput,
          "manifest '" + manifest_path + "' yielded no " + p.modality + " windows");

  pipeline::SplitRatios ratios{p.ratio_train, p.ratio_validation, p.ratio_test};
  auto data = pipeline::stratified_split(all, ratios, parse_split_unit(p.split_unit),
                                         derive_seed(cfg.seed, tag_hash("split")));

  PrepareSummary summary;
  summary.modality = p.modality;
  summary.train_counts_before = count_or_zero(data.train);
  summary.validation_counts = count_or_zero(data.validation);
  summary.test_counts = count_or_zero(data.test);

  double augment_sigma = 0.0;
  if (modality == ingest::Modality::Signal) {
    // oversample -> additive noise; both train-split only (test/val untouched)
    data.train = pipeline::oversample_minority(data.train, p.oversample_factor,
                                               {pipeline::Group::Intention},
                                               derive_seed(cfg.seed, tag_hash("oversample")));
    if (p.augment_sigma_scale > 0.0) {
      const auto pre = pipeline::fit_scaler(data.train, p.scaler_epsilon);
      double mean_std = 0.0;
      for (double s : pre.stddev) mean_std += s;
      mean_std /= static_cast<double>(pre.stddev.size());
      augment_sigma = p.augment_sigma_scale * mean_std;
      if (augment_sigma > 0.0)
        for (std::size_t i = 0; i < data.train.size(); ++i)
          data.train[i] = pipeline::augment_signal_gaussian(
              data.train[i], augment_sigma,
              derive_seed(cfg.seed, tag_hash("signal-augment"), static_cast<std::uint64_t>(i)));
    }
    const auto scaler = pipeline::fit_scaler(data.train, p.scaler_epsilon);
    for (auto& e : data.train) e = pipeline::apply_scaler(scaler, e);
    for (auto& e : data.validation) e = pipeline::apply_scaler(scaler, e);
    for (auto& e : data.test) e = pipeline::apply_scaler(scaler, e);
  } else if (p.augment_copies > 0) {
    // frames: keep every original and append augmented copies, train only
    std::vector<pipeline::LabeledExample> augmented;
    augmented.reserve(data.train.size() * (1 + static_cast<std::size_t>(p.augment_copies)));
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      augmented.push_back(data.train[i]);
      for (int k = 1; k <= p.augment_copies; ++k)
        augmented.push_back(pipeline::augment_frames(
            data.train[i], p.frame_augment,
            derive_seed(cfg.seed, tag_hash("frame-augment"), static_cast<std::uint64_t>(i),
                        static_cast<std::uint64_t>(k))));
    }
    data.train = std::move(augmented);
  }
  summary.train_counts_after = count_or_zero(data.train);

  dataset::write_examples(out_dir + "/train.bin", data.train);
  dataset::write_examples(out_dir + "/validation.bin", data.validation);
  dataset::write_examples(out_dir + "/test.bin", data.test);

  nlohmann::json stats;
  stats["modality"] = p.modality;
  stats["examples"] = {{"train", data.train.size()},
                       {"validation", data.validation.size()},
                       {"test", data.test.size()}};
  stats["class_counts"] = {{"train_before", counts_json(summary.train_counts_before)},
                           {"train", counts_json(summary.train_counts_after)},
                           {"validation", counts_json(summary.validation_counts)},
                           {"test", counts_json(summary.test_counts)}};
  const bool weightable = std::all_of(summary.train_counts_after.begin(),
                                      summary.train_counts_after.end(),
                                      [](std::int64_t c) { return c > 0; });
  stats["class_weights"] = weightable ? nlohmann::json(pipeline::compute_class_weights(
                                            summary.train_counts_after))
                                      : nlohmann::json();
  if (modality == ingest::Modality::Signal) {
    stats["oversample_factor"] = p.oversample_factor;
    stats["augment_sigma"] = augment_sigma;
  } else {
    stats["augment_copies"] = p.augment_copies;
  }
  write_json(stats, out_dir + "/stats.json");
  echo_config(cfg, out_dir);
  return summary;
}

// ---------------------------------------------------------------------------
// cmd_train / cmd_grid
// ---------------------------------------------------------------------------

TrainSummary cmd_train(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool force) {
  claim_out_dir(out_dir, force);
  const auto data = load_prepared_splits(data_dir);
  const auto result = run_training(cfg, data, cfg.train.l2, configured_dropout(cfg));

  TrainSummary summary;
  summary.model_kind = cfg.model.kind;
  summary.epochs = static_cast<std::int64_t>(result.stats.size());
  summary.best_epoch = result.best_epoch;
  summary.best_val_accuracy = result.best_val_accuracy;
  summary.checkpoint_path = out_dir + "/checkpoint.milc";
  summary.stats_path = out_dir + "/epochs.csv";

  models::save_checkpoint(result.checkpoint, summary.checkpoint_path);
  io::write_file(summary.stats_path, train::epoch_stats_csv(result.stats));
  write_json({{"model", summary.model_kind},
              {"epochs", summary.epochs},
              {"best_epoch", summary.best_epoch},
              {"best_val_accuracy", summary.best_val_accuracy}},
             out_dir + "/summary.json");
  echo_config(cfg, out_dir);
  return summary;
}

GridSummary cmd_grid(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& out_dir, bool force) {
  claim_out_dir(out_dir, force);
  const auto data = load_prepared_splits(data_dir);
  const auto grid =
      train::grid_search(cfg.grid_l2, cfg.grid_dropout, [&](double l2, double dropout) {
        return run_training(cfg, data, l2, dropout);
      });

  GridSummary summary;
  summary.model_kind = cfg.model.kind;
  summary.l2 = grid.l2;
  summary.dropout = grid.dropout;
  summary.best_val_accuracy = grid.best.best_val_accuracy;
  summary.best_epoch = grid.best.best_epoch;
  summary.cells = grid.table.size();
  summary.checkpoint_path = out_dir + "/checkpoint.milc";
  summary.table_path = out_dir + "/grid.csv";

  models::save_checkpoint(grid.best.checkpoint, summary.checkpoint_path);
  io::write_file(summary.table_path, train::grid_table_csv(grid.table));
  io::write_file(out_dir + "/epochs.csv", train::epoch_stats_csv(grid.best.stats));
  write_json({{"model", summary.model_kind},
              {"l2", summary.l2},
              {"dropout", summary.dropout},
              {"best_epoch", summary.best_epoch},
              {"best_val_accuracy", summary.best_val_accuracy},
              {"cells", summary.cells}},
             out_dir + "/summary.json");
  echo_config(cfg, out_dir);
  return summary;
}

// ---------------------------------------------------------------------------
// cmd_eval / cmd_bench
// ---------------------------------------------------------------------------

EvalSummary cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                     const std::string& data_dir, const std::string& split,
                     const std::string& out_dir, bool force) {
  const std::string path = split_file(data_dir, split);  // validates the split name first
  claim_out_dir(out_dir, force);
  const auto ckpt = models::load_checkpoint(checkpoint_path);
  const auto examples = dataset::read_examples(path);
  const auto report = train::evaluate_checkpoint(ckpt, examples, cfg.train.batch_size);

  EvalSummary summary;
  summary.split = split;
  summary.accuracy = report.accuracy;
  summary.weighted_f1 = report.weighted_f1;
  summary.report_path = out_dir + "/metrics.json";
  io::write_file(summary.report_path, train::metrics_report_json(report) + "\n");
  echo_config(cfg, out_dir);
  return summary;
}

BenchSummary cmd_bench(const RunConfig& cfg, const std::string& checkpoint_path,
                       const std::string& data_dir, const std::string& out_dir, bool force) {
  claim_out_dir(out_dir, force);

  models::Checkpoint ckpt;
  if (!checkpoint_path.empty()) {
    ckpt = models::load_checkpoint(checkpoint_path);
  } else if (cfg.model.kind == "cnn_lstm") {
    models::CnnLstmModel model(cfg.model.cnn_lstm, cfg.seed);
    ckpt = models::snapshot_model(model, cfg.seed);
  } else {
    models::ToySwinModel model(cfg.model.toy_swin, cfg.seed);
    ckpt = models::snapshot_model(model, cfg.seed);
  }
  const std::string kind = models::checkpoint_model_kind(ckpt);

  std::vector<pipeline::LabeledExample> samples;
  if (!data_dir.empty()) {
    samples = dataset::read_examples(data_dir + "/test.bin");
  } else {
    // latency does not depend on the values, only the shapes: generate
    // windows matching the model input
    const auto mj = nlohmann::json::parse(ckpt.config_json);
    Shape dims;
    ingest::Modality modality = ingest::Modality::Signal;
    if (kind == "cnn_lstm") {
      const auto mcfg = models::cnn_lstm_config_from_json(mj);
      dims = {mcfg.input_length, mcfg.input_channels};
    } else {
      const auto mcfg = models::toy_swin_config_from_json(mj);
      dims = {mcfg.frames, mcfg.height, mcfg.width, mcfg.in_channels};
      modality = ingest::Modality::Frames;
    }
    std::int64_t numel = 1;
    for (auto d : dims) numel *= d;
    Rng rng(derive_seed(cfg.seed, tag_hash("bench-samples")));
    for (std::int64_t i = 0; i < cfg.bench.samples; ++i) {
      pipeline::LabeledExample e;
      e.label = static_cast<pipeline::ClassLabel>(i % pipeline::kNumClasses);
      e.modality = modality;
      e.dims = dims;
      e.data.resize(static_cast<std::size_t>(numel));
      for (auto& v : e.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
      samples.push_back(std::move(e));
    }
  }

  const auto report = train::latency_bench(ckpt, samples, cfg.bench.warmup);

  BenchSummary summary;
  summary.model_kind = kind;
  summary.samples = report.times_ms.size();
  summary.mean_ms = report.mean_ms;
  summary.median_ms = report.median_ms;
  summary.p95_ms = report.p95_ms;
  summary.report_path = out_dir + "/latency.csv";
  io::write_file(summary.report_path, train::latency_report_csv(report));
  echo_config(cfg, out_dir);
  return summary;
}

// ---------------------------------------------------------------------------
// argv entry point
// ---------------------------------------------------------------------------

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  bool force = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "JSON run config; flags override its values");
  sub->add_option("--out", f.out_dir, "output directory for artifacts")->required();
  sub->add_option("--seed", f.seed, "master seed override");
  sub->add_option("--threads", f.threads, "worker threads (1 = deterministic CI mode)");
  sub->add_flag("--force", f.force, "allow writing into a non-empty output directory");
}

RunConfig resolve_config(const CLI::App* sub, const CommonFlags& f) {
  RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
  if (sub->count("--seed") > 0) cfg.seed = f.seed;
  if (sub->count("--threads") > 0) cfg.threads = f.threads;
  return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"motion-intention recognition laboratory"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  CommonFlags synth_flags;
  add_common(synth_cmd, synth_flags);
  std::string synth_modality = "both";
  int synth_subjects = 0, synth_trials = 0;
  synth_cmd->add_option("--modality", synth_modality, "signal | frames | both");
  synth_cmd->add_option("--subjects", synth_subjects, "number of subjects");
  synth_cmd->add_option("--trials", synth_trials, "trials per activity");

  // prepare ----------------------------------------------------------------
  auto* prepare_cmd = app.add_subcommand("prepare", "window, split, balance, and scale");
  CommonFlags prepare_flags;
  add_common(prepare_cmd, prepare_flags);
  std::string prepare_manifest;
  std::string prepare_modality, prepare_unit;
  int prepare_oversample = 0;
  std::int64_t prepare_window = 0;
  double prepare_overlap = -1.0;
  prepare_cmd->add_option("--manifest", prepare_manifest, "dataset manifest csv")->required();
  prepare_cmd->add_option("--modality", prepare_modality, "signal | frames");
  prepare_cmd->add_option("--unit", prepare_unit, "split unit: recording | example");
  prepare_cmd->add_option("--oversample", prepare_oversample, "intention oversample factor");
  prepare_cmd->add_option("--window", prepare_window, "window length for the active modality");
  prepare_cmd->add_option("--overlap", prepare_overlap, "window overlap fraction [0,1)");

  // train / grid -----------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train one model on prepared splits");
  auto* grid_cmd = app.add_subcommand("grid", "grid-search l2 x dropout, keep the best");
  CommonFlags train_flags, grid_flags;
  std::string train_data, grid_data;
  std::string train_model, grid_model, train_freeze, grid_freeze;
  std::int64_t train_epochs = 0, grid_epochs = 0, train_batch = 0, grid_batch = 0;
  double train_lr = -1.0, grid_lr = -1.0, train_l2 = -1.0;
  for (auto [cmd, flags, datap, modelp, freezep, epochsp, batchp, lrp] :
       {std::tuple{train_cmd, &train_flags, &train_data, &train_model, &train_freeze,
                   &train_epochs, &train_batch, &train_lr},
        std::tuple{grid_cmd, &grid_flags, &grid_data, &grid_model, &grid_freeze, &grid_epochs,
                   &grid_batch, &grid_lr}}) {
    add_common(cmd, *flags);
    cmd->add_option("--data", *datap, "prepared dataset directory")->required();
    cmd->add_option("--model", *modelp, "cnn_lstm | toy_swin");
    cmd->add_option("--freeze", *freezep, "none | paper");
    cmd->add_option("--epochs", *epochsp, "training epochs");
    cmd->add_option("--batch", *batchp, "batch size");
    cmd->add_option("--lr", *lrp, "learning rate");
  }
  train_cmd->add_option("--l2", train_l2, "l2 penalty rate");

  // eval -------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a prepared split");
  CommonFlags eval_flags;
  add_common(eval_cmd, eval_flags);
  std::string eval_checkpoint, eval_data, eval_split = "test";
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "MILC checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "prepared dataset directory")->required();
  eval_cmd->add_option("--split", eval_split, "train | validation | test");

  // bench ------------------------------------------------------------------
  auto* bench_cmd = app.add_subcommand("bench", "batch-1 float32 latency benchmark");
  CommonFlags bench_flags;
  add_common(bench_cmd, bench_flags);
  std::string bench_checkpoint, bench_data, bench_model;
  std::int64_t bench_samples = 0, bench_warmup = -1;
  bench_cmd->add_option("--checkpoint", bench_checkpoint, "MILC checkpoint (else fresh model)");
  bench_cmd->add_option("--data", bench_data, "prepared dataset directory for sample windows");
  bench_cmd->add_option("--model", bench_model, "cnn_lstm | toy_swin (fresh-model mode)");
  bench_cmd->add_option("--samples", bench_samples, "generated sample count");
  bench_cmd->add_option("--warmup", bench_warmup, "untimed warmup passes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) {
      RunConfig cfg = resolve_config(synth_cmd, synth_flags);
      if (synth_cmd->count("--subjects") > 0) cfg.synth.subjects = synth_subjects;
      if (synth_cmd->count("--trials") > 0) cfg.synth.trials = synth_trials;
      validate_run_config(cfg);
      const auto s = cmd_synth(cfg, synth_flags.out_dir, synth_flags.force, synth_modality);
      std::printf("synth: %lld signal files + %lld frame containers -> %s\n",
                  static_cast<long long>(s.signal_files), static_cast<long long>(s.frame_files),
                  s.manifest_path.c_str());
      return 0;
    }
    if (prepare_cmd->parsed()) {
      RunConfig cfg = resolve_config(prepare_cmd, prepare_flags);
      auto& p = cfg.pipeline;
      if (prepare_cmd->count("--modality") > 0) p.modality = prepare_modality;
      if (prepare_cmd->count("--unit") > 0) p.split_unit = prepare_unit;
      if (prepare_cmd->count("--oversample") > 0) p.oversample_factor = prepare_oversample;
      if (prepare_cmd->count("--window") > 0)
        (p.modality == "frames" ? p.frame_window : p.signal_window) = prepare_window;
      if (prepare_cmd->count("--overlap") > 0)
        (p.modality == "frames" ? p.frame_overlap : p.signal_overlap) = prepare_overlap;
      validate_run_config(cfg);
      const auto s = cmd_prepare(cfg, prepare_manifest, prepare_flags.out_dir,
                                 prepare_flags.force);
      std::int64_t train_n = 0;
      for (auto c : s.train_counts_after) train_n += c;
      std::printf("prepare: %s windows -> %s (train %lld)\n", s.modality.c_str(),
                  prepare_flags.out_dir.c_str(), static_cast<long long>(train_n));
      return 0;
    }
    if (train_cmd->parsed() || grid_cmd->parsed()) {
      const bool is_grid = grid_cmd->parsed();
      CLI::App* cmd = is_grid ? grid_cmd : train_cmd;
      const CommonFlags& flags = is_grid ? grid_flags : train_flags;
      RunConfig cfg = resolve_config(cmd, flags);
      const std::string& model_flag = is_grid ? grid_model : train_model;
      const std::string& freeze_flag = is_grid ? grid_freeze : train_freeze;
      if (cmd->count("--model") > 0) cfg.model.kind = normalize_model_kind(model_flag);
      if (cmd->count("--freeze") > 0) cfg.model.freeze = freeze_flag;
      if (cmd->count("--epochs") > 0) cfg.train.epochs = is_grid ? grid_epochs : train_epochs;
      if (cmd->count("--batch") > 0) cfg.train.batch_size = is_grid ? grid_batch : train_batch;
      if (cmd->count("--lr") > 0) cfg.train.lr = is_grid ? grid_lr : train_lr;
      if (!is_grid && train_cmd->count("--l2") > 0) cfg.train.l2 = train_l2;
      validate_run_config(cfg);
      if (is_grid) {
        const auto s = cmd_grid(cfg, grid_data, flags.out_dir, flags.force);
        std::printf("grid: best l2=%g dropout=%g val_acc=%.4f (%zu cells) -> %s\n", s.l2,
                    s.dropout, s.best_val_accuracy, s.cells, s.checkpoint_path.c_str());
      } else {
        const auto s = cmd_train(cfg, train_data, flags.out_dir, flags.force);
        std::printf("train: %s best epoch %lld val_acc=%.4f -> %s\n", s.model_kind.c_str(),
                    static_cast<long long>(s.best_epoch), s.best_val_accuracy,
                    s.checkpoint_path.c_str());
      }
      return 0;
    }
    if (eval_cmd->parsed()) {
      RunConfig cfg = resolve_config(eval_cmd, eval_flags);
      validate_run_config(cfg);
      const auto s = cmd_eval(cfg, eval_checkpoint, eval_data, eval_split, eval_flags.out_dir,
                              eval_flags.force);
      std::printf("eval[%s]: accuracy=%.4f weighted_f1=%.4f -> %s\n", s.split.c_str(),
                  s.accuracy, s.weighted_f1, s.report_path.c_str());
      return 0;
    }
    if (bench_cmd->parsed()) {
      RunConfig cfg = resolve_config(bench_cmd, bench_flags);
      if (bench_cmd->count("--model") > 0) cfg.model.kind = normalize_model_kind(bench_model);
      if (bench_cmd->count("--samples") > 0) cfg.bench.samples = bench_samples;
      if (bench_cmd->count("--warmup") > 0) cfg.bench.warmup = bench_warmup;
      validate_run_config(cfg);
      const auto s = cmd_bench(cfg, bench_checkpoint, bench_data, bench_flags.out_dir,
                               bench_flags.force);
      std::printf("bench[%s]: mean=%.3fms median=%.3fms p95=%.3fms over %zu samples -> %s\n",
                  s.model_kind.c_str(), s.mean_ms, s.median_ms, s.p95_ms, s.samples,
                  s.report_path.c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 2;
}

}  // namespace mir::cli

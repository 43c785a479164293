#ifndef MIR_INGEST_HPP
#define MIR_INGEST_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mir/common.hpp"

namespace mir::ingest {

enum class Activity { Lifting, Carrying, Holding, Mounting };
enum class Modality { Signal, Frames };

const char* activity_name(Activity a);
Activity activity_from_string(const std::string& s);
const char* modality_name(Modality m);
Modality modality_from_string(const std::string& s);

// One subject x activity x trial of multi-channel sEMG rows.
struct SignalRecording {
  int subject_id = 0;
  Activity activity = Activity::Lifting;
  int trial = 0;
  int sample_rate_hz = 500;
  std::int64_t rows = 0;
  std::int64_t channels = 0;
  std::vector<float> data;  // [rows x channels], row-major

  float at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * channels + c)];
  }
};

// A clip of raw frames, [T,H,W,C] row-major, C innermost.
struct FrameSequence {
  int subject_id = 0;
  Activity activity = Activity::Lifting;
  int trial = 0;
  int fps = 60;
  std::int64_t t = 0, h = 0, w = 0, c = 0;
  std::vector<float> data;
  bool scaled = false;  // true once values are known to live in [0,1]

  std::int64_t frame_size() const { return h * w * c; }
};

struct ManifestEntry {
  std::string path;
  int subject = 0;
  Activity activity = Activity::Lifting;
  int trial = 0;
  Modality modality = Modality::Signal;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

// Parses an OpenSignals-style text export: leading '#' lines are metadata,
// each remaining non-empty line holds whitespace-separated decimal numbers.
// Only the requested columns are kept, in the requested order.
SignalRecording parse_signal_text(const std::string& path,
                                  const std::vector<int>& channel_columns);

FrameSequence read_frame_container(const std::string& path);
void write_frame_container(const FrameSequence& seq, const std::string& path);

// Manifest: one "path,subject,activity,trial,modality" record per line,
// '#' comments and blank lines allowed. Paths are kept verbatim.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Resolve a manifest-relative path against the directory of the manifest.
std::string resolve_path(const std::string& manifest_path, const std::string& entry_path);

}  // namespace mir::ingest

#endif  // MIR_INGEST_HPP

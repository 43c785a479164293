#ifndef MIR_SYNTH_HPP
#define MIR_SYNTH_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mir/common.hpp"
#include "mir/ingest.hpp"

namespace mir::synth {

inline constexpr int kActivityCount = 4;

// One sinusoid per channel; the per-activity "signature" is the mixture of
// all channel tones (plus a fixed 2f harmonic at 0.3x amplitude for texture).
struct ChannelTone {
  double carrier_hz = 0.0;
  double amplitude = 0.0;

  friend bool operator==(const ChannelTone&, const ChannelTone&) = default;
};

struct ActivitySignature {
  std::vector<ChannelTone> tones;  // one entry per channel

  friend bool operator==(const ActivitySignature&, const ActivitySignature&) = default;
};

// Each activity gets a distinct dominant channel (amplitude 1 vs 0.25) and a
// distinct carrier band, so a non-learned energy-per-channel rule can already
// tell the activities apart.
std::vector<ActivitySignature> default_signatures(int channels);

struct SynthSpec {
  int subjects = 3;
  int trials = 4;           // per activity
  double duration_seconds = 2.2;
  int sample_rate_hz = 500;
  int fps = 60;
  int channels = 4;
  std::vector<ActivitySignature> signatures = default_signatures(4);
  double intention_scale = 0.45;     // amplitude/displacement factor in the first second; < 1
  double subject_gain_spread = 0.15; // per-subject gain in [1-s, 1+s]
  double noise_floor = 0.05;         // gaussian sigma added to every signal sample
  double frame_noise = 0.12;         // uniform background level of synthetic frames
  std::int64_t frame_height = 32;
  std::int64_t frame_width = 32;
  int frame_channels = 3;
  double blob_speed = 1.0;           // blob displacement in pixels per frame (actual portion)
  std::uint64_t seed = 0;
};

// Raises BadSpec when any field is out of range, a signature does not cover
// every channel, or two activities share a signature.
void validate_spec(const SynthSpec& spec);

// One recording per subject x activity x trial: a low-amplitude intention
// ramp for the first second, then the activity's full-scale signature, plus
// subject gain and gaussian noise. Pure function of the spec (seed included).
std::vector<ingest::SignalRecording> synth_signal_dataset(const SynthSpec& spec);

// One sequence per subject x activity x trial: a gaussian blob drifting in an
// activity-specific direction over a noisy background, at reduced speed
// during the intention second. All values lie in [0,1].
std::vector<ingest::FrameSequence> synth_frame_dataset(const SynthSpec& spec);

// Velocity (dx per frame, dy per frame) of the blob for an activity at full
// (actual-portion) speed. Exposed for the frame-difference oracle.
std::pair<double, double> activity_velocity(const SynthSpec& spec, ingest::Activity a);

// Emit the dataset in the ingest formats: signal recordings as OpenSignals
// style text (leading sample-index column, channels in columns 1..C), frame
// sequences as .ftns containers, plus a manifest.csv next to them. Returns
// the manifest that was written.
ingest::DatasetManifest write_synth_dataset(const SynthSpec& spec, const std::string& out_dir,
                                            ingest::Modality modality);

}  // namespace mir::synth

#endif  // MIR_SYNTH_HPP

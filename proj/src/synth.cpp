#include "mir/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "mir/io.hpp"
#include "mir/rng.hpp"

namespace mir::synth {

namespace {

constexpr double kTau = 6.283185307179586;
constexpr double kHarmonic = 0.3;   // second-harmonic amplitude factor
constexpr double kOffAmplitude = 0.25;
constexpr double kRampSeconds = 0.3;  // intention amplitude reaches its plateau here
constexpr double kBlobPeak = 0.85;

int activity_index(ingest::Activity a) { return static_cast<int>(a); }

const std::array<ingest::Activity, 4> kActivities = {
    ingest::Activity::Lifting, ingest::Activity::Carrying, ingest::Activity::Holding,
    ingest::Activity::Mounting};

// Amplitude envelope: ramp up to intention_scale over the first 300 ms, hold
// through the rest of the intention second, then full scale.
double envelope(double t, double intention_scale) {
  if (t >= 1.0) return 1.0;
  return intention_scale * std::min(1.0, t / kRampSeconds);
}

double subject_gain(const SynthSpec& spec, int subject) {
  Rng rng(derive_seed(spec.seed, tag_hash("subject-gain"), static_cast<std::uint64_t>(subject)));
  return 1.0 + spec.subject_gain_spread * rng.uniform(-1.0, 1.0);
}

}  // namespace

std::vector<ActivitySignature> default_signatures(int channels) {
  require(channels >= 1, Err::BadSpec, "channel count must be positive");
  std::vector<ActivitySignature> out(kActivityCount);
  for (int a = 0; a < kActivityCount; ++a) {
    out[static_cast<std::size_t>(a)].tones.resize(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c) {
      auto& tone = out[static_cast<std::size_t>(a)].tones[static_cast<std::size_t>(c)];
      tone.carrier_hz = 28.0 + 18.0 * a + 6.0 * c;
      tone.amplitude = (c == a % channels) ? 1.0 : kOffAmplitude;
    }
  }
  return out;
}

void validate_spec(const SynthSpec& spec) {
  require(spec.subjects >= 1, Err::BadSpec, "subjects must be >= 1");
  require(spec.trials >= 1, Err::BadSpec, "trials must be >= 1");
  require(spec.duration_seconds > 1.0, Err::BadSpec,
          "duration must exceed the 1 s intention ramp");
  require(spec.sample_rate_hz >= 2, Err::BadSpec, "sample rate must be >= 2 Hz");
  require(spec.fps >= 1, Err::BadSpec, "fps must be >= 1");
  require(spec.channels >= 1, Err::BadSpec, "channels must be >= 1");
  require(static_cast<int>(spec.signatures.size()) == kActivityCount, Err::BadSpec,
          "need one signature per activity, got " + std::to_string(spec.signatures.size()));
  for (int a = 0; a < kActivityCount; ++a) {
    const auto& sig = spec.signatures[static_cast<std::size_t>(a)];
    require(static_cast<int>(sig.tones.size()) == spec.channels, Err::BadSpec,
            "signature " + std::to_string(a) + " does not cover every channel");
    for (const auto& tone : sig.tones) {
      require(tone.amplitude > 0.0, Err::BadSpec, "tone amplitudes must be positive");
      require(tone.carrier_hz > 0.0 && tone.carrier_hz < spec.sample_rate_hz / 2.0, Err::BadSpec,
              "tone carrier must sit below the Nyquist frequency");
    }
  }
  for (int a = 0; a < kActivityCount; ++a)
    for (int b = a + 1; b < kActivityCount; ++b)
      require(!(spec.signatures[static_cast<std::size_t>(a)] ==
                spec.signatures[static_cast<std::size_t>(b)]),
              Err::BadSpec,
              "signatures " + std::to_string(a) + " and " + std::to_string(b) + " are identical");
  require(spec.intention_scale > 0.0 && spec.intention_scale < 1.0, Err::BadSpec,
          "intention amplitude must stay below the actual amplitude");
  require(spec.subject_gain_spread >= 0.0 && spec.subject_gain_spread < 1.0, Err::BadSpec,
          "subject gain spread must lie in [0,1)");
  require(spec.noise_floor >= 0.0, Err::BadSpec, "noise floor must be non-negative");
  require(spec.frame_noise >= 0.0 && spec.frame_noise <= 0.5, Err::BadSpec,
          "frame noise must lie in [0,0.5]");
  require(spec.frame_height >= 8 && spec.frame_width >= 8, Err::BadSpec,
          "frame resolution must be at least 8x8");
  require(spec.frame_channels >= 1, Err::BadSpec, "frame channels must be >= 1");
  require(spec.blob_speed > 0.0 && spec.blob_speed <= 4.0, Err::BadSpec,
          "blob speed must lie in (0,4] pixels per frame");
}

std::vector<ingest::SignalRecording> synth_signal_dataset(const SynthSpec& spec) {
  validate_spec(spec);
  const auto rows = static_cast<std::int64_t>(
      std::llround(spec.duration_seconds * spec.sample_rate_hz));
  std::vector<ingest::SignalRecording> out;
  out.reserve(static_cast<std::size_t>(spec.subjects * kActivityCount * spec.trials));

  for (int s = 0; s < spec.subjects; ++s) {
    const double gain = subject_gain(spec, s);
    for (int a = 0; a < kActivityCount; ++a) {
      const auto& sig = spec.signatures[static_cast<std::size_t>(a)];
      // Phases are fixed per (subject, activity, channel) so that at zero
      // noise every trial of a pair is bit-identical.
      std::vector<double> phase(static_cast<std::size_t>(spec.channels));
      for (int c = 0; c < spec.channels; ++c) {
        Rng prng(derive_seed(spec.seed, tag_hash("phase"), static_cast<std::uint64_t>(s),
                             static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(c)));
        phase[static_cast<std::size_t>(c)] = prng.uniform(0.0, kTau);
      }
      for (int r = 0; r < spec.trials; ++r) {
        ingest::SignalRecording rec;
        rec.subject_id = s + 1;
        rec.activity = kActivities[static_cast<std::size_t>(a)];
        rec.trial = r + 1;
        rec.sample_rate_hz = spec.sample_rate_hz;
        rec.rows = rows;
        rec.channels = spec.channels;
        rec.data.resize(static_cast<std::size_t>(rows * spec.channels));
        Rng noise(derive_seed(spec.seed, tag_hash("signal-noise"), static_cast<std::uint64_t>(s),
                              static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(r)));
        for (std::int64_t i = 0; i < rows; ++i) {
          const double t = static_cast<double>(i) / spec.sample_rate_hz;
          const double env = envelope(t, spec.intention_scale);
          for (int c = 0; c < spec.channels; ++c) {
            const auto& tone = sig.tones[static_cast<std::size_t>(c)];
            const double ph = phase[static_cast<std::size_t>(c)];
            double v = tone.amplitude * (std::sin(kTau * tone.carrier_hz * t + ph) +
                                         kHarmonic * std::sin(kTau * 2.0 * tone.carrier_hz * t +
                                                              1.7 * ph));
            v = gain * env * v;
            if (spec.noise_floor > 0.0) v += spec.noise_floor * noise.gaussian();
            rec.data[static_cast<std::size_t>(i * spec.channels + c)] = static_cast<float>(v);
          }
        }
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

std::pair<double, double> activity_velocity(const SynthSpec& spec, ingest::Activity a) {
  switch (a) {
    case ingest::Activity::Lifting: return {0.0, -spec.blob_speed};   // up
    case ingest::Activity::Carrying: return {spec.blob_speed, 0.0};   // right
    case ingest::Activity::Holding: return {0.0, spec.blob_speed};    // down
    case ingest::Activity::Mounting: return {-spec.blob_speed, 0.0};  // left
  }
  return {0.0, 0.0};
}

std::vector<ingest::FrameSequence> synth_frame_dataset(const SynthSpec& spec) {
  validate_spec(spec);
  const auto frames = static_cast<std::int64_t>(std::llround(spec.duration_seconds * spec.fps));
  const std::int64_t H = spec.frame_height, W = spec.frame_width;
  const int C = spec.frame_channels;
  const double radius = static_cast<double>(std::min(H, W)) / 8.0;
  const double inv2r2 = 1.0 / (2.0 * radius * radius);

  std::vector<ingest::FrameSequence> out;
  out.reserve(static_cast<std::size_t>(spec.subjects * kActivityCount * spec.trials));

  for (int s = 0; s < spec.subjects; ++s) {
    for (int a = 0; a < kActivityCount; ++a) {
      const auto [vx, vy] = activity_velocity(spec, kActivities[static_cast<std::size_t>(a)]);
      // Start position is fixed per (subject, activity); trials differ only
      // by their background noise, mirroring the signal generator.
      Rng srng(derive_seed(spec.seed, tag_hash("blob-start"), static_cast<std::uint64_t>(s),
                           static_cast<std::uint64_t>(a)));
      const double x0 = W / 2.0 + srng.uniform(-static_cast<double>(W) / 8.0, W / 8.0);
      const double y0 = H / 2.0 + srng.uniform(-static_cast<double>(H) / 8.0, H / 8.0);
      for (int r = 0; r < spec.trials; ++r) {
        ingest::FrameSequence seq;
        seq.subject_id = s + 1;
        seq.activity = kActivities[static_cast<std::size_t>(a)];
        seq.trial = r + 1;
        seq.fps = spec.fps;
        seq.t = frames;
        seq.h = H;
        seq.w = W;
        seq.c = C;
        seq.data.resize(static_cast<std::size_t>(frames * H * W * C));
        Rng noise(derive_seed(spec.seed, tag_hash("frame-noise"), static_cast<std::uint64_t>(s),
                              static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(r)));
        double px = x0, py = y0;
        std::size_t o = 0;
        for (std::int64_t f = 0; f < frames; ++f) {
          for (std::int64_t y = 0; y < H; ++y) {
            // toroidal distance so the blob wraps instead of leaving
            double dy = std::abs(static_cast<double>(y) - py);
            dy = std::min(dy, static_cast<double>(H) - dy);
            for (std::int64_t x = 0; x < W; ++x) {
              double dx = std::abs(static_cast<double>(x) - px);
              dx = std::min(dx, static_cast<double>(W) - dx);
              const double blob = kBlobPeak * std::exp(-(dx * dx + dy * dy) * inv2r2);
              for (int c = 0; c < C; ++c) {
                const double weight = 1.0 - 0.25 * (c % 3);
                const double bg =
                    spec.frame_noise > 0.0 ? noise.uniform(0.0, spec.frame_noise) : 0.0;
                seq.data[o++] = static_cast<float>(std::min(1.0, bg + weight * blob));
              }
            }
          }
          // Advance after rendering so frame 0 sits at the start position;
          // the intention second moves at a reduced speed.
          const double factor =
              (static_cast<double>(f) / spec.fps) < 1.0 ? spec.intention_scale : 1.0;
          px += factor * vx;
          py += factor * vy;
          px = std::fmod(px + W, static_cast<double>(W));
          py = std::fmod(py + H, static_cast<double>(H));
        }
        seq.scaled = true;  // generated directly in [0,1]
        out.push_back(std::move(seq));
      }
    }
  }
  return out;
}

ingest::DatasetManifest write_synth_dataset(const SynthSpec& spec, const std::string& out_dir,
                                            ingest::Modality modality) {
  validate_spec(spec);
  std::filesystem::create_directories(out_dir);
  ingest::DatasetManifest manifest;

  auto file_stem = [](const ingest::ManifestEntry& e) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "s%02d_%s_t%02d", e.subject,
                  ingest::activity_name(e.activity), e.trial);
    return std::string(buf);
  };

  if (modality == ingest::Modality::Signal) {
    for (const auto& rec : synth_signal_dataset(spec)) {
      ingest::ManifestEntry e;
      e.subject = rec.subject_id;
      e.activity = rec.activity;
      e.trial = rec.trial;
      e.modality = ingest::Modality::Signal;
      e.path = file_stem(e) + ".txt";

      std::ostringstream text;
      text << "# OpenSignals-style export (synthetic)\n";
      text << "# subject=" << rec.subject_id << " activity=" << ingest::activity_name(rec.activity)
           << " trial=" << rec.trial << " rate_hz=" << rec.sample_rate_hz << "\n";
      text << "# columns: sample_index";
      for (std::int64_t c = 0; c < rec.channels; ++c) text << " ch" << c;
      text << "\n";
      char num[32];
      for (std::int64_t i = 0; i < rec.rows; ++i) {
        text << i;
        for (std::int64_t c = 0; c < rec.channels; ++c) {
          std::snprintf(num, sizeof(num), "%.9g", static_cast<double>(rec.at(i, c)));
          text << ' ' << num;
        }
        text << '\n';
      }
      io::write_file(out_dir + "/" + e.path, text.str());
      manifest.entries.push_back(std::move(e));
    }
  } else {
    for (const auto& seq : synth_frame_dataset(spec)) {
      ingest::ManifestEntry e;
      e.subject = seq.subject_id;
      e.activity = seq.activity;
      e.trial = seq.trial;
      e.modality = ingest::Modality::Frames;
      e.path = file_stem(e) + ".ftns";
      ingest::write_frame_container(seq, out_dir + "/" + e.path);
      manifest.entries.push_back(std::move(e));
    }
  }

  ingest::save_manifest(manifest, out_dir + "/manifest.csv");
  return manifest;
}

}  // namespace mir::synth

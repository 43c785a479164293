#include "mir/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "mir/rng.hpp"

namespace mir::pipeline {

namespace {

using ingest::Activity;
using ingest::Modality;

// round-half-up for non-negative quantities
std::int64_t round_index(double v) { return static_cast<std::int64_t>(std::floor(v + 0.5)); }

GroupSegment make_segment(int subject, Activity activity, int trial, Modality modality,
                          Group group, Shape dims, const float* src, std::int64_t count) {
  GroupSegment seg;
  seg.subject = subject;
  seg.activity = activity;
  seg.trial = trial;
  seg.modality = modality;
  seg.group = group;
  seg.dims = std::move(dims);
  seg.data.assign(src, src + count);
  return seg;
}

std::uint64_t provenance_tag(const Provenance& p) {
  return derive_seed(static_cast<std::uint64_t>(p.subject),
                     static_cast<std::uint64_t>(p.activity),
                     static_cast<std::uint64_t>(p.trial), static_cast<std::uint64_t>(p.group),
                     static_cast<std::uint64_t>(p.start));
}

struct Hsv {
  double h, s, v;
};

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out{0.0, mx == 0.0 ? 0.0 : d / mx, mx};
  if (d > 0.0) {
    if (mx == r)
      out.h = std::fmod((g - b) / d, 6.0) / 6.0;
    else if (mx == g)
      out.h = ((b - r) / d + 2.0) / 6.0;
    else
      out.h = ((r - g) / d + 4.0) / 6.0;
    if (out.h < 0.0) out.h += 1.0;
  }
  return out;
}

void hsv_to_rgb(const Hsv& in, double& r, double& g, double& b) {
  const double h6 = in.h * 6.0;
  const int i = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = in.v * (1.0 - in.s);
  const double q = in.v * (1.0 - in.s * f);
  const double t = in.v * (1.0 - in.s * (1.0 - f));
  switch (i) {
    case 0: r = in.v, g = t, b = p; break;
    case 1: r = q, g = in.v, b = p; break;
    case 2: r = p, g = in.v, b = t; break;
    case 3: r = p, g = q, b = in.v; break;
    case 4: r = t, g = p, b = in.v; break;
    default: r = in.v, g = p, b = q; break;
  }
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

ClassLabel make_label(Activity activity, Group group) {
  return static_cast<ClassLabel>(static_cast<int>(activity) * 2 +
                                 (group == Group::Intention ? 0 : 1));
}

Activity label_activity(ClassLabel label) {
  return static_cast<Activity>(static_cast<int>(label) / 2);
}

Group label_group(ClassLabel label) {
  return static_cast<int>(label) % 2 == 0 ? Group::Intention : Group::Actual;
}

const char* class_name(ClassLabel label) {
  switch (label) {
    case ClassLabel::LiftingIntention: return "LiftingIntention";
    case ClassLabel::ActualLifting: return "ActualLifting";
    case ClassLabel::CarryingIntention: return "CarryingIntention";
    case ClassLabel::ActualCarrying: return "ActualCarrying";
    case ClassLabel::HoldingIntention: return "HoldingIntention";
    case ClassLabel::ActualHolding: return "ActualHolding";
    case ClassLabel::MountingIntention: return "MountingIntention";
    case ClassLabel::ActualMounting: return "ActualMounting";
  }
  return "?";
}

const char* group_name(Group group) {
  return group == Group::Intention ? "intention" : "actual";
}

std::pair<GroupSegment, GroupSegment> split_groups(const ingest::SignalRecording& rec,
                                                   double intention_seconds) {
  require(intention_seconds > 0, Err::BadRange, "intention_seconds must be positive");
  const std::int64_t boundary = round_index(intention_seconds * rec.sample_rate_hz);
  require(boundary >= 1, Err::BadRange, "intention window rounds to zero rows");
  require(rec.rows > boundary, Err::TooShort,
          "recording has " + std::to_string(rec.rows) + " rows; needs more than " +
              std::to_string(boundary));
  const std::int64_t c = rec.channels;
  auto a = make_segment(rec.subject_id, rec.activity, rec.trial, Modality::Signal,
                        Group::Intention, {boundary, c}, rec.data.data(), boundary * c);
  auto b = make_segment(rec.subject_id, rec.activity, rec.trial, Modality::Signal, Group::Actual,
                        {rec.rows - boundary, c}, rec.data.data() + boundary * c,
                        (rec.rows - boundary) * c);
  return {std::move(a), std::move(b)};
}

std::pair<GroupSegment, GroupSegment> split_groups(const ingest::FrameSequence& seq,
                                                   double intention_seconds) {
  require(intention_seconds > 0, Err::BadRange, "intention_seconds must be positive");
  const std::int64_t boundary = round_index(intention_seconds * seq.fps);
  require(boundary >= 1, Err::BadRange, "intention window rounds to zero frames");
  require(seq.t > boundary, Err::TooShort,
          "sequence has " + std::to_string(seq.t) + " frames; needs more than " +
              std::to_string(boundary));
  const std::int64_t fsz = seq.frame_size();
  auto a = make_segment(seq.subject_id, seq.activity, seq.trial, Modality::Frames,
                        Group::Intention, {boundary, seq.h, seq.w, seq.c}, seq.data.data(),
                        boundary * fsz);
  auto b = make_segment(seq.subject_id, seq.activity, seq.trial, Modality::Frames, Group::Actual,
                        {seq.t - boundary, seq.h, seq.w, seq.c}, seq.data.data() + boundary * fsz,
                        (seq.t - boundary) * fsz);
  return {std::move(a), std::move(b)};
}

std::vector<LabeledExample> segment_windows(const GroupSegment& seg, std::int64_t length,
                                            double overlap_fraction) {
  require(length >= 1, Err::BadRange, "window length must be >= 1");
  require(overlap_fraction >= 0.0 && overlap_fraction < 1.0, Err::BadRange,
          "overlap fraction must be in [0,1)");
  const std::int64_t stride =
      std::max<std::int64_t>(1, round_index(static_cast<double>(length) *
                                            (1.0 - overlap_fraction)));
  std::vector<LabeledExample> out;
  const std::int64_t n = seg.length();
  const std::int64_t slice = seg.slice_size();
  for (std::int64_t start = 0; start + length <= n; start += stride) {
    LabeledExample ex;
    ex.label = make_label(seg.activity, seg.group);
    ex.modality = seg.modality;
    ex.prov = {seg.subject, seg.activity, seg.trial, seg.group, start};
    ex.dims = seg.dims;
    ex.dims[0] = length;
    ex.data.assign(seg.data.begin() + start * slice,
                   seg.data.begin() + (start + length) * slice);
    out.push_back(std::move(ex));
  }
  return out;
}

SplitAssignment stratified_split(const std::vector<LabeledExample>& examples, SplitRatios ratios,
                                 SplitUnit unit, std::uint64_t seed) {
  const double rsum = ratios.train + ratios.validation + ratios.test;
  require(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0, Err::BadRange,
          "split ratios must all be positive");
  require(std::abs(rsum - 1.0) <= 1e-9, Err::BadRange, "split ratios must sum to 1");
  require(!examples.empty(), Err::EmptyClass, "no examples to split");

  // A unit is one example, or one whole recording-half (all windows of one
  // (subject, activity, trial, group)).
  struct Unit {
    std::vector<std::size_t> members;  // indices into `examples`
    std::tuple<int, Activity, int, Group, std::int64_t> order;
  };
  // strata keyed by (class id, subject)
  std::map<std::pair<int, int>, std::vector<Unit>> strata;
  if (unit == SplitUnit::Example) {
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& e = examples[i];
      auto& vec = strata[{static_cast<int>(e.label), e.prov.subject}];
      vec.push_back(Unit{{i}, std::tuple_cat(e.prov.recording_key(),
                                             std::tuple(e.prov.start))});
    }
  } else {
    std::map<std::tuple<int, Activity, int, Group>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < examples.size(); ++i)
      groups[examples[i].prov.recording_key()].push_back(i);
    for (auto& [key, members] : groups) {
      // keep window order stable inside the unit
      std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
        return examples[a].prov.order_key() < examples[b].prov.order_key();
      });
      const auto& first = examples[members.front()];
      auto& vec = strata[{static_cast<int>(first.label), first.prov.subject}];
      vec.push_back(Unit{std::move(members), std::tuple_cat(key, std::tuple<std::int64_t>(0))});
    }
  }

  SplitAssignment out;
  out.ratios = ratios;
  const double r[3] = {ratios.train, ratios.validation, ratios.test};
  // Cumulative shortfall of each split vs its exact fractional target; used
  // to break largest-remainder ties so tiny strata don't starve one split.
  double deficit[3] = {0.0, 0.0, 0.0};

  for (auto& [key, units] : strata) {
    std::sort(units.begin(), units.end(),
              [](const Unit& a, const Unit& b) { return a.order < b.order; });
    Rng rng(derive_seed(seed, tag_hash("split"), static_cast<std::uint64_t>(key.first),
                        static_cast<std::uint64_t>(key.second)));
    deterministic_shuffle(units, rng);

    const std::int64_t n = static_cast<std::int64_t>(units.size());
    double exact[3];
    std::int64_t take[3];
    std::int64_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
      exact[i] = static_cast<double>(n) * r[i];
      take[i] = static_cast<std::int64_t>(std::floor(exact[i]));
      assigned += take[i];
    }
    bool bumped[3] = {false, false, false};
    for (std::int64_t extra = n - assigned; extra > 0; --extra) {
      int best = -1;
      double best_score = -1e300;
      for (int i = 0; i < 3; ++i) {
        if (bumped[i]) continue;
        const double frac = exact[i] - static_cast<double>(take[i]);
        const double score = frac + deficit[i];
        if (score > best_score + 1e-12 ||
            (std::abs(score - best_score) <= 1e-12 && best >= 0 && r[i] > r[best])) {
          best = i;
          best_score = score;
        }
      }
      ++take[best];
      bumped[best] = true;
    }
    for (int i = 0; i < 3; ++i) deficit[i] += exact[i] - static_cast<double>(take[i]);

    std::size_t cursor = 0;
    auto emit = [&](std::vector<LabeledExample>& dst, std::int64_t count) {
      for (std::int64_t u = 0; u < count; ++u, ++cursor)
        for (std::size_t idx : units[cursor].members) dst.push_back(examples[idx]);
    };
    emit(out.train, take[0]);
    emit(out.validation, take[1]);
    emit(out.test, take[2]);
  }
  return out;
}

std::vector<LabeledExample> oversample_minority(const std::vector<LabeledExample>& examples,
                                                int factor, const std::set<Group>& target_groups,
                                                std::uint64_t seed) {
  require(factor >= 1, Err::BadRange, "oversample factor must be >= 1");
  std::vector<LabeledExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const int copies = target_groups.count(label_group(e.label)) ? factor : 1;
    for (int i = 0; i < copies; ++i) out.push_back(e);
  }
  Rng rng(derive_seed(seed, tag_hash("oversample")));
  deterministic_shuffle(out, rng);
  return out;
}

LabeledExample augment_signal_gaussian(const LabeledExample& example, double sigma,
                                       std::uint64_t seed) {
  require(sigma > 0.0, Err::NonPositiveSigma, "sigma must be positive");
  LabeledExample out = example;
  Rng rng(derive_seed(seed, tag_hash("gauss"), provenance_tag(example.prov)));
  for (auto& v : out.data) v = static_cast<float>(static_cast<double>(v) + rng.gaussian() * sigma);
  return out;
}

LabeledExample augment_frames(const LabeledExample& example, const FrameAugmentConfig& cfg,
                              std::uint64_t seed) {
  require(example.modality == Modality::Frames && example.dims.size() == 4, Err::ShapeMismatch,
          "augment_frames needs a frame example");
  require(cfg.brightness >= 0.0 && cfg.brightness <= 1.0, Err::BadRange,
          "brightness range must be in [0,1]");
  require(cfg.contrast >= 0.0 && cfg.contrast < 1.0, Err::BadRange,
          "contrast range must be in [0,1)");
  require(cfg.saturation >= 0.0 && cfg.saturation < 1.0, Err::BadRange,
          "saturation range must be in [0,1)");
  require(cfg.hue >= 0.0 && cfg.hue <= 0.5, Err::BadRange, "hue range must be in [0,0.5]");
  require(cfg.noise_sigma >= 0.0, Err::BadRange, "noise sigma must be >= 0");
  const std::int64_t c = example.dims[3];
  require(c == 3, Err::ShapeMismatch, "frame augmentation requires 3 channels");

  // one parameter draw per clip, fixed order
  Rng rng(derive_seed(seed, tag_hash("frameaug"), provenance_tag(example.prov)));
  const bool flip = cfg.horizontal_flip && rng.below(2) == 1;
  const double d_bright = rng.uniform(-cfg.brightness, cfg.brightness);
  const double f_contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
  const double f_sat = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
  const double d_hue = rng.uniform(-cfg.hue, cfg.hue);

  LabeledExample out = example;
  const std::int64_t f = example.dims[0], h = example.dims[1], w = example.dims[2];
  if (flip) {
    for (std::int64_t fi = 0; fi < f; ++fi)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w / 2; ++x)
          for (std::int64_t ch = 0; ch < c; ++ch)
            std::swap(out.data[static_cast<std::size_t>(((fi * h + y) * w + x) * c + ch)],
                      out.data[static_cast<std::size_t>(((fi * h + y) * w + (w - 1 - x)) * c +
                                                        ch)]);
  }
  for (std::size_t i = 0; i + 2 < out.data.size(); i += 3) {
    double r = out.data[i], g = out.data[i + 1], b = out.data[i + 2];
    r += d_bright;
    g += d_bright;
    b += d_bright;
    r = 0.5 + f_contrast * (r - 0.5);
    g = 0.5 + f_contrast * (g - 0.5);
    b = 0.5 + f_contrast * (b - 0.5);
    const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
    r = luma + f_sat * (r - luma);
    g = luma + f_sat * (g - luma);
    b = luma + f_sat * (b - luma);
    if (d_hue != 0.0) {
      Hsv hsv = rgb_to_hsv(std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0),
                           std::clamp(b, 0.0, 1.0));
      hsv.h = std::fmod(hsv.h + d_hue + 1.0, 1.0);
      hsv_to_rgb(hsv, r, g, b);
    }
    out.data[i] = clamp01(r);
    out.data[i + 1] = clamp01(g);
    out.data[i + 2] = clamp01(b);
  }
  if (cfg.noise_sigma > 0.0) {
    for (auto& v : out.data) v = clamp01(static_cast<double>(v) + rng.gaussian() * cfg.noise_sigma);
  }
  return out;
}

ScalerParams fit_scaler(const std::vector<LabeledExample>& train_examples, double epsilon) {
  require(!train_examples.empty(), Err::EmptyInput, "cannot fit a scaler on an empty set");
  require(train_examples.front().dims.size() == 2, Err::ShapeMismatch,
          "fit_scaler expects signal windows [L,C]");
  const std::int64_t c = train_examples.front().dims[1];

  // Welford, per channel, across all rows of all windows
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  std::vector<double> m2(static_cast<std::size_t>(c), 0.0);
  std::int64_t n = 0;
  for (const auto& e : train_examples) {
    require(e.dims.size() == 2 && e.dims[1] == c, Err::ChannelMismatch,
            "inconsistent channel counts in training set");
    const std::int64_t rows = e.dims[0];
    for (std::int64_t rI = 0; rI < rows; ++rI) {
      ++n;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double x = e.data[static_cast<std::size_t>(rI * c + ch)];
        const double delta = x - mean[static_cast<std::size_t>(ch)];
        mean[static_cast<std::size_t>(ch)] += delta / static_cast<double>(n);
        m2[static_cast<std::size_t>(ch)] += delta * (x - mean[static_cast<std::size_t>(ch)]);
      }
    }
  }
  require(n >= 1, Err::EmptyInput, "training set has no rows");

  ScalerParams p;
  p.epsilon = epsilon;
  p.mean = std::move(mean);
  p.stddev.resize(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch)
    p.stddev[static_cast<std::size_t>(ch)] =
        std::sqrt(m2[static_cast<std::size_t>(ch)] / static_cast<double>(n));
  return p;
}

LabeledExample apply_scaler(const ScalerParams& params, const LabeledExample& example) {
  require(example.dims.size() == 2, Err::ShapeMismatch, "apply_scaler expects [L,C] windows");
  const std::int64_t c = example.dims[1];
  require(c == params.channels(), Err::ChannelMismatch,
          "scaler fit on " + std::to_string(params.channels()) + " channels, example has " +
              std::to_string(c));
  LabeledExample out = example;
  const std::int64_t rows = example.dims[0];
  for (std::int64_t rI = 0; rI < rows; ++rI)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::size_t i = static_cast<std::size_t>(rI * c + ch);
      out.data[i] = static_cast<float>(
          (static_cast<double>(example.data[i]) - params.mean[static_cast<std::size_t>(ch)]) /
          params.divisor(ch));
    }
  return out;
}

LabeledExample scale_frames(const LabeledExample& example, std::int64_t target_h,
                            std::int64_t target_w) {
  require(example.modality == Modality::Frames && example.dims.size() == 4, Err::ShapeMismatch,
          "scale_frames needs a frame example");
  require(target_h >= 1 && target_w >= 1, Err::BadRange, "target resolution must be positive");
  for (float v : example.data)
    require(v >= 0.0f && v <= 255.0f, Err::OutOfRange,
            "raw frame values must lie in [0,255], got " + std::to_string(v));

  const std::int64_t f = example.dims[0], h = example.dims[1], w = example.dims[2],
                     c = example.dims[3];
  LabeledExample out = example;
  out.dims = {f, target_h, target_w, c};
  out.data.assign(static_cast<std::size_t>(f * target_h * target_w * c), 0.0f);

  const double sy = static_cast<double>(h) / static_cast<double>(target_h);
  const double sx = static_cast<double>(w) / static_cast<double>(target_w);
  for (std::int64_t fi = 0; fi < f; ++fi) {
    const float* src = example.data.data() + fi * h * w * c;
    float* dst = out.data.data() + fi * target_h * target_w * c;
    for (std::int64_t y = 0; y < target_h; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(h - 1));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
      const std::int64_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::int64_t x = 0; x < target_w; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(w - 1));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
        const std::int64_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          auto at = [&](std::int64_t yy, std::int64_t xx) {
            return static_cast<double>(src[(yy * w + xx) * c + ch]) / 255.0;
          };
          const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
          const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
          dst[(y * target_w + x) * c + ch] = static_cast<float>(top * (1.0 - wy) + bot * wy);
        }
      }
    }
  }
  return out;
}

std::vector<double> compute_class_weights(const std::vector<std::int64_t>& counts) {
  require(!counts.empty(), Err::EmptyInput, "no class counts");
  const std::int64_t k = static_cast<std::int64_t>(counts.size());
  std::int64_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    require(counts[i] >= 1, Err::ZeroCountClass,
            "class " + std::to_string(i) + " has zero examples");
    total += counts[i];
  }
  std::vector<double> w(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    w[i] = static_cast<double>(total) /
           (static_cast<double>(k) * static_cast<double>(counts[i]));
  return w;
}

std::vector<std::int64_t> count_classes(const std::vector<LabeledExample>& examples) {
  std::vector<std::int64_t> counts(kNumClasses, 0);
  for (const auto& e : examples) ++counts[static_cast<std::size_t>(e.label)];
  return counts;
}

}  // namespace mir::pipeline

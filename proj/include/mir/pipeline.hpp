#ifndef MIR_PIPELINE_HPP
#define MIR_PIPELINE_HPP

#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mir/common.hpp"
#include "mir/ingest.hpp"
#include "mir/tensor.hpp"

namespace mir::pipeline {

inline constexpr int kNumClasses = 8;

// Class ids are (activity, group) pairs in this fixed order; the id is what
// gets serialized, so the order is part of the on-disk contract.
enum class ClassLabel : std::uint8_t {
  LiftingIntention = 0,
  ActualLifting = 1,
  CarryingIntention = 2,
  ActualCarrying = 3,
  HoldingIntention = 4,
  ActualHolding = 5,
  MountingIntention = 6,
  ActualMounting = 7,
};

enum class Group : std::uint8_t { Intention = 0, Actual = 1 };

ClassLabel make_label(ingest::Activity activity, Group group);
ingest::Activity label_activity(ClassLabel label);
Group label_group(ClassLabel label);
const char* class_name(ClassLabel label);
const char* group_name(Group group);

struct Provenance {
  int subject = 0;
  ingest::Activity activity = ingest::Activity::Lifting;
  int trial = 0;
  Group group = Group::Intention;
  std::int64_t start = 0;  // window start index within its GroupSegment

  // identity of the source recording-half; the unit for leakage-free splits
  auto recording_key() const { return std::tuple(subject, activity, trial, group); }
  auto order_key() const { return std::tuple(subject, activity, trial, group, start); }
};

// A contiguous slice of one recording holding a single group label.
struct GroupSegment {
  int subject = 0;
  ingest::Activity activity = ingest::Activity::Lifting;
  int trial = 0;
  ingest::Modality modality = ingest::Modality::Signal;
  Group group = Group::Intention;
  Shape dims;               // [N,C] signal, [T,H,W,C] frames
  std::vector<float> data;  // row-major

  std::int64_t length() const { return dims.empty() ? 0 : dims[0]; }
  std::int64_t slice_size() const {
    std::int64_t n = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) n *= dims[i];
    return n;
  }
};

// One fixed-length window with its label and provenance.
struct LabeledExample {
  ClassLabel label = ClassLabel::LiftingIntention;
  ingest::Modality modality = ingest::Modality::Signal;
  Provenance prov;
  Shape dims;               // [L,C] signal, [F,H,W,C] frames
  std::vector<float> data;
};

struct ScalerParams {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
  double epsilon = 1e-8;

  std::int64_t channels() const { return static_cast<std::int64_t>(mean.size()); }
  double divisor(std::int64_t c) const {
    return stddev[static_cast<std::size_t>(c)] < epsilon ? 1.0
                                                         : stddev[static_cast<std::size_t>(c)];
  }
  bool constant(std::int64_t c) const { return stddev[static_cast<std::size_t>(c)] < epsilon; }
};

struct SplitRatios {
  double train = 0.7, validation = 0.15, test = 0.15;
};

enum class SplitUnit { Example, Recording };

struct SplitAssignment {
  std::vector<LabeledExample> train, validation, test;
  SplitRatios ratios;
};

struct FrameAugmentConfig {
  bool horizontal_flip = true;  // applied with probability 1/2
  double brightness = 0.2;      // additive delta drawn from [-b, +b]
  double contrast = 0.2;        // factor drawn from [1-c, 1+c], pivot 0.5
  double saturation = 0.2;      // factor drawn from [1-s, 1+s], pivot luma
  double hue = 0.05;            // hue rotation drawn from [-h, +h] turns
  double noise_sigma = 0.0;     // additive gaussian in [0,1] space
};

// ---- operations ----

std::pair<GroupSegment, GroupSegment> split_groups(const ingest::SignalRecording& rec,
                                                   double intention_seconds);
std::pair<GroupSegment, GroupSegment> split_groups(const ingest::FrameSequence& seq,
                                                   double intention_seconds);

std::vector<LabeledExample> segment_windows(const GroupSegment& seg, std::int64_t length,
                                            double overlap_fraction);

SplitAssignment stratified_split(const std::vector<LabeledExample>& examples, SplitRatios ratios,
                                 SplitUnit unit, std::uint64_t seed);

std::vector<LabeledExample> oversample_minority(const std::vector<LabeledExample>& examples,
                                                int factor, const std::set<Group>& target_groups,
                                                std::uint64_t seed);

LabeledExample augment_signal_gaussian(const LabeledExample& example, double sigma,
                                       std::uint64_t seed);

LabeledExample augment_frames(const LabeledExample& example, const FrameAugmentConfig& cfg,
                              std::uint64_t seed);

ScalerParams fit_scaler(const std::vector<LabeledExample>& train_examples, double epsilon = 1e-8);
LabeledExample apply_scaler(const ScalerParams& params, const LabeledExample& example);

// Map raw [0,255] frame values to [0,1] and bilinearly resize to the target
// resolution; a no-op resize when the clip is already target-sized.
LabeledExample scale_frames(const LabeledExample& example, std::int64_t target_h,
                            std::int64_t target_w);

std::vector<double> compute_class_weights(const std::vector<std::int64_t>& counts);

// Per-class example counts indexed by class id.
std::vector<std::int64_t> count_classes(const std::vector<LabeledExample>& examples);

}  // namespace mir::pipeline

#endif  // MIR_PIPELINE_HPP

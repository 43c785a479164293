#include "mir/common.hpp"

namespace mir {

const char* err_name(Err kind) {
  switch (kind) {
    case Err::MissingFile: return "MissingFile";
    case Err::MalformedRow: return "MalformedRow";
    case Err::EmptyRecording: return "EmptyRecording";
    case Err::BadMagic: return "BadMagic";
    case Err::DimensionMismatch: return "DimensionMismatch";
    case Err::UnsupportedVersion: return "UnsupportedVersion";
    case Err::ParseError: return "ParseError";
    case Err::DuplicatePath: return "DuplicatePath";
    case Err::RangeError: return "RangeError";
    case Err::IoFailure: return "IoFailure";
    case Err::TooShort: return "TooShort";
    case Err::EmptyClass: return "EmptyClass";
    case Err::NonPositiveSigma: return "NonPositiveSigma";
    case Err::BadRange: return "BadRange";
    case Err::EmptyInput: return "EmptyInput";
    case Err::ChannelMismatch: return "ChannelMismatch";
    case Err::OutOfRange: return "OutOfRange";
    case Err::ZeroCountClass: return "ZeroCountClass";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::KernelTooLarge: return "KernelTooLarge";
    case Err::WindowTooLarge: return "WindowTooLarge";
    case Err::RateOutOfRange: return "RateOutOfRange";
    case Err::LabelOutOfRange: return "LabelOutOfRange";
    case Err::NegativeRate: return "NegativeRate";
    case Err::NotScalarLoss: return "NotScalarLoss";
    case Err::NumericError: return "NumericError";
    case Err::NotDivisible: return "NotDivisible";
    case Err::OddSpatialDims: return "OddSpatialDims";
    case Err::HeadsDontDivide: return "HeadsDontDivide";
    case Err::VersionMismatch: return "VersionMismatch";
    case Err::CorruptPayload: return "CorruptPayload";
    case Err::ConfigMismatch: return "ConfigMismatch";
    case Err::EmptySplit: return "EmptySplit";
    case Err::DivergedLoss: return "DivergedLoss";
    case Err::EmptyGrid: return "EmptyGrid";
    case Err::TooFewSamples: return "TooFewSamples";
    case Err::BadSpec: return "BadSpec";
    case Err::ConfigError: return "ConfigError";
  }
  return "UnknownError";
}

ErrCategory error_category(Err kind) {
  switch (kind) {
    case Err::ConfigError:
    case Err::BadSpec:
    case Err::BadRange:
    case Err::EmptyGrid:
    case Err::VersionMismatch:
    case Err::ConfigMismatch:
    case Err::UnsupportedVersion:
      return ErrCategory::Config;
    case Err::NumericError:
    case Err::DivergedLoss:
    case Err::NonPositiveSigma:
    case Err::NegativeRate:
    case Err::RateOutOfRange:
      return ErrCategory::Numeric;
    default:
      return ErrCategory::Data;
  }
}

}  // namespace mir

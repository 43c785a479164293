#ifndef MIR_COMMON_HPP
#define MIR_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mir {

// Every failure mode the library can report. CLI exit codes are derived
// from the category of the kind (see error_category).
enum class Err {
  // ingest
  MissingFile,
  MalformedRow,
  EmptyRecording,
  BadMagic,
  DimensionMismatch,
  UnsupportedVersion,
  ParseError,
  DuplicatePath,
  RangeError,
  IoFailure,
  // pipeline
  TooShort,
  EmptyClass,
  NonPositiveSigma,
  BadRange,
  EmptyInput,
  ChannelMismatch,
  OutOfRange,
  ZeroCountClass,
  // engine
  ShapeMismatch,
  KernelTooLarge,
  WindowTooLarge,
  RateOutOfRange,
  LabelOutOfRange,
  NegativeRate,
  NotScalarLoss,
  NumericError,
  // models
  NotDivisible,
  OddSpatialDims,
  HeadsDontDivide,
  VersionMismatch,
  CorruptPayload,
  ConfigMismatch,
  // train/eval
  EmptySplit,
  DivergedLoss,
  EmptyGrid,
  TooFewSamples,
  // synth / cli
  BadSpec,
  ConfigError,
};

enum class ErrCategory { Config, Data, Numeric };

const char* err_name(Err kind);
ErrCategory error_category(Err kind);

class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& message)
      : std::runtime_error(std::string(err_name(kind)) + ": " + message),
        kind_(kind) {}

  Err kind() const { return kind_; }
  ErrCategory category() const { return error_category(kind_); }

 private:
  Err kind_;
};

[[noreturn]] inline void raise(Err kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool cond, Err kind, const std::string& message) {
  if (!cond) raise(kind, message);
}

}  // namespace mir

#endif  // MIR_COMMON_HPP

#pragma once

// Error taxonomy shared by every meltmon module. Each failure carries a
// stable code (machine-parseable) plus free-form context.

#include <stdexcept>
#include <string>
#include <string_view>

namespace meltmon {

enum class Errc {
  // sensor data
  EmptyTrace,
  InconsistentVectorLength,
  InsufficientSpatialCoverage,
  NonPositiveTrend,
  ChannelCountMismatch,
  // process models
  InsufficientSamplesAtIndex,
  DegenerateCovariance,
  SchemaVersionMismatch,
  CorruptFile,
  // mmht
  DimensionMismatch,
  EmptyKernel,
  MissingPartIds,
  InsufficientSamples,
  LengthMismatch,
  UnknownLabelString,
  // quality regression
  TooFewLayers,
  TooFewSamples,
  RankDeficient,
  ConstantActual,
  // simulator
  EmptyBuild,
  FootprintOutsideEnvelope,
  EmptyRegion,
  // generic
  InvalidArgument,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::EmptyTrace: return "EmptyTrace";
    case Errc::InconsistentVectorLength: return "InconsistentVectorLength";
    case Errc::InsufficientSpatialCoverage: return "InsufficientSpatialCoverage";
    case Errc::NonPositiveTrend: return "NonPositiveTrend";
    case Errc::ChannelCountMismatch: return "ChannelCountMismatch";
    case Errc::InsufficientSamplesAtIndex: return "InsufficientSamplesAtIndex";
    case Errc::DegenerateCovariance: return "DegenerateCovariance";
    case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyKernel: return "EmptyKernel";
    case Errc::MissingPartIds: return "MissingPartIds";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::UnknownLabelString: return "UnknownLabelString";
    case Errc::TooFewLayers: return "TooFewLayers";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::ConstantActual: return "ConstantActual";
    case Errc::EmptyBuild: return "EmptyBuild";
    case Errc::FootprintOutsideEnvelope: return "FootprintOutsideEnvelope";
    case Errc::EmptyRegion: return "EmptyRegion";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string context)
      : std::runtime_error(std::string("code=") + errc_name(code) +
                           " context=\"" + context + "\""),
        code_(code),
        context_(std::move(context)) {}

  Errc code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  Errc code_;
  std::string context_;
};

[[noreturn]] inline void fail(Errc code, std::string context) {
  throw Error(code, std::move(context));
}

inline void require(bool cond, Errc code, std::string_view context) {
  if (!cond) fail(code, std::string(context));
}

}  // namespace meltmon

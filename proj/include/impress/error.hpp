#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace impress {

enum class ErrorKind {
  InvalidShape,
  ShapeMismatch,
  MissingGradient,
  NonFinite,
  GeometryMismatch,
  BoundaryPoint,
  ParseError,
  RangeError,
  SplitError,
  SizeError,
  EpisodeInfeasible,
  TrainingDiverged,
  ScheduleError,
  StepError,
  ModelNotTrained,
  ParamError,
  EmptyClass,
  LabelError,
  DiagnosticUnavailable,
  IoError,
  FormatError,
  VersionError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidShape: return "InvalidShape";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::GeometryMismatch: return "GeometryMismatch";
    case ErrorKind::BoundaryPoint: return "BoundaryPoint";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::SplitError: return "SplitError";
    case ErrorKind::SizeError: return "SizeError";
    case ErrorKind::EpisodeInfeasible: return "EpisodeInfeasible";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::ScheduleError: return "ScheduleError";
    case ErrorKind::StepError: return "StepError";
    case ErrorKind::ModelNotTrained: return "ModelNotTrained";
    case ErrorKind::ParamError: return "ParamError";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::LabelError: return "LabelError";
    case ErrorKind::DiagnosticUnavailable: return "DiagnosticUnavailable";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::VersionError: return "VersionError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so the
/// CLI can emit a stable, machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace impress

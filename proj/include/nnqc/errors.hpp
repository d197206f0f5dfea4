#pragma once

#include <stdexcept>
#include <string>

namespace nnqc {

// Process exit codes used by the CLI. Library code throws the typed
// exceptions below; tools/nnqc_main.cpp maps them to these codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kMissingPrerequisite = 3,
  kTrainingDivergence = 4,
  kBandUnreachable = 5,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A required earlier pipeline stage (fingerprint, stage-1 checkpoint, ...)
// is missing or inconsistent with the current dataset.
struct PrerequisiteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// degrade_to_band could not land in the requested DSC band; carries the
// closest achieved value so callers can report or fall back.
struct BandUnreachable : std::runtime_error {
  BandUnreachable(const std::string& msg, double closest)
      : std::runtime_error(msg), closest_dsc(closest) {}
  double closest_dsc = -1.0;
};

}  // namespace nnqc

#pragma once

#include <stdexcept>
#include <string>

namespace threadrecon {

/// Pipeline stages, in execution order.
enum class Stage { StereoMatch, KeypointGraph, MvsFit };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::StereoMatch: return "stereo_match";
    case Stage::KeypointGraph: return "keypoint_graph";
    case Stage::MvsFit: return "mvs_fit";
  }
  return "unknown";
}

/// Invalid parameters or calibration; raised before or instead of computing.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A reconstruction failure attributable to one stage ("no reliable pixels",
/// "MVS infeasible", ...). These are expected outcomes, not bugs.
class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& reason)
      : std::runtime_error(reason), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

}  // namespace threadrecon

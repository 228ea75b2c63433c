#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "threadrecon/errors.hpp"
#include "threadrecon/keypoints.hpp"
#include "threadrecon/metrics.hpp"
#include "threadrecon/mvs.hpp"
#include "threadrecon/stereo.hpp"
#include "threadrecon/synth.hpp"

namespace threadrecon {

struct ReconstructionParams {
  MatchParams match;
  ClusterParams cluster;
  FitParams fit;

  void validate() const;
};

/// Everything produced by one successful reconstruction.
struct Reconstruction {
  DepthField field;
  std::vector<Pixel> reliable;
  KeypointChain chain;
  DepthCorridor corridor;
  FitResult initial;
  MvsResult mvs;
  SplineCurve pixel_spline;
  SplineCurve camera_spline;
  std::array<double, 3> stage_seconds{};  // stereo_match, keypoint_graph, mvs_fit
};

/// Stereo matching -> keypoint ordering -> minimum-variation spline.
/// Failures raise StageError tagged with the failing stage.
Reconstruction reconstruct(const GrayImage& left, const GrayImage& right, const Mask& left_mask,
                           const Mask& right_mask, const StereoRig& rig,
                           const ReconstructionParams& params);

struct PipelineConfig {
  ReconstructionParams params;
  std::filesystem::path rig;
  std::filesystem::path left, right, mask_left, mask_right;
  std::filesystem::path output_dir;
  int verbosity = 0;

  /// Throws ConfigError for missing input files or out-of-range parameters.
  void validate() const;
};

/// Parses a config document; relative paths resolve against `base_dir`.
/// Unknown keys are rejected. Missing keys keep their defaults.
PipelineConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
ReconstructionParams params_from_json(const std::string& text);
std::string params_to_json(const ReconstructionParams& params);

/// Input paths for a scene bundle directory (left.png, right.png, ...).
PipelineConfig config_for_bundle(const std::filesystem::path& bundle_dir,
                                 const ReconstructionParams& params,
                                 const std::filesystem::path& output_dir);

/// Process exit codes; each failing stage has its own.
enum ExitCode : int {
  kExitSuccess = 0,
  kExitUsage = 1,
  kExitIo = 2,
  kExitStereoMatch = 3,
  kExitKeypointGraph = 4,
  kExitMvsFit = 5,
  kExitGeneration = 6,
};
int exit_code_for(Stage stage);

struct RunOutcome {
  bool success = false;
  std::optional<Stage> failed_stage;
  std::string reason;
  std::filesystem::path spline_path;        // camera frame
  std::filesystem::path pixel_spline_path;
  std::vector<std::filesystem::path> diagnostics;
  std::array<double, 3> stage_seconds{};

  int exit_code() const;
};

/// Runs the pipeline and writes spline_camera.json, spline_pixel.json,
/// keypoints.json and solver_trace.csv (or failure.json) into output_dir.
RunOutcome run_reconstruct(const PipelineConfig& config);

/// Writes scene_<seed> bundles for seeds [first, last] and manifest.json.
std::vector<std::string> run_generate(std::uint64_t first, std::uint64_t last, const SceneConfig& config,
                                      const std::filesystem::path& dataset_dir);

struct EvaluationSummary {
  int total = 0;
  int successes = 0;
  double mean_e_S = 0.0, std_e_S = 0.0;
  double mean_e_S_max = 0.0, std_e_S_max = 0.0;
  double mean_e_len = 0.0, std_e_len = 0.0;
  double mean_e2d_mean_L = 0.0, mean_e2d_max_L = 0.0;
  double mean_e2d_mean_R = 0.0, mean_e2d_max_R = 0.0;
  std::vector<std::string> missing;
};

/// Reconstructs one in-memory scene and scores it against its ground truth.
/// Reconstruction failures are reported in the row, not thrown.
MetricsReport evaluate_scene(const std::string& name, const SceneBundle& bundle,
                             const ReconstructionParams& params, SplineCurve* camera_spline = nullptr);

EvaluationSummary summarize(const std::vector<MetricsReport>& rows);
std::string summary_csv(const EvaluationSummary& s);

/// Evaluates every scene listed in dataset_dir/manifest.json, writing
/// metrics.csv and summary.csv into output_dir.
EvaluationSummary run_evaluate(const std::filesystem::path& dataset_dir, const ReconstructionParams& params,
                               const std::filesystem::path& output_dir);

}  // namespace threadrecon

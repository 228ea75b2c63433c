#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "threadrecon/bspline.hpp"
#include "threadrecon/image.hpp"
#include "threadrecon/stereo.hpp"

namespace threadrecon {

/// Generation ranges for procedural thread scenes. Lengths in rig units.
struct SceneConfig {
  int width = 640;
  int height = 480;
  double focal = 800.0;
  double baseline = 5.0;
  double depth_min = 80.0;
  double depth_max = 160.0;
  double length_min = 60.0;
  double length_max = 140.0;
  double stroke_width_min = 2.0;  // pixels
  double stroke_width_max = 3.0;
  double noise_sigma = 0.0;       // additive Gaussian intensity noise
  double texture_amplitude = 15.0;  // intensity variation along the thread
  int truth_vertices = 20001;
  int image_margin = 8;           // pixels kept free at the image border
  double min_self_distance = 8.0; // pixels between non-neighboring stroke parts
  int max_retries = 500;

  StereoRig rig() const;
  void validate() const;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  std::vector<Vec3> ground_truth;  // left-camera frame polyline
  GrayImage left, right;
  Mask left_mask, right_mask;
  StereoRig rig;
  double curve_length = 0.0;
  double stroke_width = 0.0;
  /// Disparity and arc-length position of the nearest centerline point for
  /// each left mask pixel (NaN elsewhere).
  Raster<double> true_disparity;
  Raster<double> true_arclength;
};

/// Deterministic per (seed, config). Throws GenerationError when no curve
/// satisfying the frustum and self-distance constraints is found.
SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& config = {});

/// Renders a given left-camera-frame centerline into both views.
SyntheticScene render_scene(std::vector<Vec3> truth, const SceneConfig& config, double stroke_width,
                            std::uint64_t seed = 0);

double polyline_length(const std::vector<Vec3>& polyline);

/// Writes left.png, right.png, mask_left.png, mask_right.png, rig.json,
/// truth.csv and scene.json into `dir` (created atomically via a temporary
/// sibling directory).
void write_scene_bundle(const std::filesystem::path& dir, const SyntheticScene& scene);

struct SceneBundle {
  GrayImage left, right;
  Mask left_mask, right_mask;
  StereoRig rig;
  std::vector<Vec3> ground_truth;
};

SceneBundle read_scene_bundle(const std::filesystem::path& dir);
std::vector<Vec3> read_truth_csv(const std::filesystem::path& path);

}  // namespace threadrecon

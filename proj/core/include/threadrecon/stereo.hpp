#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "threadrecon/image.hpp"

namespace threadrecon {

/// Rectified stereo calibration.
///
/// Q maps homogeneous (x, y, disparity, 1) to (X, Y, Z, W); G is the left
/// camera intrinsics. For the canonical rig Q(3,2) = 1 / baseline.
struct StereoRig {
  Eigen::Matrix4d Q = Eigen::Matrix4d::Identity();
  Eigen::Matrix3d G = Eigen::Matrix3d::Identity();
  std::string units = "mm";

  /// Rig with focal length f (px), principal point (cx, cy) and baseline B.
  static StereoRig canonical(double focal, double cx, double cy, double baseline,
                             std::string units = "mm");

  double baseline() const;
  double focal() const { return G(0, 0); }

  /// Throws ConfigError if Q or G is singular.
  void validate() const;
};

StereoRig rig_from_json(const std::string& text);
std::string rig_to_json(const StereoRig& rig);
StereoRig read_rig(const std::filesystem::path& path);
void write_rig(const std::filesystem::path& path, const StereoRig& rig);

struct MatchParams {
  int alpha = 80;
  int window_radius = 2;
  double eps1 = 8.0;
  double eps2 = 5.0;
  double eps3 = 0.8;
  double reliability_threshold = 0.9;
  double emin_floor = 1.0;

  void validate() const;
};

/// Rectified image, its segmentation, and the lifted intensities (segmented
/// pixels keep their value, everything else becomes 255).
struct SegmentedImage {
  GrayImage intensities;
  Mask mask;
  GrayImage lifted;
};

constexpr std::uint8_t kBackground = 255;

/// Throws StageError(StereoMatch, "empty segmentation") for an empty mask and
/// std::invalid_argument when mask and image sizes differ.
SegmentedImage lift(const GrayImage& image, const Mask& mask);

/// Sum of squared lifted differences over the window around p restricted to
/// the left mask; right samples outside the image count as background.
double match_energy(const SegmentedImage& left, const SegmentedImage& right, Pixel p, int d,
                    const MatchParams& params);

struct DisparityChoice {
  int d_min = 0;
  double e_min = 0.0;
  int d_next = 0;
  double e_next = 0.0;
};

/// Best disparity over [0, alpha] (ties toward smaller d) and the best one at
/// least 3 levels away from it.
DisparityChoice best_disparities(const SegmentedImage& left, const SegmentedImage& right, Pixel p,
                                 const MatchParams& params);

/// Logistic reliability of a match from its best and runner-up energies.
double reliability(double e_min, double e_next, const MatchParams& params);

struct DepthSample {
  int d_min = 0;
  int d_next = 0;
  double e_min = 0.0;
  double e_next = 0.0;
  double reliability = 0.0;
  double depth = 0.0;
  bool valid = false;
};

/// Per-pixel stereo result over the left segmentation.
struct DepthField {
  Raster<DepthSample> samples;
  Mask left_mask;
  std::vector<Pixel> pixels;  // P_L in row-major order

  const DepthSample& at(Pixel p) const { return samples(p); }
  int width() const { return samples.width(); }
  int height() const { return samples.height(); }
};

/// Depth of pixel p at disparity d through Q; NaN when W vanishes.
double disparity_to_depth(const StereoRig& rig, Pixel p, double d);

/// Stereo-matches every left segmented pixel. Inputs must be rectified.
DepthField depth_map(const SegmentedImage& left, const SegmentedImage& right, const StereoRig& rig,
                     const MatchParams& params);

}  // namespace threadrecon

#pragma once

#include <string>
#include <vector>

#include "threadrecon/bspline.hpp"
#include "threadrecon/image.hpp"
#include "threadrecon/stereo.hpp"

namespace threadrecon {

/// Exact distance from a point to a polyline (segment-wise).
double point_polyline_distance(const Vec3& p, const std::vector<Vec3>& polyline);

struct CurveErrors {
  double mean = 0.0;
  double max = 0.0;
};

/// Mean and max distance from 1000 uniform samples of the reconstruction to
/// the ground-truth polyline.
CurveErrors curve_errors(const SplineCurve& reconstruction, const std::vector<Vec3>& truth,
                         int samples = 1000);

double length_error(const SplineCurve& reconstruction, const std::vector<Vec3>& truth);

/// Exact Euclidean distance from every pixel to the nearest mask member
/// (Felzenszwalb-Huttenlocher); +inf everywhere for an empty mask.
Raster<double> distance_transform(const Mask& mask);

struct ReprojectionErrors {
  double mean_left = 0.0, max_left = 0.0;
  double mean_right = 0.0, max_right = 0.0;
  int behind_camera = 0;  // samples with Z <= 0, charged the image diagonal
};

/// Projects 1000 samples of a camera-frame spline into both rectified views
/// and measures the pixel distance to the nearest mask pixel.
ReprojectionErrors reprojection_error(const SplineCurve& reconstruction, const Mask& left_mask,
                                      const Mask& right_mask, const StereoRig& rig, int samples = 1000);

struct MetricsReport {
  std::string scene;
  bool success = false;
  std::string status;  // "ok" or "<stage>: <reason>"
  double e_S = 0.0;
  double e_S_max = 0.0;
  double e_len = 0.0;
  double e2d_mean_L = 0.0, e2d_max_L = 0.0;
  double e2d_mean_R = 0.0, e2d_max_R = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);

}  // namespace threadrecon

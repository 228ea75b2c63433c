#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "threadrecon/bspline.hpp"
#include "threadrecon/keypoints.hpp"
#include "threadrecon/stereo.hpp"

namespace threadrecon {

struct FitParams {
  int m = 15;
  int degree = 4;
  int gap_threshold = 20;
  double r_k_fraction = 0.1;
  double boundary_factor = 1.5;
  /// Minimum corridor half-width in depth units; <= 0 selects
  /// min_halfwidth_fraction times the median keypoint depth.
  double min_halfwidth = 0.0;
  double min_halfwidth_fraction = 0.01;
  int constraint_samples = 100;
  int max_iterations = 200;
  double tolerance = 1e-10;
  /// Largest accepted constraint violation of the returned spline.
  double feasibility_tolerance = 1e-7;
  /// The initial fit also uses this many chord-length-uniform samples of the
  /// H polyline per control point; 0 fits the points of H alone.
  int polyline_samples_per_control_point = 10;

  void validate() const;
};

/// Number of points inserted into a gap of `gap_pixels` segmented pixels.
int extra_point_count(int gap_pixels, int gap_threshold);

/// Fills chain.dense (H) and chain.keypoint_in_dense by inserting raw stereo
/// points into long unclustered stretches between consecutive keypoints.
KeypointChain densify(KeypointChain chain, const Mask& segmented, const DepthField& field,
                      const FitParams& params);

/// Least-squares line of depth against order index.
struct LocalLine {
  double intercept = 0.0;
  double slope = 0.0;
  double operator()(double index) const { return intercept + slope * index; }
};

/// Depth bounds for every point of H (indexed by order in H).
struct DepthCorridor {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<LocalLine> lines;  // one per keypoint
  std::vector<double> keypoint_index;  // order index of each keypoint in H
  double min_halfwidth = 0.0;

  /// Bounds at fractional order index t by linear interpolation.
  std::pair<double, double> at(double t) const;
};

DepthCorridor build_corridor(const KeypointChain& chain, const FitParams& params);

/// Centerline-initialized spline over H; parameter_assignment maps each point
/// of H to its spline parameter. Throws StageError(MvsFit, ...) when H has
/// fewer than m points.
FitResult init_spline(const std::vector<Vec3>& dense, const DepthCorridor& corridor,
                      const FitParams& params);

/// Integrand evaluation for the minimum-variation objective on the depth graph.
///
/// The objective is the integral over u of (d kappa / du)^2 / sqrt(1 + S_z'^2)
/// with kappa the graph curvature of S_z; it depends only on the depth
/// coordinates b_z of the control points.
class MvsObjective {
 public:
  explicit MvsObjective(const SplineCurve& spline);

  double value(const Eigen::VectorXd& bz) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& bz) const;
  /// Weighted residuals r with value() == r.squaredNorm(), and their Jacobian.
  void residuals(const Eigen::VectorXd& bz, Eigen::VectorXd& r, Eigen::MatrixXd* jacobian) const;

  int dimension() const { return static_cast<int>(d1_.cols()); }

 private:
  Eigen::MatrixXd d1_, d2_, d3_;
  Eigen::VectorXd sqrt_w_;
};

/// Constrained problem over b_z with frozen x/y control points.
struct MvsProblem {
  SplineCurve spline;
  std::vector<double> sample_u;
  std::vector<double> lower;
  std::vector<double> upper;
  double start_value = 0.0;
  double start_slope = 0.0;
  double end_value = 0.0;
  double end_slope = 0.0;
};

/// Maps corridor and endpoint lines onto the parameter domain of `init`.
MvsProblem build_problem(const FitResult& init, const DepthCorridor& corridor,
                         const FitParams& params);

struct SolverTraceRow {
  int iteration = 0;
  double objective = 0.0;
  double max_violation = 0.0;
};

struct MvsResult {
  SplineCurve spline;
  double initial_objective = 0.0;  // at the feasibility-projected initialization
  double final_objective = 0.0;
  double max_violation = 0.0;       // at the constraint samples
  double dense_violation = 0.0;     // at 1000 uniform samples (diagnostic only)
  int iterations = 0;
  std::vector<SolverTraceRow> trace;
};

/// Projects the initialization onto the constraints and runs a feasible
/// Gauss-Newton SQP with backtracking. Throws StageError(MvsFit,
/// "MVS infeasible") if no feasible point exists.
MvsResult solve_mvs(const MvsProblem& problem, const FitParams& params);

std::string trace_to_csv(const std::vector<SolverTraceRow>& trace);

/// Control points (x, y, depth) -> depth * G^-1 (x, y, 1).
SplineCurve to_camera_frame(const SplineCurve& spline, const StereoRig& rig);
/// Inverse of to_camera_frame.
SplineCurve to_pixel_frame(const SplineCurve& spline, const StereoRig& rig);

}  // namespace threadrecon

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace threadrecon {

using Vec3 = Eigen::Vector3d;

/// Coordinate frame of a spline's control points.
/// PixelDepth: (pixel x, pixel y, depth); Camera: metric left-camera frame.
enum class Frame { PixelDepth, Camera };

const char* frame_name(Frame f);
Frame frame_from_name(const std::string& name);

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Clamped B-spline curve in R^3.
///
/// Invariant: knots.size() == control_points.size() + degree + 1, knots are
/// nondecreasing and the first/last knot values repeat degree + 1 times. The
/// parameter domain is [knots[degree], knots[m]].
struct SplineCurve {
  int degree = 4;
  std::vector<double> knots;
  std::vector<Vec3> control_points;
  Frame frame = Frame::PixelDepth;

  int num_control_points() const { return static_cast<int>(control_points.size()); }
  double domain_begin() const { return knots[static_cast<std::size_t>(degree)]; }
  double domain_end() const { return knots[control_points.size()]; }

  /// Throws std::invalid_argument when the structural invariants do not hold.
  void validate() const;
};

/// Clamped knot vector with uniformly spaced interior knots over [0, length].
std::vector<double> clamped_uniform_knots(int num_control_points, int degree, double length);

/// Index of the knot span containing u (degree <= span < m).
int find_span(const SplineCurve& s, double u);

/// Nonzero basis functions and their derivatives at u.
/// Row k holds the k-th derivative of the degree+1 basis functions active on
/// `span` (control points span-degree .. span).
struct BasisDerivatives {
  int span = 0;
  Eigen::MatrixXd values;
};
BasisDerivatives basis_derivatives(const SplineCurve& s, double u, int max_order);

/// Dense row over all m control points of the `order`-th derivative basis at u.
Eigen::RowVectorXd basis_row(const SplineCurve& s, double u, int order);

/// Position (order 0) or derivative of the curve at u.
/// Throws std::domain_error for u outside the parameter domain. Orders above
/// the degree return the zero vector.
Vec3 eval(const SplineCurve& s, double u, int derivative_order = 0);

/// Planar curvature of the depth graph (u, S_z(u)).
double graph_curvature(const SplineCurve& s, double u);

/// Result of a least-squares fit to ordered points.
struct FitResult {
  SplineCurve spline;
  double residual_rms = 0.0;
  std::vector<double> parameter_assignment;
};

/// Chord-length parameters for ordered points, rescaled to [0, n - 1].
/// Throws FitError if two consecutive points coincide.
std::vector<double> chord_length_parameters(std::span<const Vec3> points);

/// Least-squares clamped uniform B-spline with m control points through the
/// ordered points, parameterized by chord length.
FitResult fit_least_squares(std::span<const Vec3> points, int m, int degree);

/// Same fit with caller-supplied strictly increasing parameters in [0, params.back()].
FitResult fit_least_squares(std::span<const Vec3> points, std::span<const double> params,
                            int m, int degree);

/// Arc length of the 3D curve by composite Gauss-Legendre quadrature.
double arc_length(const SplineCurve& s);

/// 16-point Gauss-Legendre rule on [-1, 1].
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussRule& gauss_legendre16();

/// Quadrature nodes/weights covering the spline domain: 16 Gauss points per
/// nonempty knot span, each span split into `subdivisions` equal pieces.
struct QuadratureNodes {
  std::vector<double> u;
  std::vector<double> w;
};
QuadratureNodes spline_quadrature(const SplineCurve& s, int subdivisions = 1);

/// Uniformly spaced parameters over the domain, both endpoints included.
std::vector<double> uniform_parameters(const SplineCurve& s, int count);

}  // namespace threadrecon

#include "threadrecon/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/QR>

namespace threadrecon {

const char* frame_name(Frame f) {
  return f == Frame::Camera ? "camera" : "pixel-depth";
}

Frame frame_from_name(const std::string& name) {
  if (name == "camera") return Frame::Camera;
  if (name == "pixel-depth") return Frame::PixelDepth;
  throw std::invalid_argument("unknown spline frame '" + name + "'");
}

void SplineCurve::validate() const {
  const auto m = control_points.size();
  if (degree < 1) throw std::invalid_argument("spline degree must be >= 1");
  if (m < static_cast<std::size_t>(degree) + 1)
    throw std::invalid_argument("spline needs at least degree + 1 control points");
  if (knots.size() != m + static_cast<std::size_t>(degree) + 1)
    throw std::invalid_argument("knot count must equal m + degree + 1");
  if (!std::is_sorted(knots.begin(), knots.end()))
    throw std::invalid_argument("knots must be nondecreasing");
  for (int i = 0; i <= degree; ++i) {
    if (knots[static_cast<std::size_t>(i)] != knots.front() ||
        knots[knots.size() - 1 - static_cast<std::size_t>(i)] != knots.back())
      throw std::invalid_argument("knot vector must be clamped");
  }
  if (!(domain_end() > domain_begin())) throw std::invalid_argument("empty parameter domain");
}

std::vector<double> clamped_uniform_knots(int num_control_points, int degree, double length) {
  if (num_control_points < degree + 1)
    throw std::invalid_argument("clamped_uniform_knots: m must exceed degree");
  const int m = num_control_points;
  const int spans = m - degree;
  std::vector<double> knots(static_cast<std::size_t>(m + degree + 1));
  for (int i = 0; i <= degree; ++i) knots[static_cast<std::size_t>(i)] = 0.0;
  for (int i = 1; i < spans; ++i)
    knots[static_cast<std::size_t>(degree + i)] = length * static_cast<double>(i) / spans;
  for (int i = 0; i <= degree; ++i) knots[static_cast<std::size_t>(m + i)] = length;
  return knots;
}

int find_span(const SplineCurve& s, double u) {
  const int m = s.num_control_points();
  const int p = s.degree;
  if (u >= s.knots[static_cast<std::size_t>(m)]) return m - 1;
  if (u <= s.knots[static_cast<std::size_t>(p)]) {
    // Skip zero-length spans at the start.
    int span = p;
    while (span < m - 1 && s.knots[static_cast<std::size_t>(span + 1)] <= u) ++span;
    return span;
  }
  auto it = std::upper_bound(s.knots.begin() + p, s.knots.begin() + m + 1, u);
  return static_cast<int>(it - s.knots.begin()) - 1;
}

BasisDerivatives basis_derivatives(const SplineCurve& s, double u, int max_order) {
  const int p = s.degree;
  const int n = std::min(max_order, p);
  const int span = find_span(s, u);
  const auto& U = s.knots;

  // Piegl & Tiller, algorithm A2.3.
  Eigen::MatrixXd ndu(p + 1, p + 1);
  std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - U[static_cast<std::size_t>(span + 1 - j)];
    right[j] = U[static_cast<std::size_t>(span + j)] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }

  BasisDerivatives out;
  out.span = span;
  out.values = Eigen::MatrixXd::Zero(max_order + 1, p + 1);
  for (int j = 0; j <= p; ++j) out.values(0, j) = ndu(j, p);

  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= n; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      out.values(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    out.values.row(k) *= factor;
    factor *= (p - k);
  }
  return out;
}

namespace {

double checked_parameter(const SplineCurve& s, double u) {
  const double a = s.domain_begin(), b = s.domain_end();
  const double slack = 1e-12 * std::max(1.0, std::abs(b - a));
  if (!(u >= a - slack && u <= b + slack))
    throw std::domain_error("spline parameter " + std::to_string(u) + " outside [" +
                            std::to_string(a) + ", " + std::to_string(b) + "]");
  return std::clamp(u, a, b);
}

}  // namespace

Eigen::RowVectorXd basis_row(const SplineCurve& s, double u, int order) {
  u = checked_parameter(s, u);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(s.num_control_points());
  if (order > s.degree) return row;
  const auto bd = basis_derivatives(s, u, order);
  for (int j = 0; j <= s.degree; ++j) row(bd.span - s.degree + j) = bd.values(order, j);
  return row;
}

Vec3 eval(const SplineCurve& s, double u, int derivative_order) {
  if (derivative_order < 0) throw std::invalid_argument("negative derivative order");
  u = checked_parameter(s, u);
  if (derivative_order > s.degree) return Vec3::Zero();
  const auto bd = basis_derivatives(s, u, derivative_order);
  Vec3 out = Vec3::Zero();
  for (int j = 0; j <= s.degree; ++j)
    out += bd.values(derivative_order, j) *
           s.control_points[static_cast<std::size_t>(bd.span - s.degree + j)];
  return out;
}

double graph_curvature(const SplineCurve& s, double u) {
  const double dz = eval(s, u, 1).z();
  const double ddz = eval(s, u, 2).z();
  return ddz / std::pow(1.0 + dz * dz, 1.5);
}

std::vector<double> chord_length_parameters(std::span<const Vec3> points) {
  const std::size_t n = points.size();
  std::vector<double> params(n, 0.0);
  if (n < 2) return params;
  for (std::size_t i = 1; i < n; ++i) {
    const double step = (points[i] - points[i - 1]).norm();
    if (!(step > 0.0))
      throw FitError("coincident consecutive points at index " + std::to_string(i) +
                     ": chord-length parameterization is not strictly increasing");
    params[i] = params[i - 1] + step;
  }
  const double scale = static_cast<double>(n - 1) / params.back();
  for (auto& t : params) t *= scale;
  params.back() = static_cast<double>(n - 1);
  return params;
}

FitResult fit_least_squares(std::span<const Vec3> points, int m, int degree) {
  if (static_cast<int>(points.size()) < m)
    throw FitError("infeasible fit: " + std::to_string(points.size()) +
                   " points for " + std::to_string(m) + " control points");
  const auto params = chord_length_parameters(points);
  return fit_least_squares(points, params, m, degree);
}

FitResult fit_least_squares(std::span<const Vec3> points, std::span<const double> params,
                            int m, int degree) {
  const int n = static_cast<int>(points.size());
  if (degree < 1) throw FitError("degree must be >= 1");
  if (m < degree + 1)
    throw FitError("infeasible fit: m = " + std::to_string(m) + " must exceed degree " +
                   std::to_string(degree));
  if (n < m)
    throw FitError("infeasible fit: " + std::to_string(n) + " points for " +
                   std::to_string(m) + " control points");
  if (params.size() != points.size()) throw FitError("parameter count differs from point count");
  for (int i = 1; i < n; ++i)
    if (!(params[i] > params[i - 1])) throw FitError("parameters must be strictly increasing");

  FitResult result;
  SplineCurve& s = result.spline;
  s.degree = degree;
  s.knots = clamped_uniform_knots(m, degree, params.back() - params.front());
  s.control_points.assign(static_cast<std::size_t>(m), Vec3::Zero());
  // Knots shifted so the domain starts at params.front().
  for (auto& k : s.knots) k += params.front();

  Eigen::MatrixXd A(n, m);
  Eigen::MatrixXd rhs(n, 3);
  for (int i = 0; i < n; ++i) {
    A.row(i) = basis_row(s, params[i], 0);
    rhs.row(i) = points[i].transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-12);
  if (qr.rank() < m)
    throw FitError("rank-deficient normal equations: collocation rank " +
                   std::to_string(qr.rank()) + " < " + std::to_string(m) +
                   " control points (a knot span holds no data)");
  const Eigen::MatrixXd coeffs = qr.solve(rhs);
  for (int j = 0; j < m; ++j) s.control_points[static_cast<std::size_t>(j)] = coeffs.row(j).transpose();

  const Eigen::MatrixXd resid = A * coeffs - rhs;
  result.residual_rms = std::sqrt(resid.rowwise().squaredNorm().sum() / n);
  result.parameter_assignment.assign(params.begin(), params.end());
  return result;
}

const GaussRule& gauss_legendre16() {
  static const GaussRule rule = [] {
    constexpr int n = 16;
    GaussRule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = pk;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      r.nodes[i] = x;
      r.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
  }();
  return rule;
}

QuadratureNodes spline_quadrature(const SplineCurve& s, int subdivisions) {
  const auto& rule = gauss_legendre16();
  QuadratureNodes q;
  const int m = s.num_control_points();
  for (int span = s.degree; span < m; ++span) {
    const double a = s.knots[static_cast<std::size_t>(span)];
    const double b = s.knots[static_cast<std::size_t>(span + 1)];
    if (!(b > a)) continue;
    const double h = (b - a) / subdivisions;
    for (int piece = 0; piece < subdivisions; ++piece) {
      const double lo = a + piece * h;
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        q.u.push_back(lo + 0.5 * h * (rule.nodes[i] + 1.0));
        q.w.push_back(0.5 * h * rule.weights[i]);
      }
    }
  }
  return q;
}

double arc_length(const SplineCurve& s) {
  auto integrate = [&](int subdivisions) {
    const auto q = spline_quadrature(s, subdivisions);
    double total = 0.0;
    for (std::size_t i = 0; i < q.u.size(); ++i) total += q.w[i] * eval(s, q.u[i], 1).norm();
    return total;
  };
  double prev = integrate(1);
  for (int sub = 2; sub <= 64; sub *= 2) {
    const double next = integrate(sub);
    if (std::abs(next - prev) <= 1e-7 * std::max(1e-300, std::abs(next))) return next;
    prev = next;
  }
  return prev;
}

std::vector<double> uniform_parameters(const SplineCurve& s, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  const double a = s.domain_begin(), b = s.domain_end();
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = count == 1 ? a : a + (b - a) * i / (count - 1);
  if (count > 1) out.back() = b;
  return out;
}

}  // namespace threadrecon

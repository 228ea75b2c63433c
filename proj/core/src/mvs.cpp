#include "threadrecon/mvs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include <Eigen/LU>

#include "threadrecon/errors.hpp"
#include "threadrecon/format.hpp"
#include "threadrecon/qp.hpp"

namespace threadrecon {

void FitParams::validate() const {
  if (degree < 1) throw ConfigError("degree must be >= 1");
  if (m <= degree) throw ConfigError("m must exceed degree");
  if (gap_threshold < 1) throw ConfigError("gap_threshold must be >= 1");
  if (polyline_samples_per_control_point < 0)
    throw ConfigError("polyline_samples_per_control_point must be >= 0");
  if (!(boundary_factor > 0.0)) throw ConfigError("boundary_factor must be positive");
  if (!(r_k_fraction >= 0.0)) throw ConfigError("r_k_fraction must be nonnegative");
  if (constraint_samples < 2) throw ConfigError("constraint_samples must be >= 2");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
}

int extra_point_count(int gap_pixels, int gap_threshold) {
  return gap_pixels > gap_threshold ? gap_pixels / gap_threshold : 0;
}

namespace {

// Gap pixels sorted by 8-connected geodesic distance from the source cluster.
std::vector<Pixel> order_along_path(const std::vector<Pixel>& gap, const Cluster& source,
                                    const Mask& segmented) {
  Raster<int> dist(segmented.width(), segmented.height(), -2);  // -2: not in gap
  for (const Pixel p : gap) dist(p) = -1;
  std::deque<Pixel> frontier;
  for (const Pixel p : source.pixels) frontier.push_back(p);
  std::vector<int> src_dist(source.pixels.size(), 0);
  Raster<std::uint8_t> is_source(segmented.width(), segmented.height(), 0);
  for (const Pixel p : source.pixels) is_source(p) = 1;
  auto distance_of = [&](Pixel p) { return is_source(p) ? 0 : dist(p); };
  while (!frontier.empty()) {
    const Pixel p = frontier.front();
    frontier.pop_front();
    const int dp = distance_of(p);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const Pixel q{p.x + dx, p.y + dy};
        if (!dist.contains(q) || dist(q) != -1 || is_source(q)) continue;
        dist(q) = dp + 1;
        frontier.push_back(q);
      }
  }
  std::vector<Pixel> sorted = gap;
  const int far = segmented.width() * segmented.height();
  std::sort(sorted.begin(), sorted.end(), [&](Pixel a, Pixel b) {
    const int da = dist(a) < 0 ? far : dist(a);
    const int db = dist(b) < 0 ? far : dist(b);
    if (da != db) return da < db;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  return sorted;
}

std::vector<Pixel> intersect(const std::vector<Pixel>& a, const std::vector<Pixel>& b, int w, int h) {
  Raster<std::uint8_t> in_b(w, h, 0);
  for (const Pixel p : b) in_b(p) = 1;
  std::vector<Pixel> out;
  for (const Pixel p : a)
    if (in_b(p)) out.push_back(p);
  return out;
}

}  // namespace

KeypointChain densify(KeypointChain chain, const Mask& segmented, const DepthField& field,
                      const FitParams& params) {
  chain.dense.clear();
  chain.keypoint_in_dense.clear();
  const std::size_t n = chain.keypoints.size();
  if (n == 0) return chain;
  const int w = segmented.width(), h = segmented.height();
  const auto labels = cluster_labels(chain.clusters, w, h);

  std::vector<std::vector<Pixel>> reach(chain.clusters.size());
  auto reach_of = [&](int id) -> const std::vector<Pixel>& {
    auto& r = reach[static_cast<std::size_t>(id)];
    if (r.empty()) r = reach_from_cluster(chain.clusters[static_cast<std::size_t>(id)], labels, segmented).unclustered;
    return r;
  };

  for (std::size_t i = 0; i < n; ++i) {
    chain.keypoint_in_dense.push_back(static_cast<int>(chain.dense.size()));
    chain.dense.push_back(chain.keypoints[i]);
    if (i + 1 == n) break;

    const int a = chain.cluster_of[i];
    const int b = chain.cluster_of[i + 1];
    std::vector<Pixel> path;
    if (a >= 0 && b >= 0) {
      path = order_along_path(intersect(reach_of(a), reach_of(b), w, h),
                              chain.clusters[static_cast<std::size_t>(a)], segmented);
    } else if (a < 0 && b >= 0) {
      path = order_along_path(chain.front_tail, chain.clusters[static_cast<std::size_t>(b)], segmented);
      std::reverse(path.begin(), path.end());
    } else if (a >= 0 && b < 0) {
      path = order_along_path(chain.back_tail, chain.clusters[static_cast<std::size_t>(a)], segmented);
    }

    const int count = static_cast<int>(path.size());
    const int extra = extra_point_count(count, params.gap_threshold);
    const Vec3& next = chain.keypoints[i + 1];
    for (int j = 1; j <= extra; ++j) {
      const int target = static_cast<int>(std::lround(static_cast<double>(j) * count / (extra + 1)));
      // Nearest pixel to the target position with a usable depth.
      int pick = -1;
      for (int off = 0; off < count && pick < 0; ++off) {
        for (int cand : {target + off, target - off}) {
          if (cand < 0 || cand >= count) continue;
          if (field.at(path[static_cast<std::size_t>(cand)]).valid) {
            pick = cand;
            break;
          }
        }
      }
      if (pick < 0) break;
      const Pixel p = path[static_cast<std::size_t>(pick)];
      const Vec3 pt(p.x, p.y, field.at(p).depth);
      const Vec3& prev = chain.dense.back();
      if ((pt.head<2>() - prev.head<2>()).norm() == 0.0 || (pt.head<2>() - next.head<2>()).norm() == 0.0)
        continue;
      chain.dense.push_back(pt);
    }
  }
  return chain;
}

std::pair<double, double> DepthCorridor::at(double t) const {
  const int n = static_cast<int>(lower.size());
  if (t <= 0.0) return {lower.front(), upper.front()};
  if (t >= n - 1) return {lower.back(), upper.back()};
  const int i = static_cast<int>(std::floor(t));
  const double f = t - i;
  return {lower[i] + f * (lower[i + 1] - lower[i]), upper[i] + f * (upper[i + 1] - upper[i])};
}

DepthCorridor build_corridor(const KeypointChain& chain, const FitParams& params) {
  params.validate();
  const int nk = static_cast<int>(chain.keypoints.size());
  const int nh = static_cast<int>(chain.dense.size());
  if (nk < 2) throw StageError(Stage::MvsFit, "at least two keypoints are needed for a corridor");
  if (static_cast<int>(chain.keypoint_in_dense.size()) != nk)
    throw std::invalid_argument("build_corridor: chain is not densified");

  DepthCorridor cor;
  cor.lower.assign(static_cast<std::size_t>(nh), 0.0);
  cor.upper.assign(static_cast<std::size_t>(nh), 0.0);

  std::vector<double> depths;
  for (const auto& k : chain.keypoints) depths.push_back(k.z());
  std::nth_element(depths.begin(), depths.begin() + nk / 2, depths.end());
  cor.min_halfwidth = params.min_halfwidth > 0.0 ? params.min_halfwidth
                                                 : params.min_halfwidth_fraction * std::abs(depths[nk / 2]);

  const int rk = std::max(1, static_cast<int>(std::lround(nk * params.r_k_fraction)));
  for (int i = 0; i < nk; ++i) {
    const int first = chain.keypoint_in_dense[std::max(0, i - rk)];
    const int last = chain.keypoint_in_dense[std::min(nk - 1, i + rk)];
    const int count = last - first + 1;
    LocalLine line;
    double mean_t = 0.0, mean_z = 0.0;
    for (int j = first; j <= last; ++j) {
      mean_t += j;
      mean_z += chain.dense[static_cast<std::size_t>(j)].z();
    }
    mean_t /= count;
    mean_z /= count;
    double stt = 0.0, stz = 0.0;
    for (int j = first; j <= last; ++j) {
      stt += (j - mean_t) * (j - mean_t);
      stz += (j - mean_t) * (chain.dense[static_cast<std::size_t>(j)].z() - mean_z);
    }
    line.slope = stt > 0.0 ? stz / stt : 0.0;
    line.intercept = mean_z - line.slope * mean_t;
    cor.lines.push_back(line);

    const int idx = chain.keypoint_in_dense[static_cast<std::size_t>(i)];
    cor.keypoint_index.push_back(idx);
    const double kz = chain.keypoints[static_cast<std::size_t>(i)].z();
    const double half = params.boundary_factor * std::abs(line(idx) - kz);
    cor.lower[static_cast<std::size_t>(idx)] = kz - half;
    cor.upper[static_cast<std::size_t>(idx)] = kz + half;
  }

  for (int i = 0; i + 1 < nk; ++i) {
    const int a = chain.keypoint_in_dense[static_cast<std::size_t>(i)];
    const int b = chain.keypoint_in_dense[static_cast<std::size_t>(i + 1)];
    for (int j = a + 1; j < b; ++j) {
      const double f = static_cast<double>(j - a) / (b - a);
      cor.lower[j] = cor.lower[a] + f * (cor.lower[b] - cor.lower[a]);
      cor.upper[j] = cor.upper[a] + f * (cor.upper[b] - cor.upper[a]);
    }
  }

  for (int j = 0; j < nh; ++j) {
    if (cor.upper[j] - cor.lower[j] < 2.0 * cor.min_halfwidth) {
      const double mid = 0.5 * (cor.lower[j] + cor.upper[j]);
      cor.lower[j] = mid - cor.min_halfwidth;
      cor.upper[j] = mid + cor.min_halfwidth;
    }
  }
  return cor;
}

FitResult init_spline(const std::vector<Vec3>& dense, const DepthCorridor& corridor,
                      const FitParams& params) {
  params.validate();
  if (static_cast<int>(dense.size()) < params.m)
    throw StageError(Stage::MvsFit, "insufficient points for spline: " + std::to_string(dense.size()) +
                                        " < " + std::to_string(params.m));
  std::vector<Vec3> centered = dense;
  for (std::size_t i = 0; i < centered.size(); ++i)
    centered[i].z() = 0.5 * (corridor.lower[i] + corridor.upper[i]);
  try {
    // Fit points: the vertices plus chord-length-uniform samples of the polyline.
    const std::vector<double> t = chord_length_parameters(centered);
    const int per_span = params.polyline_samples_per_control_point;
    const int extra = per_span > 0 ? per_span * params.m : 0;
    std::vector<std::pair<double, Vec3>> samples;
    samples.reserve(centered.size() + static_cast<std::size_t>(extra));
    for (std::size_t i = 0; i < centered.size(); ++i) samples.emplace_back(t[i], centered[i]);
    const double span = t.back() - t.front();
    std::size_t seg = 0;
    for (int j = 1; j + 1 < extra; ++j) {
      const double u = t.front() + span * j / (extra - 1);
      while (seg + 2 < t.size() && t[seg + 1] < u) ++seg;
      const double a = (u - t[seg]) / (t[seg + 1] - t[seg]);
      samples.emplace_back(u, (1.0 - a) * centered[seg] + a * centered[seg + 1]);
    }
    std::sort(samples.begin(), samples.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    std::vector<double> u;
    std::vector<Vec3> pts;
    for (const auto& [ui, p] : samples) {
      if (!u.empty() && ui - u.back() < 1e-9 * std::max(1.0, span)) continue;
      u.push_back(ui);
      pts.push_back(p);
    }
    FitResult fit = fit_least_squares(pts, u, params.m, params.degree);
    Eigen::Matrix3Xd resid(3, static_cast<Eigen::Index>(centered.size()));
    for (std::size_t i = 0; i < centered.size(); ++i)
      resid.col(static_cast<Eigen::Index>(i)) = eval(fit.spline, t[i]) - centered[i];
    fit.residual_rms = std::sqrt(resid.colwise().squaredNorm().sum() / static_cast<double>(centered.size()));
    fit.parameter_assignment = t;
    return fit;
  } catch (const FitError& e) {
    throw StageError(Stage::MvsFit, std::string("spline initialization failed: ") + e.what());
  }
}

MvsObjective::MvsObjective(const SplineCurve& spline) {
  const auto q = spline_quadrature(spline);
  const int nq = static_cast<int>(q.u.size());
  const int m = spline.num_control_points();
  d1_.resize(nq, m);
  d2_.resize(nq, m);
  d3_.resize(nq, m);
  sqrt_w_.resize(nq);
  for (int i = 0; i < nq; ++i) {
    d1_.row(i) = basis_row(spline, q.u[i], 1);
    d2_.row(i) = basis_row(spline, q.u[i], 2);
    d3_.row(i) = basis_row(spline, q.u[i], 3);
    sqrt_w_(i) = std::sqrt(q.w[i]);
  }
}

void MvsObjective::residuals(const Eigen::VectorXd& bz, Eigen::VectorXd& r,
                             Eigen::MatrixXd* jacobian) const {
  const Eigen::VectorXd z1 = d1_ * bz, z2 = d2_ * bz, z3 = d3_ * bz;
  const auto nq = z1.size();
  r.resize(nq);
  if (jacobian) jacobian->resize(nq, bz.size());
  for (Eigen::Index i = 0; i < nq; ++i) {
    const double a = z1(i), b = z2(i), c = z3(i);
    const double w = 1.0 + a * a;
    const double w_m32 = std::pow(w, -1.5), w_m52 = w_m32 / w, w_m72 = w_m52 / w;
    const double w_m14 = std::pow(w, -0.25);
    // derivative of the graph curvature along u
    const double dk = c * w_m32 - 3.0 * a * b * b * w_m52;
    r(i) = sqrt_w_(i) * dk * w_m14;
    if (!jacobian) continue;
    const double ddk_da = -3.0 * a * c * w_m52 - 3.0 * b * b * w_m52 + 15.0 * a * a * b * b * w_m72;
    const double ddk_db = -6.0 * a * b * w_m52;
    const double ddk_dc = w_m32;
    const double dr_da = sqrt_w_(i) * (ddk_da * w_m14 - 0.5 * dk * a * w_m14 / w);
    const double dr_db = sqrt_w_(i) * ddk_db * w_m14;
    const double dr_dc = sqrt_w_(i) * ddk_dc * w_m14;
    jacobian->row(i) = dr_da * d1_.row(i) + dr_db * d2_.row(i) + dr_dc * d3_.row(i);
  }
}

double MvsObjective::value(const Eigen::VectorXd& bz) const {
  Eigen::VectorXd r;
  residuals(bz, r, nullptr);
  return r.squaredNorm();
}

Eigen::VectorXd MvsObjective::gradient(const Eigen::VectorXd& bz) const {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  residuals(bz, r, &J);
  return 2.0 * J.transpose() * r;
}

MvsProblem build_problem(const FitResult& init, const DepthCorridor& corridor,
                         const FitParams& params) {
  const auto& u = init.parameter_assignment;
  const int n = static_cast<int>(u.size());
  if (n < 2 || static_cast<int>(corridor.lower.size()) != n)
    throw std::invalid_argument("build_problem: corridor and parameter assignment disagree");

  MvsProblem prob;
  prob.spline = init.spline;
  prob.sample_u = uniform_parameters(init.spline, params.constraint_samples);
  std::size_t seg = 0;
  for (const double s : prob.sample_u) {
    while (seg + 2 < u.size() && s > u[seg + 1]) ++seg;
    const double span = u[seg + 1] - u[seg];
    const double t = static_cast<double>(seg) + std::clamp((s - u[seg]) / span, 0.0, 1.0);
    const auto [lo, hi] = corridor.at(t);
    prob.lower.push_back(lo);
    prob.upper.push_back(hi);
  }

  const LocalLine& first = corridor.lines.front();
  const LocalLine& last = corridor.lines.back();
  const double t0 = corridor.keypoint_index.front();
  const double t1 = corridor.keypoint_index.back();
  // Order-index slopes to parameter slopes: d(index)/du at either end.
  const double di_du_start = 1.0 / (u[1] - u[0]);
  const double di_du_end = 1.0 / (u[n - 1] - u[n - 2]);
  prob.start_value = first(t0);
  prob.start_slope = first.slope * di_du_start;
  prob.end_value = last(t1);
  prob.end_slope = last.slope * di_du_end;
  return prob;
}

namespace {

Eigen::VectorXd depth_coordinates(const SplineCurve& s) {
  Eigen::VectorXd bz(s.num_control_points());
  for (int j = 0; j < bz.size(); ++j) bz(j) = s.control_points[static_cast<std::size_t>(j)].z();
  return bz;
}

QuadraticProgram constraint_template(const MvsProblem& prob) {
  const SplineCurve& s = prob.spline;
  const int m = s.num_control_points();
  const double a = s.domain_begin(), b = s.domain_end();
  QuadraticProgram qp;
  qp.A_eq.resize(4, m);
  qp.A_eq.row(0) = basis_row(s, a, 0);
  qp.A_eq.row(1) = basis_row(s, a, 1);
  qp.A_eq.row(2) = basis_row(s, b, 0);
  qp.A_eq.row(3) = basis_row(s, b, 1);
  qp.b_eq.resize(4);
  qp.b_eq << prob.start_value, prob.start_slope, prob.end_value, prob.end_slope;

  const int ns = static_cast<int>(prob.sample_u.size());
  qp.A_in.resize(2 * ns, m);
  qp.b_in.resize(2 * ns);
  for (int i = 0; i < ns; ++i) {
    const Eigen::RowVectorXd row = basis_row(s, prob.sample_u[i], 0);
    qp.A_in.row(2 * i) = row;
    qp.b_in(2 * i) = prob.lower[i];
    qp.A_in.row(2 * i + 1) = -row;
    qp.b_in(2 * i + 1) = -prob.upper[i];
  }
  return qp;
}

}  // namespace

MvsResult solve_mvs(const MvsProblem& problem, const FitParams& params) {
  const int m = problem.spline.num_control_points();
  const MvsObjective objective(problem.spline);
  QuadraticProgram cons = constraint_template(problem);

  // Feasibility projection of the initialization.
  QuadraticProgram proj = cons;
  const Eigen::VectorXd x0 = depth_coordinates(problem.spline);
  proj.H = Eigen::MatrixXd::Identity(m, m);
  proj.g = -x0;
  const QpSolution projected = solve_qp(proj);
  if (!projected.feasible || projected.max_violation > params.feasibility_tolerance)
    throw StageError(Stage::MvsFit, "MVS infeasible");

  Eigen::VectorXd x = projected.x;
  double fx = objective.value(x);
  MvsResult result;
  result.initial_objective = fx;
  result.trace.push_back({0, fx, constraint_violation(cons, x)});

  int iter = 0;
  for (; iter < params.max_iterations; ++iter) {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    objective.residuals(x, r, &J);
    const Eigen::VectorXd grad = 2.0 * J.transpose() * r;
    Eigen::MatrixXd H = 2.0 * J.transpose() * J;
    const double scale = std::max(H.diagonal().maxCoeff(), 1e-300);
    H.diagonal().array() += 1e-9 * scale + 1e-14;

    QuadraticProgram step = cons;
    step.H = H;
    step.g = grad;
    step.b_eq = cons.b_eq - cons.A_eq * x;
    step.b_in = cons.b_in - cons.A_in * x;
    const QpSolution sol = solve_qp(step);
    if (!sol.feasible) break;
    const Eigen::VectorXd& p = sol.x;
    const double slope = grad.dot(p);
    if (!(slope < 0.0) || p.norm() <= 1e-14 * (1.0 + x.norm())) break;

    // Backtrack until the step decreases J enough and keeps the iterate within
    // half the feasibility tolerance.
    double alpha = 1.0;
    double f_new = objective.value(x + p);
    double v_new = constraint_violation(cons, x + p);
    int halvings = 0;
    while (!(f_new <= fx + 1e-4 * alpha * slope && v_new <= 0.5 * params.feasibility_tolerance) &&
           halvings < 40) {
      alpha *= 0.5;
      f_new = objective.value(x + alpha * p);
      v_new = constraint_violation(cons, x + alpha * p);
      ++halvings;
    }
    if (!(f_new < fx) || v_new > 0.5 * params.feasibility_tolerance) break;
    const double decrease = fx - f_new;
    x += alpha * p;
    fx = f_new;
    result.trace.push_back({iter + 1, fx, v_new});
    if (decrease <= params.tolerance * (fx + 1e-12) || fx <= 1e-30) {
      ++iter;
      break;
    }
  }

  result.iterations = iter;
  result.final_objective = fx;
  result.max_violation = constraint_violation(cons, x);
  if (result.max_violation > params.feasibility_tolerance)
    throw StageError(Stage::MvsFit, "MVS infeasible");

  result.spline = problem.spline;
  for (int j = 0; j < m; ++j) result.spline.control_points[static_cast<std::size_t>(j)].z() = x(j);

  // Dense check between constraint samples.
  const auto dense_u = uniform_parameters(result.spline, 1000);
  std::vector<double> su = problem.sample_u;
  for (const double s : dense_u) {
    auto it = std::upper_bound(su.begin(), su.end(), s);
    const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - su.begin()), su.size() - 1);
    const std::size_t lo = hi == 0 ? 0 : hi - 1;
    const double f = su[hi] > su[lo] ? std::clamp((s - su[lo]) / (su[hi] - su[lo]), 0.0, 1.0) : 0.0;
    const double lower = problem.lower[lo] + f * (problem.lower[hi] - problem.lower[lo]);
    const double upper = problem.upper[lo] + f * (problem.upper[hi] - problem.upper[lo]);
    const double z = eval(result.spline, s).z();
    result.dense_violation = std::max({result.dense_violation, lower - z, z - upper});
  }
  return result;
}

std::string trace_to_csv(const std::vector<SolverTraceRow>& trace) {
  std::ostringstream out;
  out << "iteration,objective,max_violation\n";
  for (const auto& row : trace)
    out << row.iteration << ',' << format_double(row.objective) << ',' << format_double(row.max_violation)
        << '\n';
  return out.str();
}

SplineCurve to_camera_frame(const SplineCurve& spline, const StereoRig& rig) {
  if (!(std::abs(rig.G.determinant()) > 1e-12)) throw ConfigError("singular camera matrix G");
  const Eigen::Matrix3d Ginv = rig.G.inverse();
  SplineCurve out = spline;
  for (auto& b : out.control_points) b = b.z() * (Ginv * Vec3(b.x(), b.y(), 1.0));
  out.frame = Frame::Camera;
  return out;
}

SplineCurve to_pixel_frame(const SplineCurve& spline, const StereoRig& rig) {
  SplineCurve out = spline;
  for (auto& b : out.control_points) {
    const Vec3 h = rig.G * (b / b.z());
    b = Vec3(h.x() / h.z(), h.y() / h.z(), b.z());
  }
  out.frame = Frame::PixelDepth;
  return out;
}

}  // namespace threadrecon

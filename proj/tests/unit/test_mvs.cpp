#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "test_support.hpp"
#include "threadrecon/errors.hpp"
#include "threadrecon/mvs.hpp"

using namespace threadrecon;

namespace {

Mask band(int width, int height, int x0, int x1, int y0, int y1) {
  Mask m(width, height, 0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m(x, y) = 1;
  return m;
}

Cluster block(int id, int x0, int x1, int y0, int y1, double depth) {
  Cluster c;
  c.id = id;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      c.pixels.push_back({x, y});
      c.points3d.emplace_back(x, y, depth);
      c.centroid += c.points3d.back();
    }
  c.centroid /= static_cast<double>(c.pixels.size());
  return c;
}

DepthField linear_field(const Mask& mask) {
  DepthField f;
  f.samples = Raster<DepthSample>(mask.width(), mask.height());
  f.left_mask = mask;
  f.pixels = mask_pixels(mask);
  for (const Pixel p : f.pixels) {
    f.samples(p).valid = true;
    f.samples(p).depth = 100.0 + p.x;
    f.samples(p).reliability = 0.99;
  }
  return f;
}

KeypointChain two_block_chain(int second_x0) {
  KeypointChain chain;
  chain.clusters = {block(0, 0, 9, 1, 3, 104.5), block(1, second_x0, second_x0 + 9, 1, 3, 104.5 + second_x0)};
  chain.adjacency.neighbors = {{1}, {0}};
  chain.keypoints = {chain.clusters[0].centroid, chain.clusters[1].centroid};
  chain.cluster_of = {0, 1};
  return chain;
}

// Chain whose keypoints are exactly the given points (no densified extras).
KeypointChain chain_of(const std::vector<Vec3>& pts) {
  KeypointChain chain;
  chain.keypoints = pts;
  chain.dense = pts;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    chain.keypoint_in_dense.push_back(static_cast<int>(i));
    chain.cluster_of.push_back(static_cast<int>(i));
  }
  return chain;
}

// Fractional order index of spline parameter s under a parameter assignment.
double order_index(const std::vector<double>& u, double s) {
  std::size_t seg = 0;
  while (seg + 2 < u.size() && s > u[seg + 1]) ++seg;
  return static_cast<double>(seg) + std::clamp((s - u[seg]) / (u[seg + 1] - u[seg]), 0.0, 1.0);
}

Eigen::VectorXd depths(const SplineCurve& s) {
  Eigen::VectorXd z(s.num_control_points());
  for (int j = 0; j < z.size(); ++j) z(j) = s.control_points[static_cast<std::size_t>(j)].z();
  return z;
}

// Feasible problem around a random smooth depth profile; the start spline is
// the profile plus noise, so it usually violates the corridor.
MvsProblem random_problem(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::uniform_real_distribution<double> width(0.3, 2.0);
  SplineCurve center;
  center.degree = 4;
  center.knots = clamped_uniform_knots(15, 4, 20.0);
  double z = 100.0;
  for (int i = 0; i < 15; ++i) {
    z += 1.5 * U(rng);
    center.control_points.emplace_back(3.0 * i + U(rng), 2.0 * i + U(rng), z);
  }
  MvsProblem prob;
  prob.spline = center;
  for (auto& b : prob.spline.control_points) b.z() += 2.0 * U(rng);
  prob.sample_u = uniform_parameters(center, 100);
  for (const double s : prob.sample_u) {
    const double zc = eval(center, s).z();
    prob.lower.push_back(zc - width(rng));
    prob.upper.push_back(zc + width(rng));
  }
  const double a = center.domain_begin(), b = center.domain_end();
  prob.start_value = eval(center, a).z();
  prob.start_slope = eval(center, a, 1).z();
  prob.end_value = eval(center, b).z();
  prob.end_slope = eval(center, b, 1).z();
  return prob;
}

}  // namespace

TEST(Densify, ExtraPointCount) {
  EXPECT_EQ(extra_point_count(45, 20), 2);
  EXPECT_EQ(extra_point_count(12, 20), 0);
  EXPECT_EQ(extra_point_count(0, 20), 0);
  EXPECT_EQ(extra_point_count(20, 20), 0);
  EXPECT_EQ(extra_point_count(21, 20), 1);
  EXPECT_EQ(extra_point_count(60, 20), 3);
}

TEST(Densify, LongGapGetsRawStereoPoints) {
  // Clusters at x 0..9 and 25..34 on a 3-row band: 45 gap pixels.
  const Mask mask = band(40, 5, 0, 34, 1, 3);
  const DepthField field = linear_field(mask);
  const KeypointChain chain = densify(two_block_chain(25), mask, field, FitParams{});
  ASSERT_EQ(chain.dense.size(), 4u);
  EXPECT_EQ(chain.keypoint_in_dense, (std::vector<int>{0, 3}));
  for (int i = 1; i <= 2; ++i) {
    const Vec3& p = chain.dense[static_cast<std::size_t>(i)];
    EXPECT_GE(p.x(), 10.0);
    EXPECT_LE(p.x(), 24.0);
    EXPECT_DOUBLE_EQ(p.z(), 100.0 + p.x());
    EXPECT_GT(p.x(), chain.dense[static_cast<std::size_t>(i - 1)].x());
  }
}

TEST(Densify, ShortGapUnchanged) {
  // 12 gap pixels (x 10..13).
  const Mask mask = band(30, 5, 0, 23, 1, 3);
  const KeypointChain chain = densify(two_block_chain(14), mask, linear_field(mask), FitParams{});
  ASSERT_EQ(chain.dense.size(), 2u);
  EXPECT_EQ(chain.keypoint_in_dense, (std::vector<int>{0, 1}));
}

TEST(Densify, TouchingClustersUnchanged) {
  const Mask mask = band(30, 5, 0, 19, 1, 3);
  const KeypointChain chain = densify(two_block_chain(10), mask, linear_field(mask), FitParams{});
  EXPECT_EQ(chain.dense.size(), 2u);
}

TEST(Corridor, BoundsAroundLocalLine) {
  // Middle keypoint: window of three points with mean depth 12, so L = 12 at
  // the keypoint and k_z = 10 gives [10 - 3, 10 + 3].
  FitParams params;
  params.min_halfwidth = 0.01;
  const KeypointChain chain = chain_of({Vec3(0, 0, 13), Vec3(1, 0, 10), Vec3(2, 0, 13)});
  const DepthCorridor cor = build_corridor(chain, params);
  EXPECT_NEAR(cor.lines[1](1.0), 12.0, 1e-12);
  EXPECT_NEAR(cor.lower[1], 7.0, 1e-12);
  EXPECT_NEAR(cor.upper[1], 13.0, 1e-12);
  // Matches an independent least-squares line through the window.
  Eigen::Matrix<double, 3, 2> A;
  A << 1, 0, 1, 1, 1, 2;
  const Eigen::Vector2d coef = A.colPivHouseholderQr().solve(Eigen::Vector3d(13, 10, 13));
  EXPECT_NEAR(cor.lines[1].intercept, coef(0), 1e-12);
  EXPECT_NEAR(cor.lines[1].slope, coef(1), 1e-12);
}

TEST(Corridor, ZeroWidthIsWidened) {
  FitParams params;
  params.min_halfwidth = 0.25;
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i) pts.emplace_back(i, 0, 50.0 + 2.0 * i);
  const DepthCorridor cor = build_corridor(chain_of(pts), params);
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(cor.lower[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(i)].z() - 0.25, 1e-9);
    EXPECT_NEAR(cor.upper[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(i)].z() + 0.25, 1e-9);
  }
}

TEST(Corridor, DefaultMinimumIsOnePercentOfMedianDepth) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 5; ++i) pts.emplace_back(i, 0, 200.0);
  const DepthCorridor cor = build_corridor(chain_of(pts), FitParams{});
  EXPECT_NEAR(cor.min_halfwidth, 2.0, 1e-12);
  EXPECT_NEAR(cor.upper[2] - cor.lower[2], 4.0, 1e-12);
}

TEST(Corridor, InterpolatesBetweenPoints) {
  DepthCorridor cor;
  cor.lower = {7, 9};
  cor.upper = {13, 15};
  const auto [lo, hi] = cor.at(0.5);
  EXPECT_DOUBLE_EQ(lo, 8.0);
  EXPECT_DOUBLE_EQ(hi, 14.0);
  EXPECT_EQ(cor.at(-1.0), std::make_pair(7.0, 13.0));
  EXPECT_EQ(cor.at(5.0), std::make_pair(9.0, 15.0));
}

TEST(Corridor, DensifiedPointsInterpolateKeypointBounds) {
  FitParams params;
  params.min_halfwidth = 0.01;
  KeypointChain chain = chain_of({Vec3(0, 0, 13), Vec3(4, 0, 10), Vec3(8, 0, 13)});
  chain.dense = {Vec3(0, 0, 13), Vec3(2, 0, 11), Vec3(4, 0, 10), Vec3(6, 0, 11), Vec3(8, 0, 13)};
  chain.keypoint_in_dense = {0, 2, 4};
  const DepthCorridor cor = build_corridor(chain, params);
  for (int j : {1, 3}) {
    const int a = j - 1, b = j + 1;
    EXPECT_NEAR(cor.lower[j], 0.5 * (cor.lower[a] + cor.lower[b]), 1e-12);
    EXPECT_NEAR(cor.upper[j], 0.5 * (cor.upper[a] + cor.upper[b]), 1e-12);
  }
}

TEST(Corridor, NeedsTwoKeypoints) {
  EXPECT_THROW(build_corridor(chain_of({Vec3(0, 0, 1)}), FitParams{}), StageError);
}

TEST(Corridor, BoundsOrderedEverywhere) {
  std::mt19937_64 rng(60);
  std::normal_distribution<double> N(0.0, 2.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.emplace_back(3.0 * i, 0.5 * i, 100.0 + N(rng));
  const DepthCorridor cor = build_corridor(chain_of(pts), FitParams{});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_LE(cor.lower[i], pts[i].z());
    EXPECT_GE(cor.upper[i], pts[i].z());
    EXPECT_GE(cor.upper[i] - cor.lower[i], 2.0 * cor.min_halfwidth - 1e-12);
  }
}

TEST(InitSpline, TooFewPoints) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 14; ++i) pts.emplace_back(i, 0, 100);
  const DepthCorridor cor = build_corridor(chain_of(pts), FitParams{});
  try {
    init_spline(pts, cor, FitParams{});
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::MvsFit);
    EXPECT_NE(std::string(e.what()).find("insufficient points"), std::string::npos);
  }
}

TEST(InitSpline, StraightCorridorGivesStraightSpline) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.emplace_back(2.0 * i, 1.0 * i, 100.0 + 0.5 * i);
  FitParams params;
  params.min_halfwidth = 0.5;
  const DepthCorridor cor = build_corridor(chain_of(pts), params);
  const FitResult fit = init_spline(pts, cor, params);
  EXPECT_EQ(fit.spline.num_control_points(), 15);
  EXPECT_EQ(fit.spline.degree, 4);
  ASSERT_EQ(fit.parameter_assignment.size(), pts.size());
  for (const double s : uniform_parameters(fit.spline, 200)) {
    const Vec3 p = eval(fit.spline, s);
    EXPECT_NEAR(p.y(), 0.5 * p.x(), 1e-6);
    EXPECT_NEAR(p.z(), 100.0 + 0.25 * p.x(), 1e-6);
  }
  EXPECT_LE(fit.residual_rms, 1e-6);
}

TEST(InitSpline, MostSamplesInsideCorridor) {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> N(0.0, 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 40; ++i)
      pts.emplace_back(4.0 * i + N(rng), 20.0 * std::sin(0.1 * i) + N(rng), 100.0 + 5.0 * std::sin(0.2 * i) + N(rng));
    const FitParams params;
    const DepthCorridor cor = build_corridor(chain_of(pts), params);
    const FitResult fit = init_spline(pts, cor, params);
    int inside = 0;
    const auto su = uniform_parameters(fit.spline, 200);
    for (const double s : su) {
      const auto [lo, hi] = cor.at(order_index(fit.parameter_assignment, s));
      const double z = eval(fit.spline, s).z();
      if (z >= lo && z <= hi) ++inside;
    }
    EXPECT_GE(inside, 190) << "trial " << trial;
  }
}

TEST(MvsObjective, MatchesQuadratureOfCurvatureDerivative) {
  // Oracle: midpoint rule over each knot span with d kappa / du from central
  // differences of the graph curvature.
  std::mt19937_64 rng(62);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    SplineCurve s;
    s.degree = 4;
    s.knots = clamped_uniform_knots(15, 4, 14.0);
    for (int i = 0; i < 15; ++i) s.control_points.emplace_back(i, 0, 0.5 * U(rng));
    const MvsObjective obj(s);
    const double a = s.domain_begin(), b = s.domain_end();
    const int n = 200000;
    const double h = (b - a) / n, fd = 1e-5;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = a + (i + 0.5) * h;
      const double lo = std::max(a, u - fd), hi = std::min(b, u + fd);
      const double dk = (graph_curvature(s, hi) - graph_curvature(s, lo)) / (hi - lo);
      const double z1 = eval(s, u, 1).z();
      integral += dk * dk / std::sqrt(1.0 + z1 * z1) * h;
    }
    EXPECT_NEAR(obj.value(depths(s)), integral, 1e-4 * integral) << "trial " << trial;
  }
}

TEST(MvsObjective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(63);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    SplineCurve s = threadrecon::testing::random_spline(rng);
    const MvsObjective obj(s);
    Eigen::VectorXd bz(15);
    for (int j = 0; j < 15; ++j) bz(j) = 3.0 * U(rng);
    const Eigen::VectorXd g = obj.gradient(bz);
    Eigen::VectorXd fd(15);
    for (int j = 0; j < 15; ++j) {
      Eigen::VectorXd p = bz, m = bz;
      p(j) += 1e-6;
      m(j) -= 1e-6;
      fd(j) = (obj.value(p) - obj.value(m)) / 2e-6;
    }
    EXPECT_LE((g - fd).norm(), 1e-4 * std::max(1.0, fd.norm())) << "trial " << trial;
  }
}

TEST(MvsObjective, LinearDepthHasZeroObjective) {
  SplineCurve s;
  s.degree = 4;
  s.knots = clamped_uniform_knots(15, 4, 14.0);
  for (int i = 0; i < 15; ++i) s.control_points.emplace_back(i, 0, 0);
  const MvsObjective obj(s);
  Eigen::VectorXd bz(15);
  // Control values on a line through the Greville abscissae give a linear S_z.
  for (int j = 0; j < 15; ++j) {
    double greville = 0.0;
    for (int k = 1; k <= 4; ++k) greville += s.knots[static_cast<std::size_t>(j + k)] / 4.0;
    bz(j) = 3.0 + 0.7 * greville;
  }
  EXPECT_LE(obj.value(bz), 1e-20);
  // A quadratic depth has varying slope and hence varying curvature.
  for (int j = 0; j < 15; ++j) bz(j) = 0.1 * j * j;
  EXPECT_GT(obj.value(bz), 0.0);
}

TEST(SolveMvs, StraightLineReachesZeroObjective) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.emplace_back(2.0 * i, 1.0 * i, 100.0 + 0.5 * i);
  FitParams params;
  params.min_halfwidth = 0.5;
  const KeypointChain chain = chain_of(pts);
  const DepthCorridor cor = build_corridor(chain, params);
  const FitResult init = init_spline(chain.dense, cor, params);
  const MvsResult res = solve_mvs(build_problem(init, cor, params), params);
  EXPECT_LE(res.final_objective, 1e-10);
  for (const double s : uniform_parameters(res.spline, 50))
    EXPECT_NEAR(eval(res.spline, s).z(), 100.0 + 0.25 * eval(res.spline, s).x(), 1e-6);
}

TEST(SolveMvs, ContractOnRandomProblems) {
  std::mt19937_64 rng(64);
  const FitParams params;
  for (int trial = 0; trial < 20; ++trial) {
    const MvsProblem prob = random_problem(rng);
    const MvsResult res = solve_mvs(prob, params);
    EXPECT_LE(res.final_objective, res.initial_objective + 1e-12);
    for (std::size_t i = 0; i < prob.sample_u.size(); ++i) {
      const double z = eval(res.spline, prob.sample_u[i]).z();
      EXPECT_GE(z, prob.lower[i] - 1e-6);
      EXPECT_LE(z, prob.upper[i] + 1e-6);
    }
    const double a = res.spline.domain_begin(), b = res.spline.domain_end();
    EXPECT_NEAR(eval(res.spline, a).z(), prob.start_value, 1e-6);
    EXPECT_NEAR(eval(res.spline, b).z(), prob.end_value, 1e-6);
    EXPECT_NEAR(eval(res.spline, a, 1).z(), prob.start_slope, 1e-5);
    EXPECT_NEAR(eval(res.spline, b, 1).z(), prob.end_slope, 1e-5);
    // x and y control points are frozen.
    for (int j = 0; j < 15; ++j) {
      EXPECT_EQ(res.spline.control_points[j].x(), prob.spline.control_points[j].x());
      EXPECT_EQ(res.spline.control_points[j].y(), prob.spline.control_points[j].y());
    }
    // Trace objective never increases.
    for (std::size_t k = 1; k < res.trace.size(); ++k)
      EXPECT_LE(res.trace[k].objective, res.trace[k - 1].objective);
  }
}

TEST(SolveMvs, InfeasibleEndpointRaises) {
  std::mt19937_64 rng(65);
  MvsProblem prob = random_problem(rng);
  prob.start_value = prob.upper.front() + 5.0;
  try {
    solve_mvs(prob, FitParams{});
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::MvsFit);
    EXPECT_STREQ(e.what(), "MVS infeasible");
  }
}

TEST(SolveMvs, TraceCsv) {
  const std::string csv = trace_to_csv({{0, 2.0, 0.0}, {1, 1.5, 1e-9}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,objective,max_violation");
  EXPECT_NE(csv.find("1,1.5,"), std::string::npos);
}

TEST(CameraFrame, IdentityIntrinsics) {
  SplineCurve s;
  s.degree = 1;
  s.knots = {0, 0, 1, 1};
  s.control_points = {Vec3(2, 3, 10), Vec3(-4, 7, 1)};
  const StereoRig rig;
  const SplineCurve c = to_camera_frame(s, rig);
  EXPECT_EQ(c.frame, Frame::Camera);
  EXPECT_TRUE(c.control_points[0].isApprox(Vec3(20, 30, 10), 1e-15));
  EXPECT_TRUE(c.control_points[1].isApprox(Vec3(-4, 7, 1), 1e-15));
}

TEST(CameraFrame, PrincipalPointMapsToOpticalAxis) {
  const StereoRig rig = StereoRig::canonical(800, 320, 240, 5);
  SplineCurve s;
  s.degree = 1;
  s.knots = {0, 0, 1, 1};
  s.control_points = {Vec3(320, 240, 250), Vec3(1120, 240, 100)};
  const SplineCurve c = to_camera_frame(s, rig);
  EXPECT_NEAR(c.control_points[0].x(), 0.0, 1e-12);
  EXPECT_NEAR(c.control_points[0].y(), 0.0, 1e-12);
  EXPECT_NEAR(c.control_points[0].z(), 250.0, 1e-12);
  EXPECT_NEAR(c.control_points[1].x(), 100.0, 1e-12);
}

TEST(CameraFrame, RoundTrip) {
  std::mt19937_64 rng(66);
  const StereoRig rig = StereoRig::canonical(800, 320, 240, 5);
  SplineCurve s = threadrecon::testing::random_spline(rng);
  for (auto& b : s.control_points) b = Vec3(320 + 20 * b.x(), 240 + 20 * b.y(), 150 + 5 * b.z());
  const SplineCurve back = to_pixel_frame(to_camera_frame(s, rig), rig);
  EXPECT_EQ(back.frame, Frame::PixelDepth);
  for (int j = 0; j < s.num_control_points(); ++j)
    EXPECT_LE((back.control_points[j] - s.control_points[j]).norm(), 1e-9);
}

TEST(CameraFrame, SingularIntrinsicsRejected) {
  StereoRig rig;
  rig.G.setZero();
  SplineCurve s;
  s.degree = 1;
  s.knots = {0, 0, 1, 1};
  s.control_points = {Vec3(0, 0, 1), Vec3(1, 1, 1)};
  EXPECT_THROW(to_camera_frame(s, rig), ConfigError);
}

TEST(FitParamsValidation, RejectsBadValues) {
  FitParams p;
  p.m = 4;
  EXPECT_THROW(p.validate(), ConfigError);
  p = FitParams{};
  p.gap_threshold = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = FitParams{};
  p.boundary_factor = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = FitParams{};
  p.polyline_samples_per_control_point = -1;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_NO_THROW(FitParams{}.validate());
}

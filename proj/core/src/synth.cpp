#include "threadrecon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>
#include <json.hpp>

#include "threadrecon/errors.hpp"
#include "threadrecon/format.hpp"

namespace threadrecon {

StereoRig SceneConfig::rig() const {
  return StereoRig::canonical(focal, 0.5 * (width - 1), 0.5 * (height - 1), baseline, "mm");
}

void SceneConfig::validate() const {
  if (width < 16 || height < 16) throw ConfigError("image too small");
  if (!(focal > 0.0) || !(baseline > 0.0)) throw ConfigError("focal and baseline must be positive");
  if (!(depth_min > 0.0 && depth_max > depth_min)) throw ConfigError("invalid depth range");
  if (!(length_min > 0.0 && length_max >= length_min)) throw ConfigError("invalid length range");
  if (!(stroke_width_min > 0.0 && stroke_width_max >= stroke_width_min))
    throw ConfigError("invalid stroke width range");
  if (truth_vertices < 100) throw ConfigError("truth_vertices must be >= 100");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be nonnegative");
}

namespace {

// Distribution-free draws from mt19937_64 so scenes are identical across
// standard library implementations.
class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  int uniform_int(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)) % (hi - lo + 1); }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  Vec3 unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
  }

 private:
  std::mt19937_64 engine_;
};

struct Projected {
  double x = 0.0, y = 0.0;
};

Projected project(const Vec3& p, const SceneConfig& cfg, double shift_x) {
  const double cx = 0.5 * (cfg.width - 1), cy = 0.5 * (cfg.height - 1);
  return {cfg.focal * (p.x() - shift_x) / p.z() + cx, cfg.focal * p.y() / p.z() + cy};
}

std::vector<Vec3> random_centerline(SceneRng& rng, const SceneConfig& cfg) {
  const int n_ctrl = rng.uniform_int(6, 9);
  std::vector<Vec3> ctrl{Vec3::Zero()};
  Vec3 dir = rng.unit_vector();
  dir.z() *= 0.35;
  dir.normalize();
  for (int i = 1; i < n_ctrl; ++i) {
    ctrl.push_back(ctrl.back() + dir);
    Vec3 turn = rng.unit_vector();
    turn.z() *= 0.35;
    dir = (dir + 0.9 * turn).normalized();
  }
  SplineCurve s;
  s.degree = 3;
  s.control_points = ctrl;
  s.knots = clamped_uniform_knots(n_ctrl, 3, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(cfg.truth_vertices));
  for (const double u : uniform_parameters(s, cfg.truth_vertices)) pts.push_back(eval(s, u));
  return pts;
}

bool min_curvature_radius_ok(const std::vector<Vec3>& pts, double min_radius) {
  const std::size_t step = std::max<std::size_t>(1, pts.size() / 400);
  for (std::size_t i = step; i + step < pts.size(); i += step) {
    const Vec3 a = pts[i - step], b = pts[i], c = pts[i + step];
    const double ab = (b - a).norm(), bc = (c - b).norm(), ca = (a - c).norm();
    const double area2 = (b - a).cross(c - a).norm();
    if (area2 <= 0.0) continue;
    const double radius = ab * bc * ca / (2.0 * area2);
    if (radius < min_radius) return false;
  }
  return true;
}

bool view_ok(const std::vector<Vec3>& pts, const SceneConfig& cfg, double shift_x) {
  const std::size_t step = std::max<std::size_t>(1, pts.size() / 600);
  std::vector<Projected> proj;
  std::vector<double> arc;
  double s = 0.0;
  for (std::size_t i = 0; i < pts.size(); i += step) {
    const auto p = project(pts[i], cfg, shift_x);
    if (p.x < cfg.image_margin || p.y < cfg.image_margin || p.x > cfg.width - 1 - cfg.image_margin ||
        p.y > cfg.height - 1 - cfg.image_margin)
      return false;
    if (!proj.empty()) s += std::hypot(p.x - proj.back().x, p.y - proj.back().y);
    proj.push_back(p);
    arc.push_back(s);
  }
  const double sep = cfg.min_self_distance;
  for (std::size_t i = 0; i < proj.size(); ++i)
    for (std::size_t j = i + 1; j < proj.size(); ++j) {
      if (arc[j] - arc[i] < 3.0 * sep) continue;
      if (std::hypot(proj[i].x - proj[j].x, proj[i].y - proj[j].y) < sep) return false;
    }
  return true;
}

struct Footprint {
  Raster<double> dist;
  Raster<double> depth;
  Raster<double> arclength;
};

double point_segment_param(double px, double py, const Projected& a, const Projected& b, double& dist) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  dist = std::hypot(px - (a.x + t * vx), py - (a.y + t * vy));
  return t;
}

Footprint rasterize(const std::vector<Vec3>& pts, const std::vector<double>& arclen, const SceneConfig& cfg,
                    double shift_x, double half_width) {
  const double inf = std::numeric_limits<double>::infinity();
  Footprint fp{Raster<double>(cfg.width, cfg.height, inf), Raster<double>(cfg.width, cfg.height, 0.0),
               Raster<double>(cfg.width, cfg.height, 0.0)};
  std::vector<Projected> proj(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) proj[i] = project(pts[i], cfg, shift_x);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto& a = proj[i];
    const auto& b = proj[i + 1];
    const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - half_width)) - 1;
    const int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + half_width)) + 1;
    const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - half_width)) - 1;
    const int y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + half_width)) + 1;
    for (int y = std::max(0, y0); y <= std::min(cfg.height - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(cfg.width - 1, x1); ++x) {
        double d = 0.0;
        const double t = point_segment_param(x, y, a, b, d);
        if (d > half_width || d >= fp.dist(x, y)) continue;
        fp.dist(x, y) = d;
        fp.depth(x, y) = pts[i].z() + t * (pts[i + 1].z() - pts[i].z());
        fp.arclength(x, y) = arclen[i] + t * (arclen[i + 1] - arclen[i]);
      }
  }
  return fp;
}

void render(const Footprint& fp, const SceneConfig& cfg, SceneRng& rng, GrayImage& image, Mask& mask) {
  image = GrayImage(cfg.width, cfg.height, 190);
  mask = Mask(cfg.width, cfg.height, 0);
  const double period = 7.0;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      double value = 190.0;
      const bool in = std::isfinite(fp.dist(x, y));
      if (in) {
        mask(x, y) = 1;
        const double depth_frac = (fp.depth(x, y) - cfg.depth_min) / (cfg.depth_max - cfg.depth_min);
        value = 40.0 + 90.0 * depth_frac +
                cfg.texture_amplitude * std::sin(2.0 * std::numbers::pi * fp.arclength(x, y) / period);
      }
      if (cfg.noise_sigma > 0.0) value += cfg.noise_sigma * rng.normal();
      value = std::clamp(std::round(value), 0.0, in ? 249.0 : 255.0);
      image(x, y) = static_cast<std::uint8_t>(value);
    }
}

}  // namespace

double polyline_length(const std::vector<Vec3>& polyline) {
  double total = 0.0;
  for (std::size_t i = 1; i < polyline.size(); ++i) total += (polyline[i] - polyline[i - 1]).norm();
  return total;
}

SyntheticScene render_scene(std::vector<Vec3> truth, const SceneConfig& cfg, double stroke_width,
                            std::uint64_t seed) {
  cfg.validate();
  SceneRng rng(seed ^ 0x9E3779B97F4A7C15ull);
  SyntheticScene scene;
  scene.seed = seed;
  scene.rig = cfg.rig();
  scene.ground_truth = std::move(truth);
  scene.curve_length = polyline_length(scene.ground_truth);
  scene.stroke_width = stroke_width;

  std::vector<double> arclen{0.0};
  for (std::size_t i = 1; i < scene.ground_truth.size(); ++i)
    arclen.push_back(arclen.back() + (scene.ground_truth[i] - scene.ground_truth[i - 1]).norm());

  const double half = 0.5 * scene.stroke_width;
  const auto left_fp = rasterize(scene.ground_truth, arclen, cfg, 0.0, half);
  const auto right_fp = rasterize(scene.ground_truth, arclen, cfg, cfg.baseline, half);
  render(left_fp, cfg, rng, scene.left, scene.left_mask);
  render(right_fp, cfg, rng, scene.right, scene.right_mask);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  scene.true_disparity = Raster<double>(cfg.width, cfg.height, nan);
  scene.true_arclength = Raster<double>(cfg.width, cfg.height, nan);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      if (scene.left_mask(x, y)) {
        scene.true_disparity(x, y) = cfg.focal * cfg.baseline / left_fp.depth(x, y);
        scene.true_arclength(x, y) = left_fp.arclength(x, y);
      }
  return scene;
}

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  SceneRng rng(seed);
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    auto pts = random_centerline(rng, cfg);
    const double target = rng.uniform(cfg.length_min, cfg.length_max);
    const double scale = target / polyline_length(pts);
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    const double roll = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(roll, Vec3::UnitZ()).toRotationMatrix();
    double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
    for (auto& p : pts) {
      p = rot * ((p - centroid) * scale);
      zmin = std::min(zmin, p.z());
      zmax = std::max(zmax, p.z());
    }
    const double lo = cfg.depth_min - zmin, hi = cfg.depth_max - zmax;
    const double xy_jitter_x = rng.uniform(-0.1, 0.1);
    const double xy_jitter_y = rng.uniform(-0.1, 0.1);
    const double depth_pick = rng.uniform();
    if (!(hi > lo)) continue;
    const double zc = lo + depth_pick * (hi - lo);
    const Vec3 offset(xy_jitter_x * zc + 0.5 * cfg.baseline, xy_jitter_y * zc, zc);
    for (auto& p : pts) p += offset;

    if (!min_curvature_radius_ok(pts, 4.0)) continue;
    if (!view_ok(pts, cfg, 0.0) || !view_ok(pts, cfg, cfg.baseline)) continue;

    const double stroke = rng.uniform(cfg.stroke_width_min, cfg.stroke_width_max);
    SyntheticScene scene = render_scene(std::move(pts), cfg, stroke, seed);
    return scene;
  }
  throw GenerationError("no admissible curve for seed " + std::to_string(seed) + " after " +
                        std::to_string(cfg.max_retries) + " attempts");
}

void write_scene_bundle(const std::filesystem::path& dir, const SyntheticScene& scene) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_png_gray(tmp / "left.png", scene.left);
  write_png_gray(tmp / "right.png", scene.right);
  write_png_mask(tmp / "mask_left.png", scene.left_mask);
  write_png_mask(tmp / "mask_right.png", scene.right_mask);
  write_rig(tmp / "rig.json", scene.rig);
  {
    std::ofstream f(tmp / "truth.csv", std::ios::binary);
    const auto& u = scene.rig.units;
    f << "x_" << u << ",y_" << u << ",z_" << u << "\n";
    for (const auto& p : scene.ground_truth)
      f << format_double(p.x()) << ',' << format_double(p.y()) << ',' << format_double(p.z()) << '\n';
    if (!f) throw std::runtime_error("failed writing truth.csv");
  }
  {
    nlohmann::ordered_json meta;
    meta["seed"] = scene.seed;
    meta["curve_length"] = scene.curve_length;
    meta["stroke_width"] = scene.stroke_width;
    meta["width"] = scene.left.width();
    meta["height"] = scene.left.height();
    std::ofstream f(tmp / "scene.json", std::ios::binary);
    f << meta.dump(2) << "\n";
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

std::vector<Vec3> read_truth_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::vector<Vec3> pts;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw std::runtime_error("malformed row in " + path.string());
    pts.emplace_back(x, y, z);
  }
  return pts;
}

SceneBundle read_scene_bundle(const std::filesystem::path& dir) {
  SceneBundle b;
  b.left = read_png_gray(dir / "left.png");
  b.right = read_png_gray(dir / "right.png");
  b.left_mask = read_png_mask(dir / "mask_left.png");
  b.right_mask = read_png_mask(dir / "mask_right.png");
  b.rig = read_rig(dir / "rig.json");
  if (std::filesystem::exists(dir / "truth.csv")) b.ground_truth = read_truth_csv(dir / "truth.csv");
  return b;
}

}  // namespace threadrecon

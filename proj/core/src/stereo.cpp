#include "threadrecon/stereo.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/LU>
#include <json.hpp>

#include "threadrecon/errors.hpp"

namespace threadrecon {

StereoRig StereoRig::canonical(double focal, double cx, double cy, double baseline,
                               std::string units) {
  StereoRig rig;
  rig.Q << 1, 0, 0, -cx,
           0, 1, 0, -cy,
           0, 0, 0, focal,
           0, 0, 1.0 / baseline, 0;
  rig.G << focal, 0, cx,
           0, focal, cy,
           0, 0, 1;
  rig.units = std::move(units);
  return rig;
}

double StereoRig::baseline() const {
  if (Q(3, 2) == 0.0) throw ConfigError("Q has no disparity-to-W term; baseline undefined");
  return 1.0 / std::abs(Q(3, 2));
}

void StereoRig::validate() const {
  if (!(std::abs(Q.determinant()) > 1e-12)) throw ConfigError("singular disparity-to-depth matrix Q");
  if (!(std::abs(G.determinant()) > 1e-12)) throw ConfigError("singular camera matrix G");
}

StereoRig rig_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  StereoRig rig;
  const auto& q = j.at("Q");
  const auto& g = j.at("G");
  if (q.size() != 4 || g.size() != 3) throw ConfigError("rig.json: Q must be 4x4 and G 3x3");
  for (int r = 0; r < 4; ++r) {
    if (q[r].size() != 4) throw ConfigError("rig.json: Q must be 4x4");
    for (int c = 0; c < 4; ++c) rig.Q(r, c) = q[r][c].get<double>();
  }
  for (int r = 0; r < 3; ++r) {
    if (g[r].size() != 3) throw ConfigError("rig.json: G must be 3x3");
    for (int c = 0; c < 3; ++c) rig.G(r, c) = g[r][c].get<double>();
  }
  rig.units = j.value("units", "mm");
  rig.validate();
  return rig;
}

std::string rig_to_json(const StereoRig& rig) {
  nlohmann::ordered_json j;
  auto q = nlohmann::ordered_json::array();
  for (int r = 0; r < 4; ++r) q.push_back({rig.Q(r, 0), rig.Q(r, 1), rig.Q(r, 2), rig.Q(r, 3)});
  auto g = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) g.push_back({rig.G(r, 0), rig.G(r, 1), rig.G(r, 2)});
  j["Q"] = q;
  j["G"] = g;
  j["units"] = rig.units;
  return j.dump(2) + "\n";
}

StereoRig read_rig(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read rig file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return rig_from_json(ss.str());
}

void write_rig(const std::filesystem::path& path, const StereoRig& rig) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << rig_to_json(rig);
}

void MatchParams::validate() const {
  if (alpha < 4) throw ConfigError("alpha must be >= 4");
  if (window_radius < 1) throw ConfigError("window_radius must be >= 1");
  if (!(reliability_threshold > 0.0 && reliability_threshold < 1.0))
    throw ConfigError("reliability_threshold must lie in (0, 1)");
  if (!(emin_floor > 0.0)) throw ConfigError("emin_floor must be positive");
  if (!(eps2 > 0.0)) throw ConfigError("eps2 must be positive");
}

SegmentedImage lift(const GrayImage& image, const Mask& mask) {
  if (image.width() != mask.width() || image.height() != mask.height())
    throw std::invalid_argument("image and mask dimensions differ");
  if (mask_count(mask) == 0) throw StageError(Stage::StereoMatch, "empty segmentation");
  SegmentedImage out{image, mask, GrayImage(image.width(), image.height(), kBackground)};
  for (std::size_t i = 0; i < image.data().size(); ++i)
    if (mask.data()[i]) out.lifted.data()[i] = image.data()[i];
  return out;
}

double match_energy(const SegmentedImage& left, const SegmentedImage& right, Pixel p, int d,
                    const MatchParams& params) {
  const int r = params.window_radius;
  double energy = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    const int y = p.y + dy;
    for (int dx = -r; dx <= r; ++dx) {
      const int x = p.x + dx;
      if (!left.mask.contains(x, y) || !left.mask(x, y)) continue;
      const double l = left.lifted(x, y);
      const double rv = right.lifted.contains(x - d, y) ? right.lifted(x - d, y) : kBackground;
      energy += (l - rv) * (l - rv);
    }
  }
  return energy;
}

namespace {

DisparityChoice choose(const std::vector<double>& energies) {
  DisparityChoice c;
  const int n = static_cast<int>(energies.size());
  c.d_min = 0;
  for (int d = 1; d < n; ++d)
    if (energies[d] < energies[c.d_min]) c.d_min = d;
  c.e_min = energies[c.d_min];
  c.d_next = -1;
  for (int d = 0; d < n; ++d) {
    if (std::abs(d - c.d_min) <= 2) continue;
    if (c.d_next < 0 || energies[d] < energies[c.d_next]) c.d_next = d;
  }
  c.e_next = energies[c.d_next];
  return c;
}

}  // namespace

DisparityChoice best_disparities(const SegmentedImage& left, const SegmentedImage& right, Pixel p,
                                 const MatchParams& params) {
  if (params.alpha < 4)
    throw ConfigError("alpha must be >= 4 so a runner-up disparity outside the exclusion band exists");
  std::vector<double> energies(static_cast<std::size_t>(params.alpha) + 1);
  for (int d = 0; d <= params.alpha; ++d) energies[d] = match_energy(left, right, p, d, params);
  return choose(energies);
}

double reliability(double e_min, double e_next, const MatchParams& params) {
  const double ratio = (e_next - e_min) / (params.eps2 * std::max(e_min, params.emin_floor));
  return 1.0 / (1.0 + std::exp(-params.eps1 * (ratio - params.eps3)));
}

double disparity_to_depth(const StereoRig& rig, Pixel p, double d) {
  const Eigen::Vector4d h = rig.Q * Eigen::Vector4d(p.x, p.y, d, 1.0);
  if (h(3) == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return h(2) / h(3);
}

DepthField depth_map(const SegmentedImage& left, const SegmentedImage& right, const StereoRig& rig,
                     const MatchParams& params) {
  params.validate();
  rig.validate();
  if (params.alpha < 4)
    throw ConfigError("alpha must be >= 4 so a runner-up disparity outside the exclusion band exists");
  if (left.lifted.width() != right.lifted.width() || left.lifted.height() != right.lifted.height())
    throw std::invalid_argument("left and right images differ in size");

  DepthField field;
  field.samples = Raster<DepthSample>(left.lifted.width(), left.lifted.height());
  field.left_mask = left.mask;
  field.pixels = mask_pixels(left.mask);

  std::vector<double> energies(static_cast<std::size_t>(params.alpha) + 1);
  for (const Pixel p : field.pixels) {
    for (int d = 0; d <= params.alpha; ++d) energies[d] = match_energy(left, right, p, d, params);
    const DisparityChoice c = choose(energies);
    DepthSample& s = field.samples(p);
    s.d_min = c.d_min;
    s.d_next = c.d_next;
    s.e_min = c.e_min;
    s.e_next = c.e_next;
    s.reliability = reliability(c.e_min, c.e_next, params);
    s.depth = disparity_to_depth(rig, p, c.d_min);
    s.valid = c.d_min > 0 && std::isfinite(s.depth);
  }
  return field;
}

}  // namespace threadrecon

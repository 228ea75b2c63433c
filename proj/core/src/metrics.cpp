#include "threadrecon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "threadrecon/format.hpp"

namespace threadrecon {

double point_polyline_distance(const Vec3& p, const std::vector<Vec3>& polyline) {
  if (polyline.empty()) return std::numeric_limits<double>::infinity();
  if (polyline.size() == 1) return (p - polyline.front()).norm();
  double best2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    const Vec3 a = polyline[i];
    const Vec3 v = polyline[i + 1] - a;
    const double len2 = v.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(v) / len2, 0.0, 1.0) : 0.0;
    best2 = std::min(best2, (a + t * v - p).squaredNorm());
  }
  return std::sqrt(best2);
}

CurveErrors curve_errors(const SplineCurve& reconstruction, const std::vector<Vec3>& truth, int samples) {
  CurveErrors e;
  const auto us = uniform_parameters(reconstruction, samples);
  for (const double u : us) {
    const double d = point_polyline_distance(eval(reconstruction, u), truth);
    e.mean += d;
    e.max = std::max(e.max, d);
  }
  e.mean /= static_cast<double>(us.size());
  return e;
}

double length_error(const SplineCurve& reconstruction, const std::vector<Vec3>& truth) {
  double truth_len = 0.0;
  for (std::size_t i = 1; i < truth.size(); ++i) truth_len += (truth[i] - truth[i - 1]).norm();
  return std::abs(arc_length(reconstruction) - truth_len);
}

namespace {

// 1D squared distance transform of sampled function f (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    d[q] = (q - v[j]) * (q - v[j]) + f[v[j]];
  }
}

}  // namespace

Raster<double> distance_transform(const Mask& mask) {
  const int w = mask.width(), h = mask.height();
  const double inf = std::numeric_limits<double>::infinity();
  Raster<double> out(w, h, inf);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = mask(x, y) ? 0.0 : inf;

  const int n = std::max(w, h);
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n)),
      z(static_cast<std::size_t>(n) + 1);
  std::vector<int> v(static_cast<std::size_t>(n));
  f.resize(static_cast<std::size_t>(h));
  d.resize(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = out(x, y);
    edt_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) out(x, y) = d[y];
  }
  f.resize(static_cast<std::size_t>(w));
  d.resize(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = out(x, y);
    edt_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) out(x, y) = std::sqrt(d[x]);
  }
  return out;
}

namespace {

double mask_distance(const Raster<double>& dt, const std::vector<Pixel>& members, double x, double y) {
  const int px = static_cast<int>(std::lround(x));
  const int py = static_cast<int>(std::lround(y));
  if (dt.contains(px, py)) return dt(px, py);
  double best = std::numeric_limits<double>::infinity();
  for (const Pixel p : members) best = std::min(best, std::hypot(p.x - x, p.y - y));
  return best;
}

}  // namespace

ReprojectionErrors reprojection_error(const SplineCurve& reconstruction, const Mask& left_mask,
                                      const Mask& right_mask, const StereoRig& rig, int samples) {
  const auto dt_left = distance_transform(left_mask);
  const auto dt_right = distance_transform(right_mask);
  const auto members_left = mask_pixels(left_mask);
  const auto members_right = mask_pixels(right_mask);
  const double diagonal = std::hypot(left_mask.width(), left_mask.height());
  const double baseline = rig.baseline();

  ReprojectionErrors e;
  const auto us = uniform_parameters(reconstruction, samples);
  for (const double u : us) {
    const Vec3 X = eval(reconstruction, u);
    double dl = diagonal, dr = diagonal;
    if (X.z() > 0.0) {
      const Vec3 l = rig.G * X;
      const Vec3 r = rig.G * Vec3(X.x() - baseline, X.y(), X.z());
      dl = std::min(diagonal, mask_distance(dt_left, members_left, l.x() / l.z(), l.y() / l.z()));
      dr = std::min(diagonal, mask_distance(dt_right, members_right, r.x() / r.z(), r.y() / r.z()));
    } else {
      ++e.behind_camera;
    }
    e.mean_left += dl;
    e.mean_right += dr;
    e.max_left = std::max(e.max_left, dl);
    e.max_right = std::max(e.max_right, dr);
  }
  e.mean_left /= static_cast<double>(us.size());
  e.mean_right /= static_cast<double>(us.size());
  return e;
}

std::string metrics_csv_header() {
  return "scene,e_S,e_S_max,e_len,e2d_mean_L,e2d_max_L,e2d_mean_R,e2d_max_R,status";
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::string row = r.scene;
  for (const double v : {r.e_S, r.e_S_max, r.e_len, r.e2d_mean_L, r.e2d_max_L, r.e2d_mean_R, r.e2d_max_R}) {
    row += ',';
    if (r.success) row += format_double(v);
  }
  std::string status = r.success ? "ok" : r.status;
  std::replace(status.begin(), status.end(), ',', ';');
  return row + ',' + status;
}

}  // namespace threadrecon

#include "threadrecon/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "threadrecon/format.hpp"
#include "threadrecon/spline_io.hpp"

namespace threadrecon {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void ReconstructionParams::validate() const {
  match.validate();
  cluster.validate();
  fit.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

Reconstruction reconstruct(const GrayImage& left, const GrayImage& right, const Mask& left_mask,
                           const Mask& right_mask, const StereoRig& rig,
                           const ReconstructionParams& params) {
  params.validate();
  rig.validate();
  Reconstruction rec;

  auto t0 = Clock::now();
  const SegmentedImage lifted_left = lift(left, left_mask);
  const SegmentedImage lifted_right = lift(right, right_mask);
  rec.field = depth_map(lifted_left, lifted_right, rig, params.match);
  rec.stage_seconds[0] = seconds_since(t0);

  t0 = Clock::now();
  rec.reliable = prune_reliable(rec.field, params.match);
  auto clusters = cluster(rec.reliable, rec.field, params.cluster);
  rec.chain = build_chain(std::move(clusters), left_mask, params.cluster);
  rec.chain = extend_endpoints(std::move(rec.chain), left_mask, rec.field, params.cluster);
  rec.stage_seconds[1] = seconds_since(t0);

  t0 = Clock::now();
  rec.chain = densify(std::move(rec.chain), left_mask, rec.field, params.fit);
  rec.corridor = build_corridor(rec.chain, params.fit);
  rec.initial = init_spline(rec.chain.dense, rec.corridor, params.fit);
  const MvsProblem problem = build_problem(rec.initial, rec.corridor, params.fit);
  rec.mvs = solve_mvs(problem, params.fit);
  rec.pixel_spline = rec.mvs.spline;
  rec.pixel_spline.frame = Frame::PixelDepth;
  rec.camera_spline = to_camera_frame(rec.pixel_spline, rig);
  rec.stage_seconds[2] = seconds_since(t0);
  return rec;
}

void PipelineConfig::validate() const {
  params.validate();
  for (const auto& [name, path] : {std::pair{"rig", rig}, {"left", left}, {"right", right},
                                   {"mask_left", mask_left}, {"mask_right", mask_right}}) {
    if (path.empty()) throw ConfigError(std::string("missing input path '") + name + "'");
    if (!fs::exists(path)) throw ConfigError(std::string(name) + " file does not exist: " + path.string());
  }
  if (output_dir.empty()) throw ConfigError("missing output_dir");
}

namespace {

template <typename T>
void read_field(const json& obj, const char* key, T& out, std::vector<std::string>& seen) {
  seen.emplace_back(key);
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void reject_unknown(const json& obj, const std::vector<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + where + key + "'");
  }
}

ReconstructionParams parse_params(const json& j) {
  ReconstructionParams p;
  std::vector<std::string> top;
  if (j.contains("match")) {
    const auto& m = j.at("match");
    std::vector<std::string> seen;
    read_field(m, "alpha", p.match.alpha, seen);
    read_field(m, "window_radius", p.match.window_radius, seen);
    read_field(m, "eps1", p.match.eps1, seen);
    read_field(m, "eps2", p.match.eps2, seen);
    read_field(m, "eps3", p.match.eps3, seen);
    read_field(m, "reliability_threshold", p.match.reliability_threshold, seen);
    read_field(m, "emin_floor", p.match.emin_floor, seen);
    reject_unknown(m, seen, "match.");
  }
  if (j.contains("cluster")) {
    const auto& c = j.at("cluster");
    std::vector<std::string> seen;
    read_field(c, "max_cluster_size", p.cluster.max_cluster_size, seen);
    read_field(c, "min_cluster_size", p.cluster.min_cluster_size, seen);
    read_field(c, "neighbor_manhattan_radius", p.cluster.neighbor_manhattan_radius, seen);
    read_field(c, "solidify_radius", p.cluster.solidify_radius, seen);
    read_field(c, "endpoint_unreached_min", p.cluster.endpoint_unreached_min, seen);
    reject_unknown(c, seen, "cluster.");
  }
  if (j.contains("fit")) {
    const auto& f = j.at("fit");
    std::vector<std::string> seen;
    read_field(f, "m", p.fit.m, seen);
    read_field(f, "degree", p.fit.degree, seen);
    read_field(f, "gap_threshold", p.fit.gap_threshold, seen);
    read_field(f, "r_k_fraction", p.fit.r_k_fraction, seen);
    read_field(f, "boundary_factor", p.fit.boundary_factor, seen);
    read_field(f, "min_halfwidth", p.fit.min_halfwidth, seen);
    read_field(f, "min_halfwidth_fraction", p.fit.min_halfwidth_fraction, seen);
    read_field(f, "constraint_samples", p.fit.constraint_samples, seen);
    read_field(f, "max_iterations", p.fit.max_iterations, seen);
    read_field(f, "tolerance", p.fit.tolerance, seen);
    read_field(f, "feasibility_tolerance", p.fit.feasibility_tolerance, seen);
    read_field(f, "polyline_samples_per_control_point", p.fit.polyline_samples_per_control_point, seen);
    reject_unknown(f, seen, "fit.");
  }
  return p;
}

}  // namespace

ReconstructionParams params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  reject_unknown(j, {"match", "cluster", "fit", "inputs", "output_dir", "verbosity"}, "");
  try {
    auto p = parse_params(j);
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

PipelineConfig config_from_json(const std::string& text, const fs::path& base_dir) {
  PipelineConfig cfg;
  cfg.params = params_from_json(text);
  const json j = json::parse(text);
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    if (j.contains("inputs")) {
      const auto& in = j.at("inputs");
      reject_unknown(in, {"rig", "left", "right", "mask_left", "mask_right"}, "inputs.");
      if (in.contains("rig")) cfg.rig = resolve(in.at("rig").get<std::string>());
      if (in.contains("left")) cfg.left = resolve(in.at("left").get<std::string>());
      if (in.contains("right")) cfg.right = resolve(in.at("right").get<std::string>());
      if (in.contains("mask_left")) cfg.mask_left = resolve(in.at("mask_left").get<std::string>());
      if (in.contains("mask_right")) cfg.mask_right = resolve(in.at("mask_right").get<std::string>());
    }
    if (j.contains("output_dir")) cfg.output_dir = resolve(j.at("output_dir").get<std::string>());
    if (j.contains("verbosity")) cfg.verbosity = j.at("verbosity").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

std::string params_to_json(const ReconstructionParams& p) {
  json j;
  j["match"] = {{"alpha", p.match.alpha},
                {"window_radius", p.match.window_radius},
                {"eps1", p.match.eps1},
                {"eps2", p.match.eps2},
                {"eps3", p.match.eps3},
                {"reliability_threshold", p.match.reliability_threshold},
                {"emin_floor", p.match.emin_floor}};
  j["cluster"] = {{"max_cluster_size", p.cluster.max_cluster_size},
                  {"min_cluster_size", p.cluster.min_cluster_size},
                  {"neighbor_manhattan_radius", p.cluster.neighbor_manhattan_radius},
                  {"solidify_radius", p.cluster.solidify_radius},
                  {"endpoint_unreached_min", p.cluster.endpoint_unreached_min}};
  j["fit"] = {{"m", p.fit.m},
              {"degree", p.fit.degree},
              {"gap_threshold", p.fit.gap_threshold},
              {"r_k_fraction", p.fit.r_k_fraction},
              {"boundary_factor", p.fit.boundary_factor},
              {"min_halfwidth", p.fit.min_halfwidth},
              {"min_halfwidth_fraction", p.fit.min_halfwidth_fraction},
              {"constraint_samples", p.fit.constraint_samples},
              {"max_iterations", p.fit.max_iterations},
              {"tolerance", p.fit.tolerance},
              {"feasibility_tolerance", p.fit.feasibility_tolerance},
              {"polyline_samples_per_control_point", p.fit.polyline_samples_per_control_point}};
  return j.dump(2) + "\n";
}

PipelineConfig config_for_bundle(const fs::path& bundle_dir, const ReconstructionParams& params,
                                 const fs::path& output_dir) {
  PipelineConfig cfg;
  cfg.params = params;
  cfg.rig = bundle_dir / "rig.json";
  cfg.left = bundle_dir / "left.png";
  cfg.right = bundle_dir / "right.png";
  cfg.mask_left = bundle_dir / "mask_left.png";
  cfg.mask_right = bundle_dir / "mask_right.png";
  cfg.output_dir = output_dir;
  return cfg;
}

int exit_code_for(Stage stage) {
  switch (stage) {
    case Stage::StereoMatch: return kExitStereoMatch;
    case Stage::KeypointGraph: return kExitKeypointGraph;
    case Stage::MvsFit: return kExitMvsFit;
  }
  return kExitIo;
}

int RunOutcome::exit_code() const {
  if (success) return kExitSuccess;
  return failed_stage ? exit_code_for(*failed_stage) : kExitIo;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

RunOutcome run_reconstruct(const PipelineConfig& config) {
  config.validate();
  RunOutcome out;
  const GrayImage left = read_png_gray(config.left);
  const GrayImage right = read_png_gray(config.right);
  const Mask mask_left = read_png_mask(config.mask_left);
  const Mask mask_right = read_png_mask(config.mask_right);
  const StereoRig rig = read_rig(config.rig);
  fs::create_directories(config.output_dir);

  try {
    const Reconstruction rec = reconstruct(left, right, mask_left, mask_right, rig, config.params);
    out.success = true;
    out.stage_seconds = rec.stage_seconds;
    out.spline_path = config.output_dir / "spline_camera.json";
    out.pixel_spline_path = config.output_dir / "spline_pixel.json";
    write_spline(out.spline_path, rec.camera_spline);
    write_spline(out.pixel_spline_path, rec.pixel_spline);
    const fs::path keypoints = config.output_dir / "keypoints.json";
    const fs::path trace = config.output_dir / "solver_trace.csv";
    write_text(keypoints, chain_to_json(rec.chain));
    write_text(trace, trace_to_csv(rec.mvs.trace));
    out.diagnostics = {keypoints, trace};
    if (config.verbosity > 0) {
      std::cerr << "keypoints: " << rec.chain.keypoints.size() << " (dropped " << rec.chain.dropped_keypoints
                << "), dense points: " << rec.chain.dense.size() << ", objective "
                << rec.mvs.initial_objective << " -> " << rec.mvs.final_objective << " in "
                << rec.mvs.iterations << " iterations\n";
      if (rec.mvs.dense_violation > 1e-6)
        std::cerr << "warning: corridor exceeded by " << rec.mvs.dense_violation
                  << " between constraint samples\n";
    }
  } catch (const StageError& e) {
    out.success = false;
    out.failed_stage = e.stage();
    out.reason = e.what();
    json report;
    report["status"] = "failure";
    report["stage"] = stage_name(e.stage());
    report["reason"] = e.what();
    report["exit_code"] = out.exit_code();
    const fs::path path = config.output_dir / "failure.json";
    write_text(path, report.dump(2) + "\n");
    out.diagnostics = {path};
  }
  return out;
}

std::vector<std::string> run_generate(std::uint64_t first, std::uint64_t last, const SceneConfig& config,
                                      const fs::path& dataset_dir) {
  config.validate();
  if (last < first) throw ConfigError("seed range is empty");
  fs::create_directories(dataset_dir);
  std::vector<std::string> names;
  json list = json::array();
  for (std::uint64_t seed = first; seed <= last; ++seed) {
    // Each bundle is written atomically, so a failing seed leaves nothing behind.
    const SyntheticScene scene = generate_scene(seed, config);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04llu", static_cast<unsigned long long>(seed));
    write_scene_bundle(dataset_dir / name, scene);
    names.emplace_back(name);
    list.push_back({{"name", name}, {"seed", seed}});
    if (seed == std::numeric_limits<std::uint64_t>::max()) break;
  }
  json manifest;
  manifest["scenes"] = list;
  manifest["generator"] = {{"width", config.width},
                           {"height", config.height},
                           {"focal", config.focal},
                           {"baseline", config.baseline},
                           {"depth_min", config.depth_min},
                           {"depth_max", config.depth_max},
                           {"length_min", config.length_min},
                           {"length_max", config.length_max},
                           {"stroke_width_min", config.stroke_width_min},
                           {"stroke_width_max", config.stroke_width_max},
                           {"noise_sigma", config.noise_sigma}};
  // Merge with an existing manifest so repeated runs over disjoint seed ranges accumulate.
  const fs::path manifest_path = dataset_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream f(manifest_path);
    json old = json::parse(f, nullptr, false);
    if (!old.is_discarded() && old.contains("scenes")) {
      json merged = json::array();
      for (const auto& s : old["scenes"])
        if (std::find(names.begin(), names.end(), s.value("name", "")) == names.end()) merged.push_back(s);
      for (const auto& s : list) merged.push_back(s);
      std::sort(merged.begin(), merged.end(),
                [](const json& a, const json& b) { return a.value("name", "") < b.value("name", ""); });
      manifest["scenes"] = merged;
    }
  }
  write_text(manifest_path, manifest.dump(2) + "\n");
  return names;
}

MetricsReport evaluate_scene(const std::string& name, const SceneBundle& bundle,
                             const ReconstructionParams& params, SplineCurve* camera_spline) {
  MetricsReport r;
  r.scene = name;
  try {
    const Reconstruction rec =
        reconstruct(bundle.left, bundle.right, bundle.left_mask, bundle.right_mask, bundle.rig, params);
    const CurveErrors ce = curve_errors(rec.camera_spline, bundle.ground_truth);
    const ReprojectionErrors re =
        reprojection_error(rec.camera_spline, bundle.left_mask, bundle.right_mask, bundle.rig);
    r.success = true;
    r.status = "ok";
    r.e_S = ce.mean;
    r.e_S_max = ce.max;
    r.e_len = length_error(rec.camera_spline, bundle.ground_truth);
    r.e2d_mean_L = re.mean_left;
    r.e2d_max_L = re.max_left;
    r.e2d_mean_R = re.mean_right;
    r.e2d_max_R = re.max_right;
    if (camera_spline) *camera_spline = rec.camera_spline;
  } catch (const StageError& e) {
    r.success = false;
    r.status = std::string(stage_name(e.stage())) + ": " + e.what();
  }
  return r;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

EvaluationSummary summarize(const std::vector<MetricsReport>& rows) {
  EvaluationSummary s;
  s.total = static_cast<int>(rows.size());
  std::vector<double> es, esmax, elen, ml, xl, mr, xr;
  for (const auto& r : rows) {
    if (!r.success) continue;
    ++s.successes;
    es.push_back(r.e_S);
    esmax.push_back(r.e_S_max);
    elen.push_back(r.e_len);
    ml.push_back(r.e2d_mean_L);
    xl.push_back(r.e2d_max_L);
    mr.push_back(r.e2d_mean_R);
    xr.push_back(r.e2d_max_R);
  }
  std::tie(s.mean_e_S, s.std_e_S) = mean_std(es);
  std::tie(s.mean_e_S_max, s.std_e_S_max) = mean_std(esmax);
  std::tie(s.mean_e_len, s.std_e_len) = mean_std(elen);
  s.mean_e2d_mean_L = mean_std(ml).first;
  s.mean_e2d_max_L = mean_std(xl).first;
  s.mean_e2d_mean_R = mean_std(mr).first;
  s.mean_e2d_max_R = mean_std(xr).first;
  return s;
}

std::string summary_csv(const EvaluationSummary& s) {
  std::ostringstream out;
  out << "successes,total,mu_e_S,sigma_e_S,mu_e_S_max,sigma_e_S_max,mu_e_len,sigma_e_len,"
         "mu_e2d_mean_L,mu_e2d_max_L,mu_e2d_mean_R,mu_e2d_max_R\n";
  out << s.successes << ',' << s.total;
  for (double v : {s.mean_e_S, s.std_e_S, s.mean_e_S_max, s.std_e_S_max, s.mean_e_len, s.std_e_len,
                   s.mean_e2d_mean_L, s.mean_e2d_max_L, s.mean_e2d_mean_R, s.mean_e2d_max_R}) {
    out << ',';
    if (s.successes > 0) out << format_double(v);
  }
  out << '\n';
  return out.str();
}

EvaluationSummary run_evaluate(const fs::path& dataset_dir, const ReconstructionParams& params,
                               const fs::path& output_dir) {
  params.validate();
  const fs::path manifest_path = dataset_dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw ConfigError("dataset has no manifest.json: " + dataset_dir.string());
  const json manifest = json::parse(mf);
  fs::create_directories(output_dir);

  std::vector<MetricsReport> rows;
  std::vector<std::string> missing;
  for (const auto& entry : manifest.at("scenes")) {
    const std::string name = entry.at("name").get<std::string>();
    const fs::path dir = dataset_dir / name;
    SceneBundle bundle;
    try {
      bundle = read_scene_bundle(dir);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping scene " << name << ": " << e.what() << "\n";
      missing.push_back(name);
      continue;
    }
    SplineCurve spline;
    rows.push_back(evaluate_scene(name, bundle, params, &spline));
    if (rows.back().success) {
      fs::create_directories(output_dir / name);
      write_spline(output_dir / name / "spline_camera.json", spline);
    }
  }

  std::string csv = metrics_csv_header() + "\n";
  for (const auto& r : rows) csv += metrics_csv_row(r) + "\n";
  write_text(output_dir / "metrics.csv", csv);
  EvaluationSummary summary = summarize(rows);
  summary.missing = missing;
  write_text(output_dir / "summary.csv", summary_csv(summary));
  return summary;
}

}  // namespace threadrecon

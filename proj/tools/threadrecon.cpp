// threadrecon: reconstruct a thread centerline from a rectified stereo pair,
// generate synthetic scene bundles, and evaluate reconstructions against them.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "threadrecon/pipeline.hpp"

namespace fs = std::filesystem;
using namespace threadrecon;

namespace {

struct Overrides {
  std::optional<int> alpha;
  std::optional<double> eps1, eps2, eps3, reliability_threshold;
  std::optional<int> max_cluster_size, min_cluster_size, endpoint_unreached_min;
  std::optional<int> m, degree, gap_threshold;
  std::optional<double> r_k_fraction, boundary_factor, min_halfwidth;
  std::optional<int> max_iterations;

  void add_to(CLI::App& app) {
    app.add_option("--alpha", alpha, "Largest disparity searched");
    app.add_option("--eps1", eps1, "Reliability slope");
    app.add_option("--eps2", eps2, "Reliability energy scale");
    app.add_option("--eps3", eps3, "Reliability crossover");
    app.add_option("--reliability-threshold", reliability_threshold, "Reliable if R exceeds this");
    app.add_option("--max-cluster-size", max_cluster_size, "Pixels per keypoint cluster, at most");
    app.add_option("--min-cluster-size", min_cluster_size, "Pixels per keypoint cluster, at least");
    app.add_option("--endpoint-unreached-min", endpoint_unreached_min, "Tail size that adds an end keypoint");
    app.add_option("--control-points", m, "Spline control points");
    app.add_option("--degree", degree, "Spline degree");
    app.add_option("--gap-threshold", gap_threshold, "Gap size (pixels) before densifying");
    app.add_option("--r-k-fraction", r_k_fraction, "Local line window as a fraction of keypoints");
    app.add_option("--boundary-factor", boundary_factor, "Corridor width factor");
    app.add_option("--min-halfwidth", min_halfwidth, "Minimum corridor half-width (depth units)");
    app.add_option("--max-iterations", max_iterations, "SQP iteration limit");
  }

  void apply(ReconstructionParams& p) const {
    if (alpha) p.match.alpha = *alpha;
    if (eps1) p.match.eps1 = *eps1;
    if (eps2) p.match.eps2 = *eps2;
    if (eps3) p.match.eps3 = *eps3;
    if (reliability_threshold) p.match.reliability_threshold = *reliability_threshold;
    if (max_cluster_size) p.cluster.max_cluster_size = *max_cluster_size;
    if (min_cluster_size) p.cluster.min_cluster_size = *min_cluster_size;
    if (endpoint_unreached_min) p.cluster.endpoint_unreached_min = *endpoint_unreached_min;
    if (m) p.fit.m = *m;
    if (degree) p.fit.degree = *degree;
    if (gap_threshold) p.fit.gap_threshold = *gap_threshold;
    if (r_k_fraction) p.fit.r_k_fraction = *r_k_fraction;
    if (boundary_factor) p.fit.boundary_factor = *boundary_factor;
    if (min_halfwidth) p.fit.min_halfwidth = *min_halfwidth;
    if (max_iterations) p.fit.max_iterations = *max_iterations;
  }
};

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int env_verbosity() {
  const char* v = std::getenv("THREADRECON_VERBOSE");
  return v ? std::atoi(v) : 0;
}

void print_summary(const EvaluationSummary& s) {
  std::cout << "successes: " << s.successes << "/" << s.total << "\n";
  if (s.successes == 0) return;
  std::cout << "e_S      mean " << s.mean_e_S << "  std " << s.std_e_S << "\n"
            << "e_S_max  mean " << s.mean_e_S_max << "  std " << s.std_e_S_max << "\n"
            << "e_len    mean " << s.mean_e_len << "  std " << s.std_e_len << "\n"
            << "reprojection mean L " << s.mean_e2d_mean_L << "  R " << s.mean_e2d_mean_R << "\n";
  if (!s.missing.empty()) std::cout << "missing scenes: " << s.missing.size() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo reconstruction of thin thread centerlines"};
  app.require_subcommand(1);

  Overrides overrides;

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a spline from a stereo pair");
  std::string config_path, bundle_dir, rig, left, right, mask_left, mask_right, output_dir;
  rec->add_option("--config", config_path, "Config JSON (parameters, inputs, output_dir)");
  rec->add_option("--bundle", bundle_dir, "Scene bundle directory providing all inputs");
  rec->add_option("--rig", rig, "Stereo rig JSON");
  rec->add_option("--left", left, "Left rectified image (PNG)");
  rec->add_option("--right", right, "Right rectified image (PNG)");
  rec->add_option("--mask-left", mask_left, "Left segmentation (PNG)");
  rec->add_option("--mask-right", mask_right, "Right segmentation (PNG)");
  rec->add_option("-o,--output", output_dir, "Output directory");
  overrides.add_to(*rec);

  auto* gen = app.add_subcommand("generate", "Write synthetic scene bundles");
  std::uint64_t first_seed = 0, last_seed = 39;
  std::string dataset_dir;
  SceneConfig scene_cfg;
  gen->add_option("--first-seed", first_seed, "First seed")->capture_default_str();
  gen->add_option("--last-seed", last_seed, "Last seed (inclusive)")->capture_default_str();
  gen->add_option("--noise", scene_cfg.noise_sigma, "Gaussian intensity noise sigma")->capture_default_str();
  gen->add_option("--depth-min", scene_cfg.depth_min, "Nearest centerline depth")->capture_default_str();
  gen->add_option("--depth-max", scene_cfg.depth_max, "Farthest centerline depth")->capture_default_str();
  gen->add_option("-o,--output", dataset_dir, "Dataset directory")->required();

  auto* eval = app.add_subcommand("evaluate", "Reconstruct and score every scene of a dataset");
  std::string eval_dataset, eval_output, eval_config;
  eval->add_option("--dataset", eval_dataset, "Dataset directory with manifest.json")->required();
  eval->add_option("--config", eval_config, "Config JSON supplying parameters");
  eval->add_option("-o,--output", eval_output, "Directory for metrics.csv and summary.csv")->required();
  Overrides eval_overrides;
  eval_overrides.add_to(*eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitSuccess : kExitUsage;
  }

  try {
    if (*rec) {
      PipelineConfig cfg;
      if (!config_path.empty()) {
        const fs::path p(config_path);
        cfg = config_from_json(read_file(p), p.parent_path());
      }
      if (!bundle_dir.empty()) {
        const PipelineConfig b = config_for_bundle(bundle_dir, cfg.params, cfg.output_dir);
        cfg.rig = b.rig;
        cfg.left = b.left;
        cfg.right = b.right;
        cfg.mask_left = b.mask_left;
        cfg.mask_right = b.mask_right;
      }
      if (!rig.empty()) cfg.rig = rig;
      if (!left.empty()) cfg.left = left;
      if (!right.empty()) cfg.right = right;
      if (!mask_left.empty()) cfg.mask_left = mask_left;
      if (!mask_right.empty()) cfg.mask_right = mask_right;
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      cfg.verbosity = std::max(cfg.verbosity, env_verbosity());
      overrides.apply(cfg.params);
      cfg.validate();

      const RunOutcome out = run_reconstruct(cfg);
      if (out.success) {
        std::cout << out.spline_path.string() << "\n";
        if (cfg.verbosity > 0)
          std::cerr << "stage seconds: " << out.stage_seconds[0] << " " << out.stage_seconds[1] << " "
                    << out.stage_seconds[2] << "\n";
      } else {
        std::cerr << "reconstruction failed in " << stage_name(*out.failed_stage) << ": " << out.reason << "\n";
      }
      return out.exit_code();
    }
    if (*gen) {
      const auto names = run_generate(first_seed, last_seed, scene_cfg, dataset_dir);
      std::cout << "wrote " << names.size() << " scenes to " << dataset_dir << "\n";
      return kExitSuccess;
    }
    if (*eval) {
      ReconstructionParams params;
      if (!eval_config.empty()) params = params_from_json(read_file(eval_config));
      eval_overrides.apply(params);
      const EvaluationSummary s = run_evaluate(eval_dataset, params, eval_output);
      print_summary(s);
      return kExitSuccess;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GenerationError& e) {
    std::cerr << "generation error: " << e.what() << "\n";
    return kExitGeneration;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

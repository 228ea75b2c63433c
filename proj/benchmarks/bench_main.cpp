#include <benchmark/benchmark.h>

#include "threadrecon/mvs.hpp"
#include "threadrecon/pipeline.hpp"
#include "threadrecon/stereo.hpp"
#include "threadrecon/synth.hpp"

using namespace threadrecon;

static void BM_GenerateScene(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(seed++ % 8));
}
BENCHMARK(BM_GenerateScene)->Unit(benchmark::kMillisecond);

static void BM_DepthMap(benchmark::State& state) {
  const SyntheticScene s = generate_scene(static_cast<std::uint64_t>(state.range(0)));
  const auto L = lift(s.left, s.left_mask);
  const auto R = lift(s.right, s.right_mask);
  const MatchParams params;
  for (auto _ : state) benchmark::DoNotOptimize(depth_map(L, R, s.rig, params));
  state.counters["mask_pixels"] = static_cast<double>(mask_count(s.left_mask));
}
BENCHMARK(BM_DepthMap)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_SolveMvs(benchmark::State& state) {
  const SyntheticScene s = generate_scene(static_cast<std::uint64_t>(state.range(0)));
  ReconstructionParams params;
  const Reconstruction r = reconstruct(s.left, s.right, s.left_mask, s.right_mask, s.rig, params);
  const MvsProblem prob = build_problem(r.initial, r.corridor, params.fit);
  for (auto _ : state) benchmark::DoNotOptimize(solve_mvs(prob, params.fit));
}
BENCHMARK(BM_SolveMvs)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Reconstruct(benchmark::State& state) {
  const SyntheticScene s = generate_scene(0);
  const ReconstructionParams params;
  for (auto _ : state)
    benchmark::DoNotOptimize(reconstruct(s.left, s.right, s.left_mask, s.right_mask, s.rig, params));
}
BENCHMARK(BM_Reconstruct)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

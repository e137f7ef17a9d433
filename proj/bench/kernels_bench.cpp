// Serial reference vs OpenMP kernels, plus single-prediction latency.
//   ./build/bench/ctsn_bench [--benchmark_filter=lbs]
// CTSN_THREADS caps the thread count.

#include "ctsn/datagen.hpp"
#include "ctsn/kernels.hpp"
#include "ctsn/network.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace ctsn;
namespace k = ctsn::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const k::GemmShape s{n, 64, 64};
  const auto a = random_vec(n * 64, 1), b = random_vec(64 * 64, 2);
  std::vector<double> c(n * 64);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm(s, a, b, c, false);
    else
      k::serial::gemm(s, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * 64 * 64));
}

// Graph-shaped segments: ~7 incoming edges per node.
template <bool Parallel>
void BM_segment_sum(benchmark::State& state) {
  const auto nodes = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 64;
  std::vector<std::uint32_t> ids, offsets{0};
  for (std::uint32_t v = 0; v < nodes; ++v) {
    for (int e = 0; e < 7; ++e) ids.push_back(v);
    offsets.push_back(static_cast<std::uint32_t>(ids.size()));
  }
  const auto values = random_vec(ids.size() * cols, 3);
  std::vector<double> out(nodes * cols);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::segment_sum(values, cols, offsets, out);
    else
      k::serial::segment_sum(values, cols, ids, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_lbs(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t joints = 24;
  const auto v = random_vec(3 * n, 4), t = random_vec(12 * joints, 5);
  auto w = random_vec(n * joints, 6);
  for (auto& x : w) x = std::abs(x);
  std::vector<double> out(3 * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::lbs(v, w, joints, t, out);
    else
      k::serial::lbs(v, w, joints, t, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_laplacian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::vector<std::uint32_t> offsets{0}, nb;
  for (std::size_t i = 0; i < n; ++i) {
    for (int e = 0; e < 6; ++e) nb.push_back(static_cast<std::uint32_t>(rng() % n));
    offsets.push_back(static_cast<std::uint32_t>(nb.size()));
  }
  const auto in = random_vec(3 * n, 8);
  std::vector<double> out(3 * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::laplacian_step(in, offsets, nb, 0.5, out);
    else
      k::serial::laplacian_step(in, offsets, nb, 0.5, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_predict(benchmark::State& state) {
  const ClothAsset a = make_asset(AssetKind::TubeSkirtBiped, static_cast<std::size_t>(state.range(0)), 0);
  NetworkConfig c;
  c.joints = a.rig.skeleton.joint_count();
  c.cloth_vertices = a.rig.cloth.vertex_count();
  const Model m = init_model(c, 0);
  const Predictor p(a.rig, m);
  const Pose pose = Pose::identity(c.joints);
  for (auto _ : state) benchmark::DoNotOptimize(p.predict(pose));
  state.counters["vertices"] = static_cast<double>(c.cloth_vertices);
  state.counters["threads"] = k::max_threads();
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(3025);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(3025);
BENCHMARK(BM_segment_sum<false>)->Name("segment_sum/serial")->Arg(3025);
BENCHMARK(BM_segment_sum<true>)->Name("segment_sum/parallel")->Arg(3025);
BENCHMARK(BM_lbs<false>)->Name("lbs/serial")->Arg(3025);
BENCHMARK(BM_lbs<true>)->Name("lbs/parallel")->Arg(3025);
BENCHMARK(BM_laplacian<false>)->Name("laplacian/serial")->Arg(3025);
BENCHMARK(BM_laplacian<true>)->Name("laplacian/parallel")->Arg(3025);
BENCHMARK(BM_predict)->Name("predict")->Arg(55)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  k::apply_thread_cap();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

// Serial reference vs OpenMP kernels. Run with --benchmark_filter to pick one family.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "polyseq/dataio.hpp"
#include "polyseq/kernels.hpp"
#include "polyseq/metrics.hpp"

using namespace polyseq;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const kernels::GemmShape s{n, n, n};
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::gemm(s, a, b, c);
    } else {
      kernels::serial::gemm(s, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// 3x3 convolution lowered to im2col + gemm, as in the conv layers: [cin, h, w] -> [cout, h, w]
template <bool Parallel>
void BM_Conv3x3(benchmark::State& state) {
  const auto ch = static_cast<std::size_t>(state.range(0));
  const std::size_t hw = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec(ch * hw * hw, 3), w = random_vec(ch * ch * 9, 4);
  std::vector<double> cols(ch * 9 * hw * hw), y(ch * hw * hw);
  const kernels::GemmShape s{ch, hw * hw, ch * 9};
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::im2col3x3(x, ch, hw, hw, cols);
      kernels::parallel::gemm(s, w, cols, y);
    } else {
      kernels::serial::im2col3x3(x, ch, hw, hw, cols);
      kernels::serial::gemm(s, w, cols, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_IouTable(benchmark::State& state) {
  dataio::SynthSpec spec;
  spec.images = 32;
  const auto corpus = dataio::gen_synthetic(spec);
  const auto gts = dataio::gt_instances(corpus.doc);
  std::vector<metrics::PredInstance> preds;
  for (const auto& g : gts) preds.push_back({g.image_id, g.polygon.translated(1.0, 0.5), 0.5});
  const int threads = static_cast<int>(state.range(0));
  for (auto _ : state) {
    metrics::IouTable table(preds, gts, geometry::kDefaultIouResolution, threads);
    benchmark::DoNotOptimize(&table);
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv3x3<false>)->Name("conv3x3/serial")->Args({16, 12})->Args({64, 32});
BENCHMARK(BM_Conv3x3<true>)->Name("conv3x3/parallel")->Args({16, 12})->Args({64, 32});
BENCHMARK(BM_IouTable)->Name("iou_table/threads")->Arg(1)->Arg(omp_get_max_threads());

BENCHMARK_MAIN();

// Serial reference vs OpenMP kernels on adjacency-stack-sized problems.
//
//   ./build/bench/bench_kernels --benchmark_filter=GraphPropagate
//   OMP_NUM_THREADS=4 ./build/bench/bench_kernels

#include <benchmark/benchmark.h>

#include "bikeod/kernels.hpp"
#include "bikeod/optim.hpp"

using namespace bikeod;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = uniform01(rng);
  return t;
}

GraphStack random_stack(std::size_t n, Rng& rng) {
  std::vector<Tensor> mats;
  for (int u = 0; u < 7; ++u) mats.push_back(random_tensor(n, n, rng));
  return GraphStack(std::move(mats));
}

template <Tensor (*Kernel)(const Tensor&, const Tensor&)>
void BM_Matmul(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor(n, 7 * 64, rng);
  const Tensor b = random_tensor(7 * 64, 64, rng);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 7 * 64 * 64));
}

template <Tensor (*Kernel)(const GraphStack&, const Tensor&), std::size_t Width>
void BM_GraphPropagate(benchmark::State& state) {
  Rng rng(2);
  const auto n = static_cast<std::size_t>(state.range(0));
  const GraphStack stack = random_stack(n, rng);
  const Tensor h = random_tensor(n, Width, rng);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(stack, h));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(7 * n * n * 64));
}

}  // namespace

BENCHMARK(BM_Matmul<kernels::reference::matmul>)->Name("Matmul/reference")->Arg(50)->Arg(130)->Arg(300);
BENCHMARK(BM_Matmul<kernels::matmul>)->Name("Matmul/omp")->Arg(50)->Arg(130)->Arg(300);
BENCHMARK(BM_GraphPropagate<kernels::reference::graph_propagate, 64>)
    ->Name("GraphPropagate/reference")->Arg(50)->Arg(130)->Arg(300);
BENCHMARK(BM_GraphPropagate<kernels::graph_propagate, 64>)
    ->Name("GraphPropagate/omp")->Arg(50)->Arg(130)->Arg(300);
BENCHMARK(BM_GraphPropagate<kernels::reference::graph_propagate_adjoint, 7 * 64>)
    ->Name("GraphPropagateAdjoint/reference")->Arg(50)->Arg(130);
BENCHMARK(BM_GraphPropagate<kernels::graph_propagate_adjoint, 7 * 64>)
    ->Name("GraphPropagateAdjoint/omp")->Arg(50)->Arg(130);

BENCHMARK_MAIN();

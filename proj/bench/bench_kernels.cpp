// Serial reference vs OpenMP kernels, plus one full network forward pass per
// backend. Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "mdrnn/kernels.hpp"
#include "mdrnn/network.hpp"

using namespace mdrnn;
namespace k = mdrnn::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

template <void (*Gemm)(k::ConstMat, k::ConstMat, k::Mat)>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n, 0.0);
  for (auto _ : state) {
    Gemm({a.data(), n, n}, {b.data(), n, n}, {c.data(), n, n});
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <void (*Softmax)(k::ConstMat, k::Mat)>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto x = filled(rows * 64, 3);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    Softmax({x.data(), rows, 64}, {y.data(), rows, 64});
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_network_forward(benchmark::State& state) {
  const k::ScopedBackend backend(state.range(0) == 0 ? k::Backend::Serial : k::Backend::OpenMP);
  Rng rng(4);
  const Network net = Network::build(ArchitectureSpec::baseline(), 11, rng);
  FeatureGrid image(16, 128, 1);
  for (double& v : image.values()) v = rng.uniform();
  for (auto _ : state) {
    Rng masks(5);
    benchmark::DoNotOptimize(net.forward(image, {}, masks));
  }
  state.SetLabel(state.range(0) == 0 ? "serial" : "openmp");
}

}  // namespace

BENCHMARK(BM_gemm<k::ref::gemm_acc>)->Name("gemm/ref")->Arg(32)->Arg(128);
BENCHMARK(BM_gemm<k::omp::gemm_acc>)->Name("gemm/omp")->Arg(32)->Arg(128);
BENCHMARK(BM_gemm<k::ref::gemm_bt_acc>)->Name("gemm_bt/ref")->Arg(32)->Arg(128);
BENCHMARK(BM_gemm<k::omp::gemm_bt_acc>)->Name("gemm_bt/omp")->Arg(32)->Arg(128);
BENCHMARK(BM_softmax<k::ref::softmax_rows>)->Name("softmax/ref")->Arg(1024);
BENCHMARK(BM_softmax<k::omp::softmax_rows>)->Name("softmax/omp")->Arg(1024);
BENCHMARK(BM_network_forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

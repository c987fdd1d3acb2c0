#include <benchmark/benchmark.h>

#include "contraj/metrics.hpp"
#include "contraj/rng.hpp"

using namespace contraj;

namespace {

void BM_Dtw1000(benchmark::State& state) {
  Rng rng(3);
  Eigen::MatrixXd a(1000, 2), b(1000, 2);
  for (int i = 0; i < 1000; ++i) {
    a.row(i) = rng.uniform_vector(2, -40, 40).transpose();
    b.row(i) = rng.uniform_vector(2, -40, 40).transpose();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::dtw(a, b));
  }
}
BENCHMARK(BM_Dtw1000)->Unit(benchmark::kMillisecond);

}  // namespace

#include <benchmark/benchmark.h>

#include "contraj/hypernet.hpp"

using namespace contraj;
using namespace contraj::hypernet;

namespace {

HypernetSpec bench_spec() {
  HypernetSpec spec;
  spec.mode = HypernetMode::Chunked;
  spec.hidden_widths = {64, 64};
  spec.task_emb_dim = 32;
  spec.chunk_size = 512;
  spec.chunk_emb_dim = 32;
  spec.target.state_dim = 2;
  spec.target.f_hidden = {64, 64};
  spec.target.v_hidden = {32, 32};
  return spec;
}

void BM_ChunkedGeneration(benchmark::State& state) {
  Rng rng(4);
  const HypernetState st = init_hypernet(bench_spec(), rng);
  const Eigen::VectorXd e = rng.uniform_vector(32, -1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(chn_forward(st, e));
  }
}
BENCHMARK(BM_ChunkedGeneration);

}  // namespace

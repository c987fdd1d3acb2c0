#include <benchmark/benchmark.h>

#include "contraj/dynamics.hpp"
#include "contraj/rng.hpp"

using namespace contraj;
using namespace contraj::dynamics;

namespace {

LearnerConfig bench_config() {
  LearnerConfig cfg;
  cfg.state_dim = 2;
  cfg.f_hidden = {64, 64};
  cfg.v_hidden = {32, 32};
  return cfg;
}

void BM_SnodeRhs(benchmark::State& state) {
  const LearnerConfig cfg = bench_config();
  Rng rng(1);
  const StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
  const Eigen::VectorXd x = rng.uniform_vector(2, -1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(snode_rhs(dyn, x, 0.5));
  }
}
BENCHMARK(BM_SnodeRhs);

void BM_LossAndGrads(benchmark::State& state) {
  const LearnerConfig cfg = bench_config();
  Rng rng(2);
  const FlatParams params = init_params(cfg, rng);
  std::vector<Trajectory> batch;
  const int T = static_cast<int>(state.range(0));
  for (int j = 0; j < 7; ++j) {
    Trajectory tr;
    tr.dt = 1.0 / (T - 1);
    tr.points.resize(T, 2);
    for (int k = 0; k < T; ++k)
      tr.points.row(k) = rng.uniform_vector(2, -1, 1).transpose() * (1.0 - double(k) / (T - 1));
    batch.push_back(std::move(tr));
  }
  const IntegratorConfig icfg{T - 1, 1.0 / (T - 1), Scheme::Euler};
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_and_param_grads(cfg, params, batch, icfg));
  }
}
BENCHMARK(BM_LossAndGrads)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

// Acceptance suite: runs every scaled-down reproduction and property gate,
// printing one PASS/FAIL line per criterion. Exit code is the number of
// failures. Use --only N to run a single criterion.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "contraj/continual.hpp"
#include "contraj/data.hpp"
#include "contraj/dynamics.hpp"
#include "contraj/errors.hpp"
#include "contraj/experiment.hpp"
#include "contraj/hypernet.hpp"
#include "contraj/metrics.hpp"
#include "contraj/orientation.hpp"
#include "contraj/rng.hpp"

using namespace contraj;
using dynamics::FlatParams;
using dynamics::IntegratorConfig;
using dynamics::LearnerConfig;
using dynamics::Trajectory;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Lyapunov decrease across random parameterizations and states
// ---------------------------------------------------------------------------
Outcome criterion_lyapunov_decrease() {
  const double alphas[] = {0.0, 0.1, 1.0};
  Rng rng(1001);
  long checked = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  for (int p = 0; p < 1000; ++p) {
    LearnerConfig cfg;
    cfg.state_dim = 2;
    cfg.f_hidden = {8};
    cfg.v_hidden = {8};
    cfg.alpha = alphas[p % 3];
    const dynamics::StableDynamics dyn =
        dynamics::make_stable_dynamics(cfg, dynamics::init_params(cfg, rng));
    for (int s = 0; s < 100; ++s) {
      VectorXd y(3);
      y << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.0, 1.2);
      const VectorXd w = dynamics::lyapunov_grad(dyn, y);
      if (w.squaredNorm() < dyn.grad_floor) continue;
      const double v = dynamics::lyapunov_value(dyn, y);
      VectorXd f_aug(3);
      f_aug.head(2) = dynamics::mlp_forward(
          dyn.f_spec, dyn.params.values.segment(0, dyn.f_spec.param_count()), y);
      f_aug[2] = 1.0;
      const VectorXd proj =
          dynamics::project_stable(f_aug, w, v, cfg.alpha, dyn.grad_floor, dyn.form);
      const double margin = w.dot(proj) + cfg.alpha * v;  // must be <= 1e-9
      worst_margin = std::max(worst_margin, margin);
      ++checked;
      if (margin > 1e-9)
        return {false, "violated at parameterization " + std::to_string(p) +
                           ", margin " + fmt(margin)};
    }
  }
  return {true, std::to_string(checked) + " states checked, worst margin " + fmt(worst_margin)};
}

// ---------------------------------------------------------------------------
// 2. Gradient fidelity: analytic vs central differences
// ---------------------------------------------------------------------------
Outcome criterion_gradient_fidelity() {
  Rng rng(2002);
  // Lyapunov input gradient.
  {
    LearnerConfig cfg;
    cfg.state_dim = 2;
    cfg.f_hidden = {8};
    cfg.v_hidden = {8};
    const dynamics::StableDynamics dyn =
        dynamics::make_stable_dynamics(cfg, dynamics::init_params(cfg, rng));
    for (int i = 0; i < 25; ++i) {
      const VectorXd y = rng.uniform_vector(3, -2.0, 2.0);
      const VectorXd analytic = dynamics::lyapunov_grad(dyn, y);
      VectorXd fd(3);
      VectorXd yp = y;
      const double h = 1e-5;
      for (int k = 0; k < 3; ++k) {
        yp[k] = y[k] + h;
        const double fp = dynamics::lyapunov_value(dyn, yp);
        yp[k] = y[k] - h;
        const double fm = dynamics::lyapunov_value(dyn, yp);
        yp[k] = y[k];
        fd[k] = (fp - fm) / (2.0 * h);
      }
      for (int k = 0; k < 3; ++k) {
        const double denom = std::max({std::abs(analytic[k]), std::abs(fd[k]), 1e-4});
        if (std::abs(analytic[k] - fd[k]) / denom >= 1e-5)
          return {false, "lyapunov grad mismatch at probe " + std::to_string(i)};
      }
    }
  }
  // Full parameter gradients through the unrolled rollout.
  for (double alpha : {0.0, 0.5}) {
    LearnerConfig cfg;
    cfg.state_dim = 2;
    cfg.f_hidden = {8};
    cfg.v_hidden = {6};
    cfg.alpha = alpha;
    const FlatParams params = dynamics::init_params(cfg, rng);
    std::vector<Trajectory> batch;
    for (int j = 0; j < 2; ++j) {
      Trajectory tr;
      tr.dt = 0.25;
      tr.points.resize(5, 2);
      const VectorXd start = rng.uniform_vector(2, -1.0, 1.0);
      for (int k = 0; k < 5; ++k) tr.points.row(k) = start.transpose() * (1.0 - k / 4.0);
      batch.push_back(std::move(tr));
    }
    const IntegratorConfig icfg{4, 0.25, dynamics::Scheme::Euler};
    const auto lg = dynamics::loss_and_param_grads(cfg, params, batch, icfg);
    auto plain_loss = [&](const VectorXd& p) {
      const dynamics::StableDynamics dyn =
          dynamics::make_stable_dynamics(cfg, FlatParams{p});
      double total = 0.0;
      for (const Trajectory& demo : batch) {
        const Trajectory pred = dynamics::integrate(
            [&](const VectorXd& x, double t) { return dynamics::snode_rhs(dyn, x, t); },
            demo.points.row(0).transpose(), icfg);
        total += dynamics::trajectory_loss(pred, demo);
      }
      return total / batch.size();
    };
    VectorXd p = params.values;
    double worst = 0.0;
    for (int k = 0; k < p.size(); ++k) {
      const double orig = p[k];
      const double h = 1e-5;
      p[k] = orig + h;
      const double fp = plain_loss(p);
      p[k] = orig - h;
      const double fm = plain_loss(p);
      p[k] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(lg.grads[k]), std::abs(fd), 1e-4});
      worst = std::max(worst, std::abs(lg.grads[k] - fd) / denom);
    }
    if (worst >= 1e-4)
      return {false, "parameter gradient mismatch, worst rel err " + fmt(worst)};
  }
  return {true, "analytic gradients match central differences (rel err < 1e-5 / 1e-4)"};
}

// ---------------------------------------------------------------------------
// 3. Quaternion round trip
// ---------------------------------------------------------------------------
Outcome criterion_quaternion_roundtrip() {
  using namespace orientation;
  Rng rng(3003);
  auto random_unit = [&rng] {
    UnitQuaternion q;
    q.w = rng.normal();
    q.xyz = rng.normal_vector(3);
    return normalized(q);
  };
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const UnitQuaternion q = random_unit();
    const UnitQuaternion goal = random_unit();
    const UnitQuaternion back = exp_map(log_map(q, goal), goal);
    const double err = std::min((back.as_vector() - q.as_vector()).norm(),
                                (back.as_vector() + q.as_vector()).norm());
    worst = std::max(worst, err);
  }
  if (worst >= 1e-9) return {false, "round-trip error " + fmt(worst)};
  // Dedicated branch cases: log of identical pair, exp of the zero vector.
  const UnitQuaternion g = random_unit();
  if (log_map(g, g).norm() != 0.0) return {false, "zero branch not exact"};
  const UnitQuaternion e = exp_map(Eigen::Vector3d::Zero(), g);
  if ((e.as_vector() - g.as_vector()).norm() != 0.0)
    return {false, "identity branch not exact"};
  return {true, "10^4 pairs, worst error " + fmt(worst) + ", branch cases exact"};
}

// ---------------------------------------------------------------------------
// 4. DTW vs exhaustive path enumeration
// ---------------------------------------------------------------------------
double dtw_bruteforce(const MatrixXd& a, const MatrixXd& b, Eigen::Index i = 0,
                      Eigen::Index j = 0) {
  const double d = (a.row(i) - b.row(j)).norm();
  const bool li = i == a.rows() - 1, lj = j == b.rows() - 1;
  if (li && lj) return d;
  double best = std::numeric_limits<double>::infinity();
  if (!li) best = std::min(best, dtw_bruteforce(a, b, i + 1, j));
  if (!lj) best = std::min(best, dtw_bruteforce(a, b, i, j + 1));
  if (!li && !lj) best = std::min(best, dtw_bruteforce(a, b, i + 1, j + 1));
  return d + best;
}

Outcome criterion_dtw_oracle() {
  Rng rng(4004);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + rng.index(5);
    const int m = 2 + rng.index(5);
    MatrixXd a(n, 2), b(m, 2);
    for (int r = 0; r < n; ++r)
      a.row(r) << double(rng.index(12)), double(rng.index(12));
    for (int r = 0; r < m; ++r)
      b.row(r) << double(rng.index(12)), double(rng.index(12));
    const double fast = metrics::dtw(a, b);
    const double slow = dtw_bruteforce(a, b);
    if (std::abs(fast - slow) > 1e-9 * std::max(1.0, slow))
      return {false, "mismatch at trial " + std::to_string(trial) + ": " + fmt(fast) +
                         " vs " + fmt(slow)};
  }
  return {true, "200 random pairs match the exhaustive enumeration exactly"};
}

// ---------------------------------------------------------------------------
// Shared desk-scale training setups
// ---------------------------------------------------------------------------
continual::MethodConfig desk_config(continual::Method method, dynamics::LearnerKind learner) {
  continual::MethodConfig cfg;
  cfg.method = method;
  cfg.learner = learner;
  cfg.iterations = 2500;
  cfg.lr = 1e-3;
  cfg.train_points = 150;
  cfg.f_hidden = {64, 64};
  cfg.v_hidden = {32, 32};
  cfg.cond_emb_dim = 32;
  cfg.hn_hidden = {64, 64};
  cfg.task_emb_dim = 32;
  cfg.chunk_size = 512;
  cfg.chunk_emb_dim = 32;
  cfg.strategy.kind = hypernet::RegStrategy::Kind::All;
  cfg.strategy.beta = 5e-3;
  return cfg;
}

// ---------------------------------------------------------------------------
// 5. Single-task trajectory reproduction under the documented threshold
// ---------------------------------------------------------------------------
Outcome criterion_single_task() {
  const data::TaskDataset ds = data::synth_toy_shapes(data::ToyShape::Sine, 1, 501);
  continual::MethodConfig cfg = desk_config(continual::Method::SG, dynamics::LearnerKind::Snode);
  cfg.iterations = 3000;
  const continual::SequenceResult res = continual::train_sequence(ds, cfg, 1);
  const double med = median_of(res.log.records.front().dtw);
  const bool pass = med < 2191.0;
  return {pass, "median DTW over demos at full resolution: " + fmt(med) + " (threshold 2191)"};
}

// ---------------------------------------------------------------------------
// 6. Time-input ablation: with-time at least as accurate as without
// ---------------------------------------------------------------------------
Outcome criterion_time_ablation() {
  const data::TaskDataset ds = data::synth_toy_shapes(data::ToyShape::Sine, 1, 501);
  auto run_variant = [&](bool with_time, std::uint64_t seed) {
    continual::MethodConfig cfg =
        desk_config(continual::Method::SG, dynamics::LearnerKind::Snode);
    cfg.iterations = 2000;
    cfg.time_input = with_time;
    const continual::SequenceResult res = continual::train_sequence(ds, cfg, seed);
    return median_of(res.log.records.front().dtw);
  };
  std::vector<double> with, without;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    with.push_back(run_variant(true, seed));
    without.push_back(run_variant(false, seed));
  }
  const double mw = median_of(with), mo = median_of(without);
  const bool pass = mw <= mo;
  return {pass, "median DTW with time " + fmt(mw) + " vs without " + fmt(mo)};
}

// ---------------------------------------------------------------------------
// 7/8 share the trained 3-task sequences
// ---------------------------------------------------------------------------
struct DeskRuns {
  data::TaskDataset ds;
  continual::SequenceResult chn_snode;
  continual::SequenceResult ft_snode;
  continual::SequenceResult chn_node;
};

std::optional<DeskRuns> g_desk;

const DeskRuns& desk_runs() {
  if (!g_desk.has_value()) {
    DeskRuns runs;
    runs.ds = data::synth_toy_sequence(3, 701);
    runs.chn_snode = continual::train_sequence(
        runs.ds, desk_config(continual::Method::CHN, dynamics::LearnerKind::Snode), 1);
    runs.ft_snode = continual::train_sequence(
        runs.ds, desk_config(continual::Method::FT, dynamics::LearnerKind::Snode), 1);
    runs.chn_node = continual::train_sequence(
        runs.ds, desk_config(continual::Method::CHN, dynamics::LearnerKind::Node), 1);
    g_desk = std::move(runs);
  }
  return *g_desk;
}

Outcome criterion_continual_desk() {
  const DeskRuns& runs = desk_runs();
  const metrics::Thresholds th{2191.0, std::nullopt};

  const metrics::AccuracyMatrix am = metrics::accuracy_matrix(runs.chn_snode.log, th);
  const metrics::CLInputs in =
      metrics::cl_inputs_from_log(runs.chn_snode.log, runs.ds.total_bytes(), std::nullopt);
  const metrics::CLReport rep = metrics::cl_metrics(am, in);

  std::vector<double> final_medians;
  for (const RunRecord& r : runs.chn_snode.log.records)
    if (r.train_task == 2) final_medians.push_back(median_of(r.dtw));

  const metrics::AccuracyMatrix ft = metrics::accuracy_matrix(runs.ft_snode.log, th);
  double ft_worst_past = 1.0;
  for (int j = 0; j < 2; ++j) ft_worst_past = std::min(ft_worst_past, ft.r(2, j));

  std::ostringstream detail;
  detail << "chn final DTW medians";
  for (double v : final_medians) detail << ' ' << fmt(v);
  detail << "; ACC " << fmt(rep.acc) << ", REM " << fmt(rep.rem) << "; ft worst past pass-rate "
         << fmt(ft_worst_past);

  bool pass = rep.acc == 1.0 && rep.rem == 1.0;
  for (double v : final_medians) pass = pass && v < 2191.0;
  pass = pass && ft_worst_past < 1.0;  // forgetting control fails at least one past task
  return {pass, detail.str()};
}

Outcome criterion_stability_ordering() {
  const DeskRuns& runs = desk_runs();
  auto pooled = [&](const continual::SequenceResult& res,
                    experiment::StabilityMode mode) {
    std::vector<double> all;
    for (int t = 0; t < 3; ++t) {
      const data::NormalizedTask nt = data::normalize(runs.ds.tasks[t]);
      experiment::StabilityOptions opt;
      opt.mode = mode;
      opt.radius = 25.0;
      opt.samples = 100;
      opt.extra_steps = 200;
      opt.seed = 11 + t;
      const std::vector<double> deltas =
          experiment::stability_deltas(res.final_models[t], runs.ds.tasks[t], nt, opt);
      all.insert(all.end(), deltas.begin(), deltas.end());
    }
    return median_of(all);
  };
  const double perturb_snode = pooled(runs.chn_snode, experiment::StabilityMode::Perturb);
  const double perturb_node = pooled(runs.chn_node, experiment::StabilityMode::Perturb);
  const double horizon_snode = pooled(runs.chn_snode, experiment::StabilityMode::Horizon);
  const double horizon_node = pooled(runs.chn_node, experiment::StabilityMode::Horizon);
  const bool pass = perturb_snode <= perturb_node && horizon_snode <= horizon_node;
  return {pass, "perturbed-start median goal-dist: snode " + fmt(perturb_snode) + " vs node " +
                    fmt(perturb_node) + "; +200-step horizon: snode " + fmt(horizon_snode) +
                    " vs node " + fmt(horizon_node)};
}

// ---------------------------------------------------------------------------
// 9. Single-draw regularizer expectation identity
// ---------------------------------------------------------------------------
Outcome criterion_reg_expectation() {
  hypernet::HypernetSpec spec;
  spec.mode = hypernet::HypernetMode::Chunked;
  spec.hidden_widths = {16};
  spec.task_emb_dim = 6;
  spec.chunk_size = 32;
  spec.chunk_emb_dim = 6;
  spec.target.state_dim = 1;
  spec.target.f_hidden = {6};
  spec.target.v_hidden = {5};
  Rng rng(9009);
  hypernet::HypernetState st = hypernet::init_hypernet(spec, rng);
  for (int m = 0; m < 6; ++m) hypernet::begin_task(st, rng);  // 5 past tasks
  st.core += rng.uniform_vector(st.core.size(), -0.05, 0.05);

  const VectorXd zero = VectorXd::Zero(st.core.size());
  double full = 0.0;
  for (int l = 0; l < 5; ++l) full += hypernet::reg_term(st, l, zero);
  full /= 5.0;  // beta = 1

  Rng draw(77);
  double mc = 0.0;
  for (int i = 0; i < 10000; ++i) mc += hypernet::reg_term(st, draw.index(5), zero);
  mc /= 10000.0;

  const double rel = std::abs(mc - full) / full;
  return {rel < 0.02, "Monte-Carlo mean " + fmt(mc) + " vs full " + fmt(full) +
                          ", rel err " + fmt(rel)};
}

// ---------------------------------------------------------------------------
// 10. O(N) vs O(N^2) per-task training time
// ---------------------------------------------------------------------------
Outcome criterion_timing() {
  // Small rollout, generation-heavy hypernetwork: the per-term regularizer
  // cost is a sizable fraction of the task-loss cost, as in the full-scale
  // setting.
  auto timing_config = [](hypernet::RegStrategy::Kind kind) {
    continual::MethodConfig cfg;
    cfg.method = continual::Method::CHN;
    cfg.learner = dynamics::LearnerKind::Snode;
    cfg.iterations = 300;
    cfg.lr = 1e-3;
    cfg.train_points = 10;
    cfg.f_hidden = {6};
    cfg.v_hidden = {4};
    cfg.hn_hidden = {256, 256};
    cfg.task_emb_dim = 16;
    cfg.chunk_size = 4;
    cfg.chunk_emb_dim = 16;
    cfg.strategy.kind = kind;
    cfg.strategy.beta = 5e-3;
    return cfg;
  };
  data::TaskDataset ds = data::synth_toy_sequence(6, 601);
  // Two demos per task keep the rollout light.
  for (auto& task : ds.tasks) task.demos.resize(2);

  auto per_task_times = [&](hypernet::RegStrategy::Kind kind) {
    const continual::SequenceResult res =
        continual::train_sequence(ds, timing_config(kind), 1);
    std::vector<double> times(6, 0.0);
    for (const RunRecord& r : res.log.records) times[r.train_task] = r.wall_time_s;
    return times;
  };

  // One short warm-up run so allocator pools are hot, then the median of
  // three repeats per strategy.
  {
    auto warm = timing_config(hypernet::RegStrategy::Kind::All);
    warm.iterations = 30;
    continual::train_sequence(ds, warm, 1);
  }
  auto median_times = [&](hypernet::RegStrategy::Kind kind) {
    std::vector<std::vector<double>> runs;
    for (int rep = 0; rep < 3; ++rep) runs.push_back(per_task_times(kind));
    std::vector<double> out(6);
    for (int m = 0; m < 6; ++m)
      out[m] = median_of({runs[0][m], runs[1][m], runs[2][m]});
    return out;
  };
  const std::vector<double> t_single = median_times(hypernet::RegStrategy::Kind::Single);
  const std::vector<double> t_all = median_times(hypernet::RegStrategy::Kind::All);

  bool single_flat = true;
  double worst_dev = 0.0;
  double worst_steady_dev = 0.0;
  for (int m = 1; m < 6; ++m) {
    const double dev = std::abs(t_single[m] - t_single[0]) / t_single[0];
    worst_dev = std::max(worst_dev, dev);
    single_flat = single_flat && dev <= 0.20;
    if (m >= 2)
      worst_steady_dev =
          std::max(worst_steady_dev, std::abs(t_single[m] - t_single[1]) / t_single[1]);
  }
  const double growth = t_all[5] / t_all[1];
  const bool all_grows = growth >= 2.0;

  std::ostringstream detail;
  detail << "single per-task [s]:";
  for (double t : t_single) detail << ' ' << fmt(t);
  detail << " (max dev from task-1 " << fmt(100.0 * worst_dev) << "%, dev among tasks 2-6 "
         << fmt(100.0 * worst_steady_dev) << "%); all per-task [s]:";
  for (double t : t_all) detail << ' ' << fmt(t);
  detail << " (task6/task2 " << fmt(growth) << "x)";
  return {single_flat && all_grows, detail.str()};
}

// ---------------------------------------------------------------------------
// 11. CL metric hand examples
// ---------------------------------------------------------------------------
Outcome criterion_cl_metrics() {
  using metrics::AccuracyMatrix;
  using metrics::CLInputs;
  using metrics::CLReport;

  // All-perfect inputs.
  {
    AccuracyMatrix am{MatrixXd::Ones(3, 3)};
    CLInputs in;
    in.param_counts = {50, 50, 50};
    in.times_s = {1.0, 1.0, 1.0};
    in.stored_bytes = {0, 0, 0};
    in.total_dataset_bytes = 100;
    const CLReport rep = metrics::cl_metrics(am, in);
    if (!(rep.acc == 1.0 && rep.rem == 1.0 && rep.ms == 1.0 && rep.sss == 1.0 &&
          rep.te == 1.0 && rep.cl_score == 1.0))
      return {false, "all-perfect inputs do not give CL score 1"};
  }
  // N=2 complete forgetting: REM = 0.
  {
    MatrixXd r(2, 2);
    r << 1, 0, 0, 1;
    CLInputs in;
    in.param_counts = {10, 10};
    in.times_s = {1, 1};
    in.stored_bytes = {0, 0};
    in.total_dataset_bytes = 10;
    if (metrics::cl_metrics(AccuracyMatrix{r}, in).rem != 0.0)
      return {false, "N=2 forgetting does not give REM 0"};
  }
  // Harmonic model-size ratio for linear growth.
  {
    CLInputs in;
    in.param_counts = {10, 20, 30, 40};
    in.times_s = {1, 1, 1, 1};
    in.stored_bytes = {0, 0, 0, 0};
    in.total_dataset_bytes = 10;
    const double ms = metrics::cl_metrics(AccuracyMatrix{MatrixXd::Ones(4, 4)}, in).ms;
    if (std::abs(ms - 25.0 / 48.0) > 1e-12)
      return {false, "harmonic MS mismatch: " + fmt(ms)};
  }
  // Replay storage and FS against a cross-model maximum.
  {
    CLInputs in;
    in.param_counts = {10, 40};
    in.times_s = {1.0, 2.0};
    in.stored_bytes = {50, 100};
    in.total_dataset_bytes = 100;
    in.cross_model_max_size = 100;
    const CLReport rep = metrics::cl_metrics(AccuracyMatrix{MatrixXd::Ones(2, 2)}, in);
    if (std::abs(rep.sss - (1.0 - 0.75)) > 1e-12) return {false, "SSS mismatch"};
    if (std::abs(rep.te - 0.75) > 1e-12) return {false, "TE mismatch"};
    if (!rep.fs.has_value() || std::abs(*rep.fs - 0.6) > 1e-12) return {false, "FS mismatch"};
  }
  return {true, "hand-built matrices reproduce ACC/REM/MS/SSS/TE/FS exactly"};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "lyapunov-decrease-property", criterion_lyapunov_decrease},
      {2, "gradient-fidelity", criterion_gradient_fidelity},
      {3, "quaternion-round-trip", criterion_quaternion_roundtrip},
      {4, "dtw-exhaustive-oracle", criterion_dtw_oracle},
      {5, "single-task-reproduction", criterion_single_task},
      {6, "time-input-ablation", criterion_time_ablation},
      {7, "continual-desk-scale", criterion_continual_desk},
      {8, "stability-vs-node-ordering", criterion_stability_ordering},
      {9, "regularizer-expectation-identity", criterion_reg_expectation},
      {10, "single-vs-all-regularization-timing", criterion_timing},
      {11, "cl-metric-hand-examples", criterion_cl_metrics},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << '[' << (out.pass ? "PASS" : "FAIL") << "] criterion " << c.id << " ("
              << c.name << ", " << fmt(secs) << "s): " << out.detail << std::endl;
    if (!out.pass) ++failures;
  }
  return failures;
}

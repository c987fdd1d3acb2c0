#include "contraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "contraj/errors.hpp"
#include "contraj/rng.hpp"

namespace contraj::metrics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double dtw(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ContractError("dtw: empty sequence");
  if (a.cols() != b.cols()) throw ContractError("dtw: dimension mismatch");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // Two-row recurrence keeps memory at O(m).
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (Eigen::Index i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (Eigen::Index j = 1; j <= m; ++j) {
      const double d = (a.row(i - 1) - b.row(j - 1)).norm();
      cur[j] = d + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

Thresholds default_thresholds(int dim, bool pose) {
  if (pose) return {3000.0, 0.08};
  switch (dim) {
    case 2:
      return {2191.0, std::nullopt};
    case 8:
      return {4000.0, std::nullopt};
    case 16:
      return {7000.0, std::nullopt};
    case 32:
      return {15000.0, std::nullopt};
    default:
      throw ContractError("default_thresholds: no documented threshold for dim " +
                          std::to_string(dim));
  }
}

AccuracyMatrix accuracy_matrix(const RunLog& log, const Thresholds& th) {
  if (log.records.empty()) throw ContractError("accuracy_matrix: empty log");
  const int n = log.n_tasks();
  MatrixXd r = MatrixXd::Constant(n, n, -1.0);
  for (const RunRecord& rec : log.records) {
    if (rec.eval_task > rec.train_task || rec.train_task >= n) continue;
    int pass = 0;
    const int demos = static_cast<int>(rec.dtw.size());
    for (int j = 0; j < demos; ++j) {
      bool ok = rec.dtw[j] <= th.dtw;
      if (th.quat_rad.has_value()) {
        if (rec.quat_err.size() != rec.dtw.size())
          throw ContractError("accuracy_matrix: pose thresholds need quaternion errors");
        ok = ok && rec.quat_err[j] <= *th.quat_rad;
      }
      if (ok) ++pass;
    }
    r(rec.train_task, rec.eval_task) = demos > 0 ? static_cast<double>(pass) / demos : 0.0;
  }
  std::string missing;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      if (r(i, j) < 0.0) missing += " (" + std::to_string(i) + "," + std::to_string(j) + ")";
  if (!missing.empty())
    throw ContractError("accuracy_matrix: missing (train,eval) pairs:" + missing);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) r(i, j) = 0.0;
  return AccuracyMatrix{r};
}

std::vector<double> CLReport::values() const {
  std::vector<double> v{acc, rem, ms, sss, te};
  if (fs.has_value()) v.push_back(*fs);
  return v;
}

CLReport cl_metrics(const AccuracyMatrix& am, const CLInputs& in) {
  const int n = am.n();
  if (n < 1) throw ContractError("cl_metrics: empty matrix");
  if (static_cast<int>(in.param_counts.size()) != n ||
      static_cast<int>(in.times_s.size()) != n ||
      static_cast<int>(in.stored_bytes.size()) != n)
    throw ContractError("cl_metrics: per-task inputs must have one entry per task");

  CLReport out;
  double acc_sum = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) acc_sum += am.r(i, j);
  out.acc = acc_sum / (n * (n + 1) / 2.0);

  if (n == 1) {
    out.rem = 1.0;  // empty backward-transfer sum
  } else {
    double bwt = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) bwt += am.r(i, j) - am.r(j, j);
    bwt /= n * (n - 1) / 2.0;
    out.rem = 1.0 - std::abs(std::min(0.0, bwt));
  }

  double ms_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (in.param_counts[i] <= 0) throw ContractError("cl_metrics: nonpositive parameter count");
    ms_sum += static_cast<double>(in.param_counts[0]) / in.param_counts[i];
  }
  out.ms = std::min(1.0, ms_sum / n);

  double sss_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (in.total_dataset_bytes <= 0) throw ContractError("cl_metrics: dataset bytes unknown");
    sss_sum += static_cast<double>(in.stored_bytes[i]) / in.total_dataset_bytes;
  }
  out.sss = 1.0 - std::min(1.0, sss_sum / n);

  double te_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (in.times_s[i] <= 0.0) throw ContractError("cl_metrics: nonpositive task time");
    te_sum += in.times_s[0] / in.times_s[i];
  }
  out.te = std::min(1.0, te_sum / n);

  if (in.cross_model_max_size.has_value()) {
    if (*in.cross_model_max_size <= 0)
      throw ContractError("cl_metrics: cross-model max size must be positive");
    out.fs = 1.0 - std::min(1.0, static_cast<double>(in.param_counts[n - 1]) /
                                     *in.cross_model_max_size);
  }

  const std::vector<double> vals = out.values();
  out.cl_score = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  return out;
}

double cl_stability(const std::vector<CLReport>& per_seed) {
  if (per_seed.empty()) throw ContractError("cl_stability: no reports");
  const std::size_t k = per_seed.front().values().size();
  double total_std = 0.0;
  for (std::size_t m = 0; m < k; ++m) {
    double mean = 0.0;
    for (const CLReport& r : per_seed) mean += r.values()[m];
    mean /= per_seed.size();
    double var = 0.0;
    for (const CLReport& r : per_seed) {
      const double d = r.values()[m] - mean;
      var += d * d;
    }
    var /= per_seed.size();
    total_std += std::sqrt(var);
  }
  return 1.0 - total_std / static_cast<double>(k);
}

CLInputs cl_inputs_from_log(const RunLog& log, long total_dataset_bytes,
                            std::optional<long> cross_model_max_size) {
  const int n = log.n_tasks();
  CLInputs in;
  in.param_counts.assign(n, 0);
  in.times_s.assign(n, 0.0);
  in.stored_bytes.assign(n, 0);
  in.total_dataset_bytes = total_dataset_bytes;
  in.cross_model_max_size = cross_model_max_size;
  for (const RunRecord& r : log.records) {
    in.param_counts[r.train_task] = r.param_count;
    in.times_s[r.train_task] = r.wall_time_s;
    in.stored_bytes[r.train_task] = r.stored_bytes;
  }
  return in;
}

std::vector<double> stability_perturbed_start(const RolloutFn& rollout,
                                              const VectorXd& demo_start, const VectorXd& goal,
                                              double radius, int n_steps, int n_samples,
                                              std::uint64_t seed) {
  if (radius < 0.0) throw ContractError("stability_perturbed_start: negative radius");
  Rng rng(seed);
  std::vector<double> deltas;
  deltas.reserve(n_samples);
  const int d = static_cast<int>(demo_start.size());
  for (int i = 0; i < n_samples; ++i) {
    const VectorXd start = demo_start + (radius > 0.0 ? rng.in_ball(d, radius)
                                                      : VectorXd::Zero(d).eval());
    double delta = std::numeric_limits<double>::infinity();
    try {
      const MatrixXd traj = rollout(start, n_steps);
      const VectorXd end = traj.row(traj.rows() - 1).transpose();
      if (end.allFinite()) delta = (end - goal).norm();
    } catch (const DivergenceError&) {
      // keep +inf
    }
    deltas.push_back(delta);
  }
  return deltas;
}

double stability_extended_horizon(const RolloutFn& rollout, const VectorXd& demo_start,
                                  const VectorXd& goal, int base_steps, int extra_steps) {
  double delta = std::numeric_limits<double>::infinity();
  try {
    const MatrixXd traj = rollout(demo_start, base_steps + extra_steps);
    const VectorXd end = traj.row(traj.rows() - 1).transpose();
    if (end.allFinite()) delta = (end - goal).norm();
  } catch (const DivergenceError&) {
    // keep +inf
  }
  return delta;
}

}  // namespace contraj::metrics

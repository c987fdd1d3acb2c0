#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "contraj/runlog.hpp"

namespace contraj::metrics {

/// Classic dynamic time warping: Euclidean point distance, unconstrained
/// monotone alignment, sum accumulation along the optimal path.
double dtw(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Pass thresholds applied to one prediction: DTW always, rotation error
/// additionally for pose tasks.
struct Thresholds {
  double dtw = 0.0;
  std::optional<double> quat_rad;
};

/// Default thresholds by trajectory dimension (2/8/16/32-D and 6-D pose).
Thresholds default_thresholds(int dim, bool pose);

/// Lower-triangular pass fractions: entry (i, j <= i) is the fraction of
/// task-j demonstrations that pass all thresholds after training task i.
struct AccuracyMatrix {
  Eigen::MatrixXd r;
  int n() const { return static_cast<int>(r.rows()); }
};

/// Builds the matrix from a single-seed log; throws with the list of
/// missing (train, eval) pairs if the triangle is incomplete.
AccuracyMatrix accuracy_matrix(const RunLog& log, const Thresholds& th);

/// Per-train-stage bookkeeping needed by the size/time/storage metrics.
struct CLInputs {
  std::vector<long> param_counts;  // after each task
  std::vector<double> times_s;     // training time of each task
  std::vector<long> stored_bytes;  // replay storage after each task
  long total_dataset_bytes = 0;
  std::optional<long> cross_model_max_size;  // enables FS
};

struct CLReport {
  double acc = 0.0;
  double rem = 0.0;
  double ms = 0.0;
  double sss = 0.0;
  double te = 0.0;
  std::optional<double> fs;
  double cl_score = 0.0;  // mean of the available metrics

  std::vector<double> values() const;
};

CLReport cl_metrics(const AccuracyMatrix& acc, const CLInputs& in);

/// 1 - mean over metrics of the across-seed standard deviation.
double cl_stability(const std::vector<CLReport>& per_seed);

CLInputs cl_inputs_from_log(const RunLog& single_seed_log, long total_dataset_bytes,
                            std::optional<long> cross_model_max_size);

/// Rollout closure: maps a start state to an (n_steps+1) x d trajectory in
/// the same frame as the provided goal.
using RolloutFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& start, int n_steps)>;

/// Distances from the rollout endpoint to the goal for n_samples starts
/// drawn uniformly in the ball of the given radius around demo_start.
/// Divergence is recorded as +infinity, never thrown.
std::vector<double> stability_perturbed_start(const RolloutFn& rollout,
                                              const Eigen::VectorXd& demo_start,
                                              const Eigen::VectorXd& goal, double radius,
                                              int n_steps, int n_samples, std::uint64_t seed);

/// Endpoint distance to goal after integrating extra_steps past the
/// demonstration horizon.
double stability_extended_horizon(const RolloutFn& rollout, const Eigen::VectorXd& demo_start,
                                  const Eigen::VectorXd& goal, int base_steps, int extra_steps);

}  // namespace contraj::metrics

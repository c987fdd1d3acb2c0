#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "contraj/data.hpp"
#include "contraj/dynamics.hpp"
#include "contraj/hypernet.hpp"
#include "contraj/runlog.hpp"

namespace contraj::continual {

enum class Method { SG, FT, REP, SI, MAS, HN, CHN };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Everything a sequential run needs: learner architecture, optimization
/// budget, and the method-specific constants.
struct MethodConfig {
  Method method = Method::CHN;
  dynamics::LearnerKind learner = dynamics::LearnerKind::Snode;
  int iterations = 3000;
  double lr = 1e-4;
  int train_points = 200;  // per-demo training resolution (0 = full length)
  dynamics::Scheme scheme = dynamics::Scheme::Euler;

  std::vector<int> f_hidden{64, 64};
  std::vector<int> v_hidden{32, 32};
  double alpha = 0.0;
  dynamics::ProjectionForm form = dynamics::ProjectionForm::ReluOutside;
  bool time_input = true;
  double tangent_scale = 5.0;

  double si_c = 0.3;
  double si_xi = 0.3;
  double mas_lambda = 0.1;
  int cond_emb_dim = 256;  // task-conditioned baselines

  std::vector<int> hn_hidden{200, 200, 200};
  int task_emb_dim = 256;
  int chunk_size = 8192;
  int chunk_emb_dim = 256;
  hypernet::RegStrategy strategy;
  bool lookahead = true;

  bool is_hypernet() const { return method == Method::HN || method == Method::CHN; }
  bool is_conditioned() const {
    return method == Method::FT || method == Method::REP || method == Method::SI ||
           method == Method::MAS;
  }
  dynamics::LearnerConfig learner_config(int state_dim) const;
  hypernet::HypernetSpec hypernet_spec(int state_dim) const;
  void validate() const;
};

/// Direct-regularization bookkeeping (Eq.-7-style weighted L2).
struct DirectRegState {
  Eigen::VectorXd omega;             // accumulated importance, >= 0
  Eigen::VectorXd theta_star;        // parameters at last consolidation
  Eigen::VectorXd path_integral;     // per-task SI accumulator
  Eigen::VectorXd theta_task_start;  // SI displacement reference

  void reset(int n);
};

/// task_loss + c * sum_k omega_k (theta*_k - theta_k)^2.
double direct_reg_loss(double task_loss, const DirectRegState& state,
                       const Eigen::VectorXd& theta, double c);
/// Gradient of the penalty alone w.r.t. theta.
Eigen::VectorXd direct_reg_grad(const DirectRegState& state, const Eigen::VectorXd& theta,
                                double c);

/// Per-step path-integral accumulation: w -= task_grad .* delta_theta.
void si_update(DirectRegState& state, const Eigen::VectorXd& task_grad,
               const Eigen::VectorXd& delta_theta);
/// Task-end consolidation: omega += relu(w) / (total_displacement^2 + xi).
void si_consolidate(DirectRegState& state, const Eigen::VectorXd& theta_now, double xi);

/// Importance from output sensitivity: mean over samples of
/// |d||F(x)||^2 / d theta|. Samples are columns with matching times.
void mas_update(DirectRegState& state, const dynamics::LearnerConfig& cfg,
                const dynamics::FlatParams& params, const Eigen::MatrixXd& states,
                const Eigen::VectorXd& times, const Eigen::VectorXd* cond);

/// One trained model with enough context to roll out a task: parameters,
/// the architecture, and (for conditioned models) the task's embedding.
struct TaskModel {
  dynamics::LearnerConfig cfg;
  dynamics::FlatParams params;
  Eigen::VectorXd cond;  // empty for unconditioned models

  /// Integrates n_steps from a normalized start; rows are states.
  Eigen::MatrixXd rollout(const Eigen::VectorXd& start, int n_steps, double dt) const;
  mutable int last_cond_task = -1;  // instrumentation for conditioned eval
};

/// Velocity of a task-conditioned model, choosing the embedding by task
/// index; records the index used on the model for instrumentation.
Eigen::VectorXd task_conditioned_forward(const TaskModel& model,
                                         const std::vector<Eigen::VectorXd>& embeddings,
                                         const Eigen::VectorXd& x, double t, int task_index);

struct SequenceResult {
  RunLog log;
  /// Training-phase demo reads: entry (m, j) counts how often task j's
  /// demonstrations were materialized into a batch while training task m.
  Eigen::MatrixXd training_reads;
  std::vector<bool> diverged;
  /// Final-state models per task (after the whole sequence).
  std::vector<TaskModel> final_models;
  std::vector<data::NormalizationInfo> norm_infos;
};

/// Sequential training under the method's rules: after each task, the
/// current and all previous tasks are rolled out from every demonstration
/// start at full resolution and the errors are recorded.
SequenceResult train_sequence(const data::TaskDataset& ds, const MethodConfig& cfg,
                              std::uint64_t seed);

/// Per-demo evaluation errors of one model on one task, in original units.
struct EvalErrors {
  std::vector<double> dtw;
  std::vector<double> quat;
};
EvalErrors evaluate_model_on_task(const TaskModel& model, const data::Task& task,
                                  const data::NormalizedTask& nt);

}  // namespace contraj::continual

#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "contraj/ad.hpp"
#include "contraj/rng.hpp"

namespace contraj::dynamics {

enum class Activation { Softplus, Tanh };
/// How z-path weights of the convex network are kept nonnegative.
enum class Positivity { Softplus };
/// Variants of the stability projection: the numerator ReLU either excludes
/// the alpha*V term (as printed in the reference formula) or includes it.
enum class ProjectionForm { ReluOutside, ReluInside };
enum class Scheme { Euler, Rk4 };

struct MlpSpec {
  std::vector<int> layer_widths;  // input, hidden..., output
  Activation activation = Activation::Softplus;

  int input_width() const { return layer_widths.front(); }
  int output_width() const { return layer_widths.back(); }
  int param_count() const;
  void validate() const;
};

/// Input-convex network: output affine, hidden activations convex and
/// nondecreasing, z-path weights mapped through softplus at use time.
struct IcnnSpec {
  std::vector<int> layer_widths;  // input, hidden..., 1
  Activation activation = Activation::Softplus;
  Positivity positivity = Positivity::Softplus;

  int input_width() const { return layer_widths.front(); }
  int param_count() const;
  void validate() const;
};

struct FlatParams {
  Eigen::VectorXd values;
};

/// Canonical index map for the flat parameter vector: all dynamics-net
/// layers in order (weights row-major, then bias), then all Lyapunov-net
/// layers in order (weight row-major, bias, then raw z-path weights
/// row-major for layers past the first).
struct ParamLayout {
  struct Entry {
    int offset = 0;
    int rows = 0;
    int cols = 0;
  };
  std::vector<Entry> f_w, f_b;
  std::vector<Entry> v_w, v_b;
  std::vector<Entry> v_u;  // one per hidden/output layer past the first
  int f_offset = 0;
  int f_count = 0;
  int v_offset = 0;
  int v_count = 0;
  int total = 0;
};

ParamLayout make_layout(const MlpSpec& f, const IcnnSpec* v);

struct IntegratorConfig {
  int n_steps = 0;  // T - 1
  double dt = 0.0;
  Scheme scheme = Scheme::Euler;
};

struct Trajectory {
  Eigen::MatrixXd points;  // T x d
  double dt = 0.0;

  int length() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  void validate() const;
};

enum class LearnerKind { Node, Snode };

/// Architecture and constants of a trajectory learner; parameters live
/// elsewhere (flat vector, checkpoint blob, or hypernetwork output).
struct LearnerConfig {
  LearnerKind kind = LearnerKind::Snode;
  int state_dim = 2;
  bool time_input = true;
  int cond_dim = 0;  // task-conditioning width, 0 = unconditioned
  std::vector<int> f_hidden{64, 64};
  std::vector<int> v_hidden{32, 32};
  Activation activation = Activation::Softplus;
  double alpha = 0.0;
  double grad_floor = 1e-8;
  double lyap_eps = 1e-3;
  double sigma_knee = 0.1;
  ProjectionForm form = ProjectionForm::ReluOutside;
  bool projection_enabled = true;

  int aug_dim() const { return state_dim + (time_input ? 1 : 0); }
  int input_dim() const { return aug_dim() + cond_dim; }
  MlpSpec f_spec() const;
  IcnnSpec v_spec() const;
  ParamLayout layout() const;
  int param_count() const { return layout().total; }
};

/// Stable dynamics model: nominal network, convex Lyapunov network, and the
/// projection constants. Operates on time-augmented states.
struct StableDynamics {
  MlpSpec f_spec;
  IcnnSpec v_spec;
  FlatParams params;
  double alpha = 0.0;
  double grad_floor = 1e-8;
  double lyap_eps = 1e-3;
  double sigma_knee = 0.1;
  ProjectionForm form = ProjectionForm::ReluOutside;
  bool projection_enabled = true;

  int state_dim() const { return f_spec.output_width(); }
  void validate() const;
};

StableDynamics make_stable_dynamics(const LearnerConfig& cfg, FlatParams params);

FlatParams init_params(const LearnerConfig& cfg, Rng& rng);

// --- plain (per-vector) operations ----------------------------------------

Eigen::VectorXd mlp_forward(const MlpSpec& spec, Eigen::Ref<const Eigen::VectorXd> params,
                            Eigen::Ref<const Eigen::VectorXd> input);

double lyapunov_value(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x_aug);
Eigen::VectorXd lyapunov_grad(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x_aug);

/// Raw convex-network output before the positive-definite construction.
double icnn_raw_value(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x_aug);

Eigen::VectorXd project_stable(Eigen::Ref<const Eigen::VectorXd> f_hat,
                               Eigen::Ref<const Eigen::VectorXd> grad_v, double v, double alpha,
                               double grad_floor,
                               ProjectionForm form = ProjectionForm::ReluOutside);

/// Counters for rare numerical events during rollouts.
struct RhsStats {
  long near_singular_projections = 0;
};

Eigen::VectorXd snode_rhs(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x, double t,
                          RhsStats* stats = nullptr);
/// Conditioned variant: the embedding is appended to the network input and
/// the Lyapunov base point is taken at zero state with the same embedding.
Eigen::VectorXd snode_rhs_cond(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x,
                               double t, Eigen::Ref<const Eigen::VectorXd> cond,
                               RhsStats* stats = nullptr);

Eigen::VectorXd node_rhs(const MlpSpec& spec, const FlatParams& params,
                         Eigen::Ref<const Eigen::VectorXd> x, double t);
Eigen::VectorXd node_rhs_cond(const MlpSpec& spec, const FlatParams& params,
                              Eigen::Ref<const Eigen::VectorXd> x, double t,
                              Eigen::Ref<const Eigen::VectorXd> cond);

using RhsFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

/// Fixed-step unrolled integration: n_steps+1 points, first = x0, t_k = k*dt.
/// Throws DivergenceError carrying the step index on non-finite states.
Trajectory integrate(const RhsFn& rhs, Eigen::Ref<const Eigen::VectorXd> x0,
                     const IntegratorConfig& cfg);

double trajectory_loss(const Trajectory& pred, const Trajectory& truth);

// --- taped builders (training path) ----------------------------------------

/// Everything needed to evaluate the learner's velocity on the tape for a
/// batch of n columns. flat is the full parameter vector node; cond is a
/// cond_dim x n node (invalid when unconditioned).
struct RhsGraph {
  const LearnerConfig* cfg = nullptr;
  ad::Var flat;
  ad::Var cond;
  ad::Var g0;  // Lyapunov base value, 1 x 1 or 1 x n
  int n = 1;
  // Parameter views, created once and shared by every step of the unroll.
  std::vector<ad::Var> f_w, f_b;
  std::vector<ad::Var> v_w, v_b, v_u;
};

RhsGraph make_rhs_graph(ad::Tape& tape, const LearnerConfig& cfg, ad::Var flat, ad::Var cond,
                        int ncols);

/// d x n velocities at states X (d x n) and shared time t.
ad::Var rhs_velocity(ad::Tape& tape, const RhsGraph& g, ad::Var X, double t);

/// Batch targets: step_targets[k] is the d x n matrix of demo points at step
/// k. Builds the unrolled integration and returns the scalar loss node
/// 0.5/n * sum_k ||X_k - target_k||^2.
ad::Var rollout_loss(ad::Tape& tape, const RhsGraph& g,
                     const std::vector<Eigen::MatrixXd>& step_targets,
                     const IntegratorConfig& cfg);

std::vector<Eigen::MatrixXd> batch_targets(const std::vector<Trajectory>& batch);

struct LossGrads {
  double loss = 0.0;
  Eigen::VectorXd grads;
};

/// Loss and exact flat-parameter gradient through the fully unrolled
/// integrator and projection (reverse mode).
LossGrads loss_and_param_grads(const LearnerConfig& cfg, const FlatParams& params,
                               const std::vector<Trajectory>& batch,
                               const IntegratorConfig& icfg);

}  // namespace contraj::dynamics

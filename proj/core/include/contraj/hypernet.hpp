#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "contraj/ad.hpp"
#include "contraj/dynamics.hpp"
#include "contraj/optim.hpp"
#include "contraj/rng.hpp"

namespace contraj::hypernet {

enum class HypernetMode { Full, Chunked };

/// Generator architecture. In full mode the network emits the complete
/// target parameter vector; in chunked mode it emits chunk_size values per
/// forward and is conditioned on a trainable per-chunk embedding.
struct HypernetSpec {
  HypernetMode mode = HypernetMode::Chunked;
  std::vector<int> hidden_widths{200, 200, 200};
  int task_emb_dim = 256;
  int chunk_size = 8192;
  int chunk_emb_dim = 256;
  dynamics::LearnerConfig target;

  int target_param_count() const { return target.param_count(); }
  int n_chunks() const;
  dynamics::MlpSpec mlp_spec() const;
  int mlp_param_count() const { return mlp_spec().param_count(); }
  /// Regularized core: generator weights plus (chunked) chunk embeddings.
  int core_param_count() const;
  void validate() const;
};

/// Trainable state: the regularized core vector [generator params |
/// chunk embeddings], the frozen task embeddings of finished tasks, the
/// current task's embedding, and the pre-task snapshot of the core.
struct HypernetState {
  HypernetSpec spec;
  Eigen::VectorXd core;
  std::vector<Eigen::VectorXd> frozen_embeddings;
  Eigen::VectorXd current_embedding;  // empty before the first begin_task
  Eigen::VectorXd snapshot;
  bool has_snapshot = false;

  int past_tasks() const { return static_cast<int>(frozen_embeddings.size()); }
};

HypernetState init_hypernet(const HypernetSpec& spec, Rng& rng);

/// Freezes the current embedding (if any), snapshots the core, and starts a
/// fresh trainable embedding drawn from a width-0.1 zero-mean uniform.
void begin_task(HypernetState& state, Rng& rng);

/// Full-mode generation: the target parameters as emitted by the final
/// layer of the generator.
dynamics::FlatParams hn_forward(const HypernetState& state, const Eigen::VectorXd& e);
/// Chunked generation: n_chunks forwards on (e, c_i), concatenated and
/// truncated to the target parameter count.
dynamics::FlatParams chn_forward(const HypernetState& state, const Eigen::VectorXd& e);
/// Mode dispatch.
dynamics::FlatParams generate(const HypernetState& state, const Eigen::VectorXd& e);
/// Generation from an arbitrary core vector (snapshots, lookahead points).
dynamics::FlatParams generate_from(const HypernetSpec& spec, const Eigen::VectorXd& core,
                                   const Eigen::VectorXd& e);

/// Tape subgraph emitting the target parameter vector from core and
/// embedding nodes.
ad::Var generator_graph(ad::Tape& tape, const HypernetSpec& spec, ad::Var core, ad::Var emb);

struct RegStrategy {
  enum class Kind { All, Subset, Single };
  Kind kind = Kind::All;
  int k_size = 1;  // subset only
  double beta = 5e-3;
};

/// Trajectory loss of the generated learner on a batch (no regularizer).
double task_loss(const HypernetState& state, const Eigen::VectorXd& e,
                 const std::vector<Eigen::MatrixXd>& step_targets,
                 const dynamics::IntegratorConfig& icfg);

/// Squared distance between the snapshot's generated parameters and the
/// parameters generated at core+delta, for frozen task l.
double reg_term(const HypernetState& state, int l, const Eigen::VectorXd& delta);

/// task_loss plus the strategy's regularizer with the documented
/// prefactors: all = beta * mean over past, subset = beta/|K| * sum over a
/// fresh uniform draw of min(k_size, m) distinct indices, single = beta
/// times one uniform draw.
double composite_loss(const HypernetState& state, const std::vector<Eigen::MatrixXd>& step_targets,
                      const dynamics::IntegratorConfig& icfg, const RegStrategy& strategy,
                      Rng& rng);

struct StepResult {
  double task_loss = 0.0;
  double composite_loss = 0.0;
};

/// Owns the optimizer and per-task snapshot caches for the two-step update:
/// step 1 derives the candidate core change from the task gradient alone,
/// step 2 backpropagates the regularized loss with that change held
/// constant inside the regularizer.
class HypernetTrainer {
 public:
  HypernetTrainer(HypernetState& state, dynamics::IntegratorConfig icfg, Adam::Options opt,
                  RegStrategy strategy, bool lookahead = true);

  /// begin_task on the state plus optimizer reset and snapshot-target cache.
  void start_task(Rng& rng);

  /// One two-step update on a batch; throws DivergenceError on non-finite
  /// parameters.
  StepResult step(const std::vector<Eigen::MatrixXd>& step_targets, Rng& rng);

  const dynamics::IntegratorConfig& integrator() const { return icfg_; }

 private:
  HypernetState& state_;
  dynamics::IntegratorConfig icfg_;
  Adam adam_;
  Adam::Options opt_;
  RegStrategy strategy_;
  bool lookahead_ = true;
  std::vector<Eigen::VectorXd> snapshot_targets_;  // f(e^l, h*) per past task
  long steps_taken_ = 0;
};

}  // namespace contraj::hypernet

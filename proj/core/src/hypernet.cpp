#include "contraj/hypernet.hpp"

#include <cmath>

#include "contraj/errors.hpp"

namespace contraj::hypernet {

using dynamics::FlatParams;
using dynamics::MlpSpec;
using Eigen::MatrixXd;
using Eigen::VectorXd;

int HypernetSpec::n_chunks() const {
  if (mode == HypernetMode::Full) return 1;
  return (target_param_count() + chunk_size - 1) / chunk_size;
}

MlpSpec HypernetSpec::mlp_spec() const {
  MlpSpec s;
  s.layer_widths.push_back(mode == HypernetMode::Full ? task_emb_dim
                                                      : task_emb_dim + chunk_emb_dim);
  for (int h : hidden_widths) s.layer_widths.push_back(h);
  s.layer_widths.push_back(mode == HypernetMode::Full ? target_param_count() : chunk_size);
  s.activation = dynamics::Activation::Softplus;
  return s;
}

int HypernetSpec::core_param_count() const {
  int n = mlp_param_count();
  if (mode == HypernetMode::Chunked) n += n_chunks() * chunk_emb_dim;
  return n;
}

void HypernetSpec::validate() const {
  if (task_emb_dim <= 0) throw ContractError("HypernetSpec: task_emb_dim must be positive");
  if (mode == HypernetMode::Chunked && (chunk_size <= 0 || chunk_emb_dim <= 0))
    throw ContractError("HypernetSpec: chunk sizes must be positive");
  mlp_spec().validate();
}

HypernetState init_hypernet(const HypernetSpec& spec, Rng& rng) {
  spec.validate();
  HypernetState st;
  st.spec = spec;
  st.core.setZero(spec.core_param_count());
  const MlpSpec ms = spec.mlp_spec();
  int at = 0;
  for (std::size_t l = 0; l + 1 < ms.layer_widths.size(); ++l) {
    const int rows = ms.layer_widths[l + 1];
    const int cols = ms.layer_widths[l];
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int i = 0; i < rows * cols + rows; ++i) st.core[at + i] = rng.uniform(-s, s);
    at += rows * cols + rows;
  }
  // Chunk embeddings use the same width-0.1 uniform as task embeddings.
  for (int i = at; i < st.core.size(); ++i) st.core[i] = rng.uniform(-0.05, 0.05);
  return st;
}

void begin_task(HypernetState& state, Rng& rng) {
  if (state.current_embedding.size() > 0)
    state.frozen_embeddings.push_back(state.current_embedding);
  state.snapshot = state.core;
  state.has_snapshot = true;
  state.current_embedding = rng.uniform_vector(state.spec.task_emb_dim, -0.05, 0.05);
}

namespace {

VectorXd mlp_plain(const MlpSpec& spec, const VectorXd& flat, const VectorXd& in) {
  return dynamics::mlp_forward(spec, flat.segment(0, spec.param_count()), in);
}

FlatParams generate_plain(const HypernetSpec& spec, const VectorXd& core, const VectorXd& e) {
  if (e.size() != spec.task_emb_dim) throw ContractError("generate: embedding width mismatch");
  const MlpSpec ms = spec.mlp_spec();
  const int P = spec.target_param_count();
  if (spec.mode == HypernetMode::Full) {
    FlatParams out;
    out.values = mlp_plain(ms, core, e);
    return out;
  }
  const int n_chunks = spec.n_chunks();
  const int emb_base = spec.mlp_param_count();
  VectorXd assembled(n_chunks * spec.chunk_size);
  VectorXd input(spec.task_emb_dim + spec.chunk_emb_dim);
  input.head(spec.task_emb_dim) = e;
  for (int i = 0; i < n_chunks; ++i) {
    input.tail(spec.chunk_emb_dim) =
        core.segment(emb_base + i * spec.chunk_emb_dim, spec.chunk_emb_dim);
    assembled.segment(i * spec.chunk_size, spec.chunk_size) = mlp_plain(ms, core, input);
  }
  FlatParams out;
  out.values = assembled.head(P);
  return out;
}

}  // namespace

FlatParams hn_forward(const HypernetState& state, const VectorXd& e) {
  if (state.spec.mode != HypernetMode::Full)
    throw ContractError("hn_forward: state is a chunked hypernetwork");
  return generate_plain(state.spec, state.core, e);
}

FlatParams chn_forward(const HypernetState& state, const VectorXd& e) {
  if (state.spec.mode != HypernetMode::Chunked)
    throw ContractError("chn_forward: state is a full hypernetwork");
  return generate_plain(state.spec, state.core, e);
}

FlatParams generate(const HypernetState& state, const VectorXd& e) {
  return generate_plain(state.spec, state.core, e);
}

FlatParams generate_from(const HypernetSpec& spec, const VectorXd& core, const VectorXd& e) {
  if (core.size() != spec.core_param_count())
    throw ContractError("generate_from: core size mismatch");
  return generate_plain(spec, core, e);
}

ad::Var generator_graph(ad::Tape& tape, const HypernetSpec& spec, ad::Var core, ad::Var emb) {
  const MlpSpec ms = spec.mlp_spec();
  const int n_layers = static_cast<int>(ms.layer_widths.size()) - 1;

  std::vector<ad::Var> W, B;
  int at = 0;
  for (int l = 0; l < n_layers; ++l) {
    const int rows = ms.layer_widths[l + 1];
    const int cols = ms.layer_widths[l];
    W.push_back(tape.reshape_rowmajor(core, at, rows, cols));
    at += rows * cols;
    B.push_back(tape.segment(core, at, rows));
    at += rows;
  }

  auto apply_mlp = [&](ad::Var input) {
    ad::Var h = input;
    for (int l = 0; l < n_layers; ++l) {
      h = tape.colwise_add(tape.matmul(W[l], h), B[l]);
      if (l + 1 < n_layers) h = tape.unary(h, ad::UnaryFn::Softplus);
    }
    return h;
  };

  if (spec.mode == HypernetMode::Full) return apply_mlp(emb);

  // One forward per chunk on [task embedding; chunk embedding]; outputs are
  // stacked in chunk order and trailing overflow is discarded.
  const int n_chunks = spec.n_chunks();
  std::vector<ad::Var> outputs;
  outputs.reserve(n_chunks);
  for (int i = 0; i < n_chunks; ++i) {
    ad::Var chunk_emb = tape.segment(core, at + i * spec.chunk_emb_dim, spec.chunk_emb_dim);
    outputs.push_back(apply_mlp(tape.concat_rows({emb, chunk_emb})));
  }
  ad::Var stacked = tape.concat_rows(outputs);
  return tape.rows(stacked, 0, spec.target_param_count());
}

double task_loss(const HypernetState& state, const VectorXd& e,
                 const std::vector<MatrixXd>& step_targets,
                 const dynamics::IntegratorConfig& icfg) {
  const FlatParams params = generate_plain(state.spec, state.core, e);
  ad::Tape tape;
  ad::Var flat = tape.constant(params.values);
  dynamics::RhsGraph g = dynamics::make_rhs_graph(tape, state.spec.target, flat, ad::Var{},
                                                  static_cast<int>(step_targets.front().cols()));
  return tape.val(dynamics::rollout_loss(tape, g, step_targets, icfg))(0, 0);
}

double reg_term(const HypernetState& state, int l, const VectorXd& delta) {
  if (state.past_tasks() == 0) throw ContractError("reg_term: no past tasks");
  if (!state.has_snapshot) throw ContractError("reg_term: no snapshot");
  if (l < 0 || l >= state.past_tasks()) throw ContractError("reg_term: bad task index");
  const VectorXd& e = state.frozen_embeddings[l];
  const FlatParams snap = generate_plain(state.spec, state.snapshot, e);
  const VectorXd moved = state.core + delta;
  const FlatParams live = generate_plain(state.spec, moved, e);
  return (snap.values - live.values).squaredNorm();
}

namespace {

std::vector<int> pick_indices(const RegStrategy& strategy, int past, Rng& rng) {
  std::vector<int> idx;
  if (past == 0) return idx;
  switch (strategy.kind) {
    case RegStrategy::Kind::All:
      for (int l = 0; l < past; ++l) idx.push_back(l);
      break;
    case RegStrategy::Kind::Subset:
      idx = rng.distinct_indices(std::min(strategy.k_size, past), past);
      break;
    case RegStrategy::Kind::Single:
      idx.push_back(rng.index(past));
      break;
  }
  return idx;
}

}  // namespace

double composite_loss(const HypernetState& state, const std::vector<MatrixXd>& step_targets,
                      const dynamics::IntegratorConfig& icfg, const RegStrategy& strategy,
                      Rng& rng) {
  double loss = task_loss(state, state.current_embedding, step_targets, icfg);
  const int past = state.past_tasks();
  if (past == 0 || strategy.beta == 0.0) return loss;
  const std::vector<int> idx = pick_indices(strategy, past, rng);
  const VectorXd zero = VectorXd::Zero(state.core.size());
  double reg = 0.0;
  for (int l : idx) reg += reg_term(state, l, zero);
  return loss + strategy.beta / static_cast<double>(idx.size()) * reg;
}

HypernetTrainer::HypernetTrainer(HypernetState& state, dynamics::IntegratorConfig icfg,
                                 Adam::Options opt, RegStrategy strategy, bool lookahead)
    : state_(state), icfg_(icfg), opt_(opt), strategy_(strategy), lookahead_(lookahead) {}

void HypernetTrainer::start_task(Rng& rng) {
  begin_task(state_, rng);
  adam_ = Adam(static_cast<int>(state_.core.size() + state_.current_embedding.size()), opt_);
  snapshot_targets_.clear();
  for (const VectorXd& e : state_.frozen_embeddings)
    snapshot_targets_.push_back(generate_plain(state_.spec, state_.snapshot, e).values);
  steps_taken_ = 0;
}

StepResult HypernetTrainer::step(const std::vector<MatrixXd>& step_targets, Rng& rng) {
  const int core_n = static_cast<int>(state_.core.size());
  const int emb_n = static_cast<int>(state_.current_embedding.size());
  if (emb_n == 0) throw ContractError("HypernetTrainer: start_task before step");
  const int n_demos = static_cast<int>(step_targets.front().cols());

  ad::Tape tape;
  ad::Var core = tape.leaf(state_.core);
  ad::Var emb = tape.leaf(state_.current_embedding);
  ad::Var flat = generator_graph(tape, state_.spec, core, emb);
  dynamics::RhsGraph g =
      dynamics::make_rhs_graph(tape, state_.spec.target, flat, ad::Var{}, n_demos);
  ad::Var loss = dynamics::rollout_loss(tape, g, step_targets, icfg_);
  tape.backward(loss);

  StepResult out;
  out.task_loss = tape.val(loss)(0, 0);

  VectorXd grad(core_n + emb_n);
  grad.head(core_n) =
      tape.grad(core).size() > 0 ? VectorXd(tape.grad(core).col(0)) : VectorXd::Zero(core_n);
  grad.tail(emb_n) =
      tape.grad(emb).size() > 0 ? VectorXd(tape.grad(emb).col(0)) : VectorXd::Zero(emb_n);

  const int past = state_.past_tasks();
  double reg_value = 0.0;
  if (past > 0 && strategy_.beta > 0.0) {
    // Step 1: candidate core change from the task gradient alone.
    VectorXd delta = VectorXd::Zero(core_n);
    if (lookahead_) delta = adam_.propose(grad).head(core_n);

    // Step 2: regularizer at core+delta (delta held constant), gradients
    // flowing to the live core.
    const std::vector<int> idx = pick_indices(strategy_, past, rng);
    const double prefactor = strategy_.beta / static_cast<double>(idx.size());
    ad::Tape rtape;
    ad::Var rcore = rtape.leaf(state_.core);
    ad::Var moved = rtape.add_const(rcore, delta);
    ad::Var acc;
    for (int l : idx) {
      ad::Var frozen = rtape.constant(state_.frozen_embeddings[l]);
      ad::Var gen = generator_graph(rtape, state_.spec, moved, frozen);
      ad::Var term = rtape.sumsq_diff(gen, snapshot_targets_[l]);
      acc = acc.valid() ? rtape.add(acc, term) : term;
    }
    ad::Var reg = rtape.scale(acc, prefactor);
    rtape.backward(reg);
    reg_value = rtape.val(reg)(0, 0);
    if (rtape.grad(rcore).size() > 0) grad.head(core_n) += rtape.grad(rcore).col(0);
  }
  out.composite_loss = out.task_loss + reg_value;

  VectorXd packed(core_n + emb_n);
  packed.head(core_n) = state_.core;
  packed.tail(emb_n) = state_.current_embedding;
  adam_.step(packed, grad);
  ++steps_taken_;
  if (!packed.allFinite())
    throw DivergenceError("HypernetTrainer: non-finite parameters after update",
                          static_cast<int>(steps_taken_));
  state_.core = packed.head(core_n);
  state_.current_embedding = packed.tail(emb_n);
  return out;
}

}  // namespace contraj::hypernet

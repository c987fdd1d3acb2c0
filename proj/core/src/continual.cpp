#include "contraj/continual.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "contraj/errors.hpp"
#include "contraj/metrics.hpp"
#include "contraj/optim.hpp"
#include "contraj/orientation.hpp"
#include "contraj/rng.hpp"

namespace contraj::continual {

using dynamics::FlatParams;
using dynamics::IntegratorConfig;
using dynamics::LearnerConfig;
using dynamics::Trajectory;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string method_name(Method m) {
  switch (m) {
    case Method::SG: return "sg";
    case Method::FT: return "ft";
    case Method::REP: return "rep";
    case Method::SI: return "si";
    case Method::MAS: return "mas";
    case Method::HN: return "hn";
    case Method::CHN: return "chn";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "sg") return Method::SG;
  if (name == "ft") return Method::FT;
  if (name == "rep") return Method::REP;
  if (name == "si") return Method::SI;
  if (name == "mas") return Method::MAS;
  if (name == "hn") return Method::HN;
  if (name == "chn") return Method::CHN;
  throw ContractError("unknown method '" + name + "'");
}

LearnerConfig MethodConfig::learner_config(int state_dim) const {
  LearnerConfig lc;
  lc.kind = learner;
  lc.state_dim = state_dim;
  lc.time_input = time_input;
  lc.cond_dim = is_conditioned() ? cond_emb_dim : 0;
  lc.f_hidden = f_hidden;
  lc.v_hidden = v_hidden;
  lc.alpha = alpha;
  lc.form = form;
  return lc;
}

hypernet::HypernetSpec MethodConfig::hypernet_spec(int state_dim) const {
  hypernet::HypernetSpec spec;
  spec.mode = method == Method::HN ? hypernet::HypernetMode::Full : hypernet::HypernetMode::Chunked;
  spec.hidden_widths = hn_hidden;
  spec.task_emb_dim = task_emb_dim;
  spec.chunk_size = chunk_size;
  spec.chunk_emb_dim = chunk_emb_dim;
  spec.target = learner_config(state_dim);
  return spec;
}

void MethodConfig::validate() const {
  if (iterations <= 0) throw ContractError("MethodConfig: iterations must be positive");
  if (lr <= 0.0) throw ContractError("MethodConfig: lr must be positive");
  if (si_c < 0.0 || si_xi < 0.0 || mas_lambda < 0.0 || strategy.beta < 0.0)
    throw ContractError("MethodConfig: regularization constants must be nonnegative");
  if (strategy.k_size < 1) throw ContractError("MethodConfig: subset size must be >= 1");
  if (alpha < 0.0) throw ContractError("MethodConfig: alpha must be nonnegative");
  if (tangent_scale <= 0.0) throw ContractError("MethodConfig: tangent scale must be positive");
}

void DirectRegState::reset(int n) {
  omega = VectorXd::Zero(n);
  theta_star = VectorXd::Zero(n);
  path_integral = VectorXd::Zero(n);
  theta_task_start = VectorXd::Zero(n);
}

double direct_reg_loss(double task_loss, const DirectRegState& state, const VectorXd& theta,
                       double c) {
  if (state.omega.size() != theta.size())
    throw ContractError("direct_reg_loss: state/parameter size mismatch");
  const double penalty = (state.omega.array() * (state.theta_star - theta).array().square()).sum();
  return task_loss + c * penalty;
}

VectorXd direct_reg_grad(const DirectRegState& state, const VectorXd& theta, double c) {
  return (2.0 * c * state.omega.array() * (theta - state.theta_star).array()).matrix();
}

void si_update(DirectRegState& state, const VectorXd& task_grad, const VectorXd& delta_theta) {
  if (task_grad.size() != state.path_integral.size() ||
      delta_theta.size() != state.path_integral.size())
    throw ContractError("si_update: size mismatch");
  state.path_integral.array() -= task_grad.array() * delta_theta.array();
}

void si_consolidate(DirectRegState& state, const VectorXd& theta_now, double xi) {
  const VectorXd displacement = theta_now - state.theta_task_start;
  state.omega.array() +=
      state.path_integral.array().max(0.0) / (displacement.array().square() + xi);
  state.path_integral.setZero();
  state.theta_star = theta_now;
  state.theta_task_start = theta_now;
}

void mas_update(DirectRegState& state, const LearnerConfig& cfg, const FlatParams& params,
                const MatrixXd& states, const VectorXd& times, const VectorXd* cond) {
  const int n = static_cast<int>(states.cols());
  if (times.size() != n) throw ContractError("mas_update: state/time count mismatch");
  VectorXd acc = VectorXd::Zero(params.values.size());
  for (int i = 0; i < n; ++i) {
    ad::Tape tape;
    ad::Var flat = tape.leaf(params.values);
    ad::Var cvar;
    if (cfg.cond_dim > 0) {
      if (cond == nullptr) throw ContractError("mas_update: conditioned model needs embedding");
      cvar = tape.constant(*cond);
    }
    dynamics::RhsGraph g = dynamics::make_rhs_graph(tape, cfg, flat, cvar, 1);
    ad::Var x = tape.constant(states.col(i));
    ad::Var vel = dynamics::rhs_velocity(tape, g, x, times[i]);
    ad::Var sq = tape.sumsq(vel);
    tape.backward(sq);
    if (tape.grad(flat).size() > 0) acc += tape.grad(flat).col(0).cwiseAbs();
  }
  if (state.omega.size() != acc.size()) throw ContractError("mas_update: size mismatch");
  state.omega += acc / std::max(1, n);
}

MatrixXd TaskModel::rollout(const VectorXd& start, int n_steps, double dt) const {
  IntegratorConfig icfg{n_steps, dt, dynamics::Scheme::Euler};
  dynamics::RhsFn rhs;
  if (cfg.kind == dynamics::LearnerKind::Snode) {
    dynamics::StableDynamics dyn = dynamics::make_stable_dynamics(cfg, params);
    if (cond.size() > 0) {
      const VectorXd c = cond;
      rhs = [dyn, c](const VectorXd& x, double t) {
        return dynamics::snode_rhs_cond(dyn, x, t, c);
      };
    } else {
      rhs = [dyn](const VectorXd& x, double t) { return dynamics::snode_rhs(dyn, x, t); };
    }
  } else {
    const dynamics::MlpSpec spec = cfg.f_spec();
    const FlatParams p = params;
    if (cond.size() > 0) {
      const VectorXd c = cond;
      rhs = [spec, p, c](const VectorXd& x, double t) {
        return dynamics::node_rhs_cond(spec, p, x, t, c);
      };
    } else {
      rhs = [spec, p](const VectorXd& x, double t) { return dynamics::node_rhs(spec, p, x, t); };
    }
  }
  return dynamics::integrate(rhs, start, icfg).points;
}

VectorXd task_conditioned_forward(const TaskModel& model,
                                  const std::vector<VectorXd>& embeddings, const VectorXd& x,
                                  double t, int task_index) {
  if (task_index < 0 || task_index >= static_cast<int>(embeddings.size()))
    throw ContractError("task_conditioned_forward: unknown task index");
  model.last_cond_task = task_index;
  if (model.cfg.kind == dynamics::LearnerKind::Snode) {
    const dynamics::StableDynamics dyn = dynamics::make_stable_dynamics(model.cfg, model.params);
    return dynamics::snode_rhs_cond(dyn, x, t, embeddings[task_index]);
  }
  return dynamics::node_rhs_cond(model.cfg.f_spec(), model.params, x, t, embeddings[task_index]);
}

namespace {

std::vector<Trajectory> subsample(const std::vector<Trajectory>& demos, int n_points) {
  const int T = demos.front().length();
  if (n_points <= 1 || n_points >= T) return demos;
  std::vector<Trajectory> out;
  out.reserve(demos.size());
  for (const Trajectory& demo : demos) {
    Trajectory tr;
    tr.dt = 1.0 / (n_points - 1);
    tr.points.resize(n_points, demo.dim());
    for (int i = 0; i < n_points; ++i) {
      const int src =
          static_cast<int>(std::lround(static_cast<double>(i) * (T - 1) / (n_points - 1)));
      tr.points.row(i) = demo.points.row(src);
    }
    out.push_back(std::move(tr));
  }
  return out;
}

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

}  // namespace

EvalErrors evaluate_model_on_task(const TaskModel& model, const data::Task& task,
                                  const data::NormalizedTask& nt) {
  EvalErrors out;
  const int T = task.length();
  const int n_steps = T - 1;
  const double dt = 1.0 / n_steps;
  const double inf = std::numeric_limits<double>::infinity();
  for (int j = 0; j < task.n_demos(); ++j) {
    double dtw_err = inf;
    double quat_err = inf;
    try {
      const VectorXd start = nt.demos[j].points.row(0).transpose();
      const MatrixXd pred = model.rollout(start, n_steps, dt);
      Trajectory pred_traj{pred, dt};
      if (task.kind == data::TaskKind::Euclidean) {
        const Trajectory orig = data::denormalize(pred_traj, nt.info, j);
        dtw_err = metrics::dtw(orig.points, task.demos[j].points);
      } else {
        const orientation::PoseTrajectory orig = data::denormalize_pose(pred_traj, nt.info, j);
        dtw_err = metrics::dtw(orig.positions, task.pose_demos[j].positions);
        quat_err =
            orientation::quat_trajectory_error(orig.quaternions, task.pose_demos[j].quaternions);
      }
    } catch (const DivergenceError&) {
      // keep infinities
    } catch (const DomainError&) {
      // decoded tangent left the chart: treat as a failed prediction
    }
    out.dtw.push_back(dtw_err);
    if (task.kind == data::TaskKind::Pose) out.quat.push_back(quat_err);
  }
  return out;
}

SequenceResult train_sequence(const data::TaskDataset& ds, const MethodConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  ds.validate();
  const int n_tasks = static_cast<int>(ds.tasks.size());
  const int d = ds.tasks.front().dim();
  for (const data::Task& t : ds.tasks)
    if (t.dim() != d) throw ContractError("train_sequence: tasks must share dimension");

  Rng rng(seed);
  const LearnerConfig lc = cfg.learner_config(d);

  SequenceResult result;
  result.training_reads = MatrixXd::Zero(n_tasks, n_tasks);
  result.diverged.assign(n_tasks, false);

  // Lazily materialized per-task assets.
  std::vector<std::optional<data::NormalizedTask>> norm(n_tasks);
  std::vector<std::vector<Trajectory>> train_demos(n_tasks);
  auto ensure_ready = [&](int j) {
    if (!norm[j].has_value()) {
      norm[j] = data::normalize(ds.tasks[j], cfg.tangent_scale);
      train_demos[j] = subsample(norm[j]->demos, cfg.train_points);
    }
  };
  auto training_targets = [&](int trainee, int source_task) {
    ensure_ready(source_task);
    result.training_reads(trainee, source_task) += 1.0;
    return dynamics::batch_targets(train_demos[source_task]);
  };

  // Method state.
  std::vector<TaskModel> sg_models;
  VectorXd net;                      // conditioned baselines: network parameters
  std::vector<VectorXd> embeddings;  // conditioned baselines: per-task embeddings
  DirectRegState dr;
  std::optional<hypernet::HypernetState> hstate;
  std::optional<hypernet::HypernetTrainer> htrainer;
  if (cfg.is_hypernet()) hstate = hypernet::init_hypernet(cfg.hypernet_spec(d), rng);
  if (cfg.is_conditioned()) {
    net = dynamics::init_params(lc, rng).values;
    dr.reset(static_cast<int>(net.size()));
  }

  auto hn_embedding_for = [&](int j) -> const VectorXd& {
    return j < hstate->past_tasks() ? hstate->frozen_embeddings[j] : hstate->current_embedding;
  };

  auto model_for = [&](int j) -> TaskModel {
    TaskModel model;
    if (cfg.method == Method::SG) return sg_models[j];
    if (cfg.is_hypernet()) {
      model.cfg = hstate->spec.target;
      model.params = hypernet::generate(*hstate, hn_embedding_for(j));
      return model;
    }
    model.cfg = lc;
    model.params = FlatParams{net};
    model.cond = embeddings[j];
    return model;
  };

  const double direct_c = cfg.method == Method::SI    ? cfg.si_c
                          : cfg.method == Method::MAS ? cfg.mas_lambda
                                                      : 0.0;

  RunLog& log = result.log;
  for (int m = 0; m < n_tasks; ++m) {
    ensure_ready(m);
    const int T_train = train_demos[m].front().length();
    const IntegratorConfig icfg{T_train - 1, 1.0 / (T_train - 1), cfg.scheme};

    double wall = 0.0;
    try {
      if (cfg.method == Method::SG) {
        TaskModel model;
        model.cfg = lc;
        model.params = dynamics::init_params(lc, rng);
        const auto targets = training_targets(m, m);
        Adam adam(static_cast<int>(model.params.values.size()), Adam::Options{cfg.lr});
        Clock clock;
        for (int it = 0; it < cfg.iterations; ++it) {
          ad::Tape tape;
          ad::Var flat = tape.leaf(model.params.values);
          dynamics::RhsGraph g = dynamics::make_rhs_graph(tape, lc, flat, ad::Var{},
                                                          static_cast<int>(targets.front().cols()));
          ad::Var loss = dynamics::rollout_loss(tape, g, targets, icfg);
          tape.backward(loss);
          const VectorXd grad = tape.grad(flat).size() > 0
                                    ? VectorXd(tape.grad(flat).col(0))
                                    : VectorXd::Zero(model.params.values.size());
          adam.step(model.params.values, grad);
          if (!model.params.values.allFinite())
            throw DivergenceError("sg training diverged", it + 1);
        }
        wall = clock.elapsed();
        sg_models.push_back(std::move(model));
      } else if (cfg.is_hypernet()) {
        htrainer.emplace(*hstate, icfg, Adam::Options{cfg.lr}, cfg.strategy, cfg.lookahead);
        htrainer->start_task(rng);
        const VectorXd emb_backup = hstate->current_embedding;
        const auto targets = training_targets(m, m);
        Clock clock;
        try {
          for (int it = 0; it < cfg.iterations; ++it) htrainer->step(targets, rng);
        } catch (const DivergenceError&) {
          hstate->core = hstate->snapshot;
          hstate->current_embedding = emb_backup;
          throw;
        }
        wall = clock.elapsed();
      } else {
        // Conditioned baselines: FT, REP, SI, MAS.
        embeddings.push_back(rng.uniform_vector(cfg.cond_emb_dim, -0.05, 0.05));
        const VectorXd net_backup = net;
        const int P = static_cast<int>(net.size());
        const bool replay = cfg.method == Method::REP;
        dr.theta_task_start = net;

        std::vector<std::pair<int, int>> union_demos;
        for (int j = 0; j <= m; ++j) {
          if (!replay && j < m) continue;
          ensure_ready(j);
          for (int k = 0; k < static_cast<int>(train_demos[j].size()); ++k)
            union_demos.emplace_back(j, k);
        }
        const int batch_size = static_cast<int>(train_demos[m].size());

        std::optional<std::vector<MatrixXd>> fixed_targets;
        if (!replay) fixed_targets = training_targets(m, m);

        const int n_opt = P + cfg.cond_emb_dim * (replay ? m + 1 : 1);
        Adam adam(n_opt, Adam::Options{cfg.lr});
        Clock clock;
        try {
          for (int it = 0; it < cfg.iterations; ++it) {
            std::vector<MatrixXd> targets;
            std::vector<int> col_tasks;
            if (!replay) {
              targets = *fixed_targets;
              col_tasks.assign(static_cast<std::size_t>(batch_size), 0);
            } else {
              std::vector<int> picks;
              if (static_cast<int>(union_demos.size()) <= batch_size) {
                for (std::size_t u = 0; u < union_demos.size(); ++u)
                  picks.push_back(static_cast<int>(u));
              } else {
                picks = rng.distinct_indices(batch_size, static_cast<int>(union_demos.size()));
              }
              targets.assign(T_train, MatrixXd(d, picks.size()));
              for (std::size_t c = 0; c < picks.size(); ++c) {
                const auto [tj, dj] = union_demos[picks[c]];
                result.training_reads(m, tj) += 1.0;
                for (int k = 0; k < T_train; ++k)
                  targets[k].col(c) = train_demos[tj][dj].points.row(k).transpose();
                col_tasks.push_back(tj);
              }
            }

            ad::Tape tape;
            ad::Var net_leaf = tape.leaf(net);
            ad::Var bank;
            ad::Var cond;
            if (!replay) {
              bank = tape.leaf(embeddings[m]);
              cond = tape.tile_cols(bank, static_cast<int>(targets.front().cols()));
            } else {
              MatrixXd bank_mat(cfg.cond_emb_dim, m + 1);
              for (int j = 0; j <= m; ++j) bank_mat.col(j) = embeddings[j];
              bank = tape.leaf(bank_mat);
              cond = tape.gather_cols(bank, col_tasks);
            }
            dynamics::RhsGraph g = dynamics::make_rhs_graph(
                tape, lc, net_leaf, cond, static_cast<int>(targets.front().cols()));
            ad::Var loss = dynamics::rollout_loss(tape, g, targets, icfg);
            tape.backward(loss);

            VectorXd g_net = tape.grad(net_leaf).size() > 0 ? VectorXd(tape.grad(net_leaf).col(0))
                                                            : VectorXd::Zero(P);
            const VectorXd task_grad_net = g_net;
            g_net += direct_reg_grad(dr, net, direct_c);

            VectorXd packed(n_opt);
            VectorXd grad(n_opt);
            packed.head(P) = net;
            grad.head(P) = g_net;
            if (!replay) {
              packed.tail(cfg.cond_emb_dim) = embeddings[m];
              grad.tail(cfg.cond_emb_dim) = tape.grad(bank).size() > 0
                                                ? VectorXd(tape.grad(bank).col(0))
                                                : VectorXd::Zero(cfg.cond_emb_dim);
            } else {
              const MatrixXd& gb = tape.grad(bank);
              for (int j = 0; j <= m; ++j) {
                packed.segment(P + j * cfg.cond_emb_dim, cfg.cond_emb_dim) = embeddings[j];
                grad.segment(P + j * cfg.cond_emb_dim, cfg.cond_emb_dim) =
                    gb.size() > 0 ? VectorXd(gb.col(j)) : VectorXd::Zero(cfg.cond_emb_dim);
              }
            }

            const VectorXd net_before = net;
            adam.step(packed, grad);
            if (!packed.allFinite()) throw DivergenceError("training diverged", it + 1);
            net = packed.head(P);
            if (!replay) {
              embeddings[m] = packed.tail(cfg.cond_emb_dim);
            } else {
              for (int j = 0; j <= m; ++j)
                embeddings[j] = packed.segment(P + j * cfg.cond_emb_dim, cfg.cond_emb_dim);
            }
            if (cfg.method == Method::SI) si_update(dr, task_grad_net, net - net_before);
          }
        } catch (const DivergenceError&) {
          net = net_backup;
          throw;
        }
        wall = clock.elapsed();

        if (cfg.method == Method::SI) si_consolidate(dr, net, cfg.si_xi);
        if (cfg.method == Method::MAS) {
          const auto& demos = train_demos[m];
          const int n_pts = demos.front().length();
          MatrixXd states(d, n_pts * static_cast<int>(demos.size()));
          VectorXd times(n_pts * static_cast<int>(demos.size()));
          int at = 0;
          for (const Trajectory& demo : demos)
            for (int k = 0; k < n_pts; ++k, ++at) {
              states.col(at) = demo.points.row(k).transpose();
              times[at] = k * demo.dt;
            }
          mas_update(dr, lc, FlatParams{net}, states, times, &embeddings[m]);
          dr.theta_star = net;
        }
        if (cfg.method == Method::FT || cfg.method == Method::REP) dr.theta_star = net;
      }
    } catch (const DivergenceError&) {
      result.diverged[m] = true;
      wall = std::max(wall, 1e-8);  // keep the record well-formed
      if (cfg.method == Method::SG && static_cast<int>(sg_models.size()) == m)
        sg_models.push_back(TaskModel{lc, dynamics::init_params(lc, rng), VectorXd{}, -1});
    }

    long param_count = 0;
    if (cfg.method == Method::SG) {
      param_count = static_cast<long>(sg_models.size()) * lc.param_count();
    } else if (cfg.is_hypernet()) {
      param_count = hstate->core.size() + static_cast<long>(m + 1) * cfg.task_emb_dim;
    } else {
      param_count = net.size() + static_cast<long>(m + 1) * cfg.cond_emb_dim;
    }
    long stored = 0;
    if (cfg.method == Method::REP)
      for (int j = 0; j <= m; ++j) stored += ds.tasks[j].bytes();

    for (int j = 0; j <= m; ++j) {
      ensure_ready(j);
      RunRecord rec;
      rec.seed = seed;
      rec.method = method_name(cfg.method);
      rec.learner = cfg.learner == dynamics::LearnerKind::Snode ? "snode" : "node";
      rec.train_task = m;
      rec.eval_task = j;
      rec.wall_time_s = wall;
      rec.param_count = param_count;
      rec.stored_bytes = stored;
      if (result.diverged[m] && j == m) {
        const double inf = std::numeric_limits<double>::infinity();
        rec.dtw.assign(ds.tasks[j].n_demos(), inf);
        if (ds.tasks[j].kind == data::TaskKind::Pose)
          rec.quat_err.assign(ds.tasks[j].n_demos(), inf);
      } else {
        const EvalErrors errs = evaluate_model_on_task(model_for(j), ds.tasks[j], *norm[j]);
        rec.dtw = errs.dtw;
        rec.quat_err = errs.quat;
      }
      log.append(std::move(rec));
    }
  }

  for (int j = 0; j < n_tasks; ++j) {
    result.final_models.push_back(model_for(j));
    result.norm_infos.push_back(norm[j]->info);
  }
  return result;
}

}  // namespace contraj::continual

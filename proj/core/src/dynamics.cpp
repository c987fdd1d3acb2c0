#include "contraj/dynamics.hpp"

#include <cmath>

#include "contraj/errors.hpp"

namespace contraj::dynamics {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ad::UnaryFn act_fn(Activation a) {
  return a == Activation::Softplus ? ad::UnaryFn::Softplus : ad::UnaryFn::Tanh;
}

ad::UnaryFn act_deriv_fn(Activation a) {
  return a == Activation::Softplus ? ad::UnaryFn::Sigmoid : ad::UnaryFn::Tanh;
}

double act_value(Activation a, double x) { return ad::unary_value(act_fn(a), x, 0.0); }
double act_deriv(Activation a, double x) { return ad::unary_deriv(act_fn(a), x, 0.0); }

double softplus(double x) { return ad::unary_value(ad::UnaryFn::Softplus, x, 0.0); }

double smooth_relu(double x, double knee) {
  return ad::unary_value(ad::UnaryFn::SmoothRelu, x, knee);
}
double smooth_relu_deriv(double x, double knee) {
  return ad::unary_deriv(ad::UnaryFn::SmoothRelu, x, knee);
}

}  // namespace

int MlpSpec::param_count() const {
  int n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l)
    n += layer_widths[l + 1] * layer_widths[l] + layer_widths[l + 1];
  return n;
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw ContractError("MlpSpec: need at least input and output width");
  for (int w : layer_widths)
    if (w <= 0) throw ContractError("MlpSpec: widths must be positive");
}

int IcnnSpec::param_count() const {
  const int d = layer_widths.front();
  int n = 0;
  for (std::size_t l = 1; l < layer_widths.size(); ++l) {
    n += layer_widths[l] * d + layer_widths[l];              // input path + bias
    if (l >= 2) n += layer_widths[l] * layer_widths[l - 1];  // z path
  }
  return n;
}

void IcnnSpec::validate() const {
  if (layer_widths.size() < 2) throw ContractError("IcnnSpec: need at least two widths");
  if (layer_widths.back() != 1) throw ContractError("IcnnSpec: output width must be 1");
  for (int w : layer_widths)
    if (w <= 0) throw ContractError("IcnnSpec: widths must be positive");
  if (activation != Activation::Softplus)
    throw ContractError("IcnnSpec: activation must be convex and nondecreasing (softplus)");
}

ParamLayout make_layout(const MlpSpec& f, const IcnnSpec* v) {
  f.validate();
  ParamLayout L;
  int at = 0;
  for (std::size_t l = 0; l + 1 < f.layer_widths.size(); ++l) {
    const int rows = f.layer_widths[l + 1];
    const int cols = f.layer_widths[l];
    L.f_w.push_back({at, rows, cols});
    at += rows * cols;
    L.f_b.push_back({at, rows, 1});
    at += rows;
  }
  L.f_count = at;
  L.v_offset = at;
  if (v != nullptr) {
    v->validate();
    const int d = v->layer_widths.front();
    for (std::size_t l = 1; l < v->layer_widths.size(); ++l) {
      const int rows = v->layer_widths[l];
      L.v_w.push_back({at, rows, d});
      at += rows * d;
      L.v_b.push_back({at, rows, 1});
      at += rows;
      if (l >= 2) {
        const int zc = v->layer_widths[l - 1];
        L.v_u.push_back({at, rows, zc});
        at += rows * zc;
      }
    }
  }
  L.v_count = at - L.v_offset;
  L.total = at;
  return L;
}

void Trajectory::validate() const {
  if (points.rows() < 2) throw ContractError("Trajectory: need at least 2 points");
  if (!points.allFinite()) throw ContractError("Trajectory: non-finite entries");
  if (dt <= 0.0) throw ContractError("Trajectory: dt must be positive");
}

MlpSpec LearnerConfig::f_spec() const {
  MlpSpec s;
  s.layer_widths.push_back(input_dim());
  for (int h : f_hidden) s.layer_widths.push_back(h);
  s.layer_widths.push_back(state_dim);
  s.activation = activation;
  return s;
}

IcnnSpec LearnerConfig::v_spec() const {
  IcnnSpec s;
  s.layer_widths.push_back(input_dim());
  for (int h : v_hidden) s.layer_widths.push_back(h);
  s.layer_widths.push_back(1);
  return s;
}

ParamLayout LearnerConfig::layout() const {
  if (kind == LearnerKind::Node) return make_layout(f_spec(), nullptr);
  const IcnnSpec v = v_spec();
  return make_layout(f_spec(), &v);
}

StableDynamics make_stable_dynamics(const LearnerConfig& cfg, FlatParams params) {
  StableDynamics d;
  d.f_spec = cfg.f_spec();
  d.v_spec = cfg.v_spec();
  d.params = std::move(params);
  d.alpha = cfg.alpha;
  d.grad_floor = cfg.grad_floor;
  d.lyap_eps = cfg.lyap_eps;
  d.sigma_knee = cfg.sigma_knee;
  d.form = cfg.form;
  d.projection_enabled = cfg.projection_enabled;
  d.validate();
  return d;
}

void StableDynamics::validate() const {
  f_spec.validate();
  v_spec.validate();
  if (alpha < 0.0) throw ContractError("StableDynamics: alpha must be nonnegative");
  if (grad_floor <= 0.0 || lyap_eps <= 0.0 || sigma_knee <= 0.0)
    throw ContractError("StableDynamics: guards must be positive");
  if (f_spec.input_width() != v_spec.input_width())
    throw ContractError("StableDynamics: dynamics and Lyapunov nets must share input width");
  const IcnnSpec v = v_spec;
  const ParamLayout L = make_layout(f_spec, &v);
  if (params.values.size() != L.total)
    throw ContractError("StableDynamics: parameter count mismatch");
}

FlatParams init_params(const LearnerConfig& cfg, Rng& rng) {
  const ParamLayout L = cfg.layout();
  FlatParams p;
  p.values.setZero(L.total);
  auto fill_uniform = [&](const ParamLayout::Entry& e, double scale) {
    for (int i = 0; i < e.rows * e.cols; ++i) p.values[e.offset + i] = rng.uniform(-scale, scale);
  };
  for (std::size_t l = 0; l < L.f_w.size(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(L.f_w[l].cols));
    fill_uniform(L.f_w[l], s);
    fill_uniform(L.f_b[l], s);
  }
  for (std::size_t l = 0; l < L.v_w.size(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(L.v_w[l].cols));
    fill_uniform(L.v_w[l], s);
    fill_uniform(L.v_b[l], s);
  }
  // Raw z-path weights start well inside the negative softplus tail so the
  // convex network begins near-affine.
  for (const auto& e : L.v_u)
    for (int i = 0; i < e.rows * e.cols; ++i) p.values[e.offset + i] = rng.uniform(-5.0, -3.0);
  return p;
}

// --- plain operations -------------------------------------------------------

Eigen::VectorXd mlp_forward(const MlpSpec& spec, Eigen::Ref<const Eigen::VectorXd> params,
                            Eigen::Ref<const Eigen::VectorXd> input) {
  spec.validate();
  if (input.size() != spec.input_width()) throw ContractError("mlp_forward: input width mismatch");
  if (params.size() != spec.param_count())
    throw ContractError("mlp_forward: parameter slice size mismatch");
  VectorXd h = input;
  int at = 0;
  const int n_layers = static_cast<int>(spec.layer_widths.size()) - 1;
  for (int l = 0; l < n_layers; ++l) {
    const int rows = spec.layer_widths[l + 1];
    const int cols = spec.layer_widths[l];
    RowMajorMap W(params.data() + at, rows, cols);
    at += rows * cols;
    VectorXd z = W * h + params.segment(at, rows);
    at += rows;
    if (l + 1 < n_layers)
      for (int i = 0; i < rows; ++i) z[i] = act_value(spec.activation, z[i]);
    h = std::move(z);
  }
  return h;
}

namespace {

struct IcnnEval {
  double g = 0.0;
  VectorXd input_grad;
};

/// Raw convex network value (and optionally its input gradient) at y.
/// `flat` is the full parameter vector; entries come from the layout.
IcnnEval icnn_eval(const IcnnSpec& spec, const ParamLayout& L, const VectorXd& flat,
                   const VectorXd& y, bool want_grad) {
  const int n_layers = static_cast<int>(spec.layer_widths.size()) - 1;
  std::vector<VectorXd> pre(n_layers);
  std::vector<VectorXd> z(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const auto& ew = L.v_w[l];
    const auto& eb = L.v_b[l];
    RowMajorMap W(flat.data() + ew.offset, ew.rows, ew.cols);
    VectorXd p = W * y + flat.segment(eb.offset, eb.rows);
    if (l >= 1) {
      const auto& eu = L.v_u[l - 1];
      RowMajorMap Uraw(flat.data() + eu.offset, eu.rows, eu.cols);
      p += Uraw.unaryExpr([](double v) { return softplus(v); }) * z[l - 1];
    }
    pre[l] = p;
    if (l + 1 < n_layers) {
      z[l] = p.unaryExpr([&](double v) { return act_value(spec.activation, v); });
    }
  }
  IcnnEval out;
  out.g = pre[n_layers - 1][0];
  if (!want_grad) return out;

  out.input_grad.setZero(y.size());
  // Reverse pass: adjoint of the scalar output through the affine output
  // layer, then layer by layer through the z path.
  VectorXd delta = VectorXd::Ones(1);
  for (int l = n_layers - 1; l >= 0; --l) {
    VectorXd dpre;
    if (l == n_layers - 1) {
      dpre = delta;
    } else {
      dpre = delta.cwiseProduct(
          pre[l].unaryExpr([&](double v) { return act_deriv(spec.activation, v); }));
    }
    const auto& ew = L.v_w[l];
    RowMajorMap W(flat.data() + ew.offset, ew.rows, ew.cols);
    out.input_grad += W.transpose() * dpre;
    if (l >= 1) {
      const auto& eu = L.v_u[l - 1];
      RowMajorMap Uraw(flat.data() + eu.offset, eu.rows, eu.cols);
      delta = Uraw.unaryExpr([](double v) { return softplus(v); }).transpose() * dpre;
    }
  }
  return out;
}

struct LyapEval {
  double value = 0.0;
  VectorXd grad;  // w.r.t. the augmented (state+time) block only
};

/// V at a full network input whose first aug_dim rows are the augmented
/// state; the base point zeroes those rows and keeps any conditioning rows.
LyapEval lyapunov_eval(const StableDynamics& dyn, const VectorXd& y_full, int aug_dim,
                       bool want_grad) {
  const IcnnSpec& vs = dyn.v_spec;
  const ParamLayout L = make_layout(dyn.f_spec, &vs);
  VectorXd y0 = y_full;
  y0.head(aug_dim).setZero();
  const double g0 = icnn_eval(vs, L, dyn.params.values, y0, false).g;
  const IcnnEval at = icnn_eval(vs, L, dyn.params.values, y_full, want_grad);
  const double ghat = at.g - g0;
  LyapEval out;
  const double sq = y_full.head(aug_dim).squaredNorm();
  out.value = smooth_relu(ghat, dyn.sigma_knee) + dyn.lyap_eps * sq;
  if (want_grad) {
    out.grad = smooth_relu_deriv(ghat, dyn.sigma_knee) * at.input_grad.head(aug_dim) +
               2.0 * dyn.lyap_eps * y_full.head(aug_dim);
  }
  return out;
}

}  // namespace

double icnn_raw_value(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x_aug) {
  if (x_aug.size() != dyn.v_spec.input_width())
    throw ContractError("icnn_raw_value: input width mismatch");
  const IcnnSpec vs = dyn.v_spec;
  const ParamLayout L = make_layout(dyn.f_spec, &vs);
  const VectorXd y = x_aug;
  return icnn_eval(dyn.v_spec, L, dyn.params.values, y, false).g;
}

double lyapunov_value(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x_aug) {
  if (!x_aug.allFinite()) throw ContractError("lyapunov_value: non-finite input");
  if (x_aug.size() != dyn.v_spec.input_width())
    throw ContractError("lyapunov_value: input width mismatch");
  return lyapunov_eval(dyn, x_aug, static_cast<int>(x_aug.size()), false).value;
}

Eigen::VectorXd lyapunov_grad(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x_aug) {
  if (!x_aug.allFinite()) throw ContractError("lyapunov_grad: non-finite input");
  if (x_aug.size() != dyn.v_spec.input_width())
    throw ContractError("lyapunov_grad: input width mismatch");
  return lyapunov_eval(dyn, x_aug, static_cast<int>(x_aug.size()), true).grad;
}

Eigen::VectorXd project_stable(Eigen::Ref<const Eigen::VectorXd> f_hat,
                               Eigen::Ref<const Eigen::VectorXd> grad_v, double v, double alpha,
                               double grad_floor, ProjectionForm form) {
  if (f_hat.size() != grad_v.size()) throw ContractError("project_stable: dimension mismatch");
  if (v < 0.0) throw ContractError("project_stable: V must be nonnegative");
  if (alpha < 0.0) throw ContractError("project_stable: alpha must be nonnegative");
  const double s = grad_v.dot(f_hat);
  const double num = form == ProjectionForm::ReluOutside ? std::max(s, 0.0) + alpha * v
                                                         : std::max(s + alpha * v, 0.0);
  const double den = std::max(grad_v.squaredNorm(), grad_floor);
  return f_hat - grad_v * (num / den);
}

namespace {

Eigen::VectorXd snode_rhs_impl(const StableDynamics& dyn, const VectorXd& x, double t,
                               const VectorXd* cond, RhsStats* stats) {
  const int d = dyn.state_dim();
  const int in = dyn.f_spec.input_width();
  const int cond_dim = cond ? static_cast<int>(cond->size()) : 0;
  const bool time_input = (in - cond_dim) == d + 1;
  const int aug = d + (time_input ? 1 : 0);
  if (aug + cond_dim != in) throw ContractError("snode_rhs: input assembly mismatch");

  VectorXd y(in);
  y.head(d) = x;
  if (time_input) y[d] = t;
  if (cond_dim > 0) y.tail(cond_dim) = *cond;

  const ParamLayout L = [&] {
    const IcnnSpec vs = dyn.v_spec;
    return make_layout(dyn.f_spec, &vs);
  }();
  VectorXd u =
      mlp_forward(dyn.f_spec, dyn.params.values.segment(L.f_offset, L.f_count), y);
  if (!dyn.projection_enabled) return u;

  VectorXd f_aug(aug);
  f_aug.head(d) = u;
  if (time_input) f_aug[d] = 1.0;

  const LyapEval lyap = lyapunov_eval(dyn, y, aug, true);
  if (stats != nullptr) {
    const double s = lyap.grad.dot(f_aug);
    const double num = dyn.form == ProjectionForm::ReluOutside
                           ? std::max(s, 0.0) + dyn.alpha * lyap.value
                           : std::max(s + dyn.alpha * lyap.value, 0.0);
    if (lyap.grad.squaredNorm() < dyn.grad_floor && num > 0.0)
      ++stats->near_singular_projections;
  }
  const VectorXd projected =
      project_stable(f_aug, lyap.grad, lyap.value, dyn.alpha, dyn.grad_floor, dyn.form);
  return projected.head(d);
}

}  // namespace

Eigen::VectorXd snode_rhs(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x, double t,
                          RhsStats* stats) {
  const VectorXd xv = x;
  return snode_rhs_impl(dyn, xv, t, nullptr, stats);
}

Eigen::VectorXd snode_rhs_cond(const StableDynamics& dyn, Eigen::Ref<const Eigen::VectorXd> x,
                               double t, Eigen::Ref<const Eigen::VectorXd> cond, RhsStats* stats) {
  const VectorXd xv = x;
  const VectorXd cv = cond;
  return snode_rhs_impl(dyn, xv, t, &cv, stats);
}

Eigen::VectorXd node_rhs(const MlpSpec& spec, const FlatParams& params,
                         Eigen::Ref<const Eigen::VectorXd> x, double t) {
  const int d = spec.output_width();
  const bool time_input = spec.input_width() == d + 1;
  VectorXd y(spec.input_width());
  y.head(d) = x;
  if (time_input) y[d] = t;
  return mlp_forward(spec, params.values, y);
}

Eigen::VectorXd node_rhs_cond(const MlpSpec& spec, const FlatParams& params,
                              Eigen::Ref<const Eigen::VectorXd> x, double t,
                              Eigen::Ref<const Eigen::VectorXd> cond) {
  const int d = spec.output_width();
  const int cond_dim = static_cast<int>(cond.size());
  const bool time_input = spec.input_width() - cond_dim == d + 1;
  VectorXd y(spec.input_width());
  y.head(d) = x;
  if (time_input) y[d] = t;
  y.tail(cond_dim) = cond;
  return mlp_forward(spec, params.values, y);
}

Trajectory integrate(const RhsFn& rhs, Eigen::Ref<const Eigen::VectorXd> x0,
                     const IntegratorConfig& cfg) {
  if (!x0.allFinite()) throw ContractError("integrate: non-finite start");
  if (cfg.n_steps <= 0 || cfg.dt <= 0.0) throw ContractError("integrate: bad config");
  const int d = static_cast<int>(x0.size());
  Trajectory out;
  out.dt = cfg.dt;
  out.points.resize(cfg.n_steps + 1, d);
  VectorXd x = x0;
  out.points.row(0) = x.transpose();
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * cfg.dt;
    if (cfg.scheme == Scheme::Euler) {
      x += cfg.dt * rhs(x, t);
    } else {
      const VectorXd k1 = rhs(x, t);
      const VectorXd k2 = rhs(x + 0.5 * cfg.dt * k1, t + 0.5 * cfg.dt);
      const VectorXd k3 = rhs(x + 0.5 * cfg.dt * k2, t + 0.5 * cfg.dt);
      const VectorXd k4 = rhs(x + cfg.dt * k3, t + cfg.dt);
      x += (cfg.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) throw DivergenceError("integrate: non-finite state", k + 1);
    out.points.row(k + 1) = x.transpose();
  }
  return out;
}

double trajectory_loss(const Trajectory& pred, const Trajectory& truth) {
  if (pred.points.rows() != truth.points.rows() || pred.points.cols() != truth.points.cols())
    throw ContractError("trajectory_loss: shape mismatch");
  return 0.5 * (pred.points - truth.points).squaredNorm();
}

// --- taped builders ---------------------------------------------------------

namespace {

struct IcnnGraphOut {
  ad::Var g;
  ad::Var grad;
};

/// Raw convex network on the tape; W/B are parameter views, U the
/// softplus-mapped z-path weights. The input gradient is spelled out as
/// first-order ops so backward() yields exact second-order terms.
IcnnGraphOut icnn_apply(ad::Tape& tape, const IcnnSpec& spec, const std::vector<ad::Var>& W,
                        const std::vector<ad::Var>& B, const std::vector<ad::Var>& U, ad::Var Y,
                        bool want_grad) {
  const int n_layers = static_cast<int>(spec.layer_widths.size()) - 1;
  const int n = static_cast<int>(tape.val(Y).cols());
  std::vector<ad::Var> pre(n_layers);
  std::vector<ad::Var> z(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    ad::Var p = tape.colwise_add(tape.matmul(W[l], Y), B[l]);
    if (l >= 1) p = tape.add(p, tape.matmul(U[l - 1], z[l - 1]));
    pre[l] = p;
    if (l + 1 < n_layers) z[l] = tape.unary(p, act_fn(spec.activation));
  }
  IcnnGraphOut out;
  out.g = pre[n_layers - 1];
  if (!want_grad) return out;

  ad::Var delta = tape.constant(Eigen::MatrixXd::Ones(1, n));
  ad::Var gy;
  for (int l = n_layers - 1; l >= 0; --l) {
    ad::Var dpre = l == n_layers - 1
                       ? delta
                       : tape.cwise_mul(delta, tape.unary(pre[l], act_deriv_fn(spec.activation)));
    ad::Var contrib = tape.matmul_tn(W[l], dpre);
    gy = gy.valid() ? tape.add(gy, contrib) : contrib;
    if (l >= 1) delta = tape.matmul_tn(U[l - 1], dpre);
  }
  out.grad = gy;
  return out;
}

ad::Var mlp_apply(ad::Tape& tape, const MlpSpec& spec, const std::vector<ad::Var>& W,
                  const std::vector<ad::Var>& B, ad::Var Y) {
  const int n_layers = static_cast<int>(spec.layer_widths.size()) - 1;
  ad::Var h = Y;
  for (int l = 0; l < n_layers; ++l) {
    h = tape.colwise_add(tape.matmul(W[l], h), B[l]);
    if (l + 1 < n_layers) h = tape.unary(h, act_fn(spec.activation));
  }
  return h;
}

}  // namespace

RhsGraph make_rhs_graph(ad::Tape& tape, const LearnerConfig& cfg, ad::Var flat, ad::Var cond,
                        int ncols) {
  if (cfg.cond_dim > 0 && !cond.valid())
    throw ContractError("make_rhs_graph: conditioned learner needs a cond node");
  RhsGraph g;
  g.cfg = &cfg;
  g.flat = flat;
  g.cond = cond;
  g.n = ncols;

  const ParamLayout L = cfg.layout();

  for (std::size_t l = 0; l < L.f_w.size(); ++l) {
    g.f_w.push_back(tape.reshape_rowmajor(flat, L.f_w[l].offset, L.f_w[l].rows, L.f_w[l].cols));
    g.f_b.push_back(tape.segment(flat, L.f_b[l].offset, L.f_b[l].rows));
  }
  if (cfg.kind == LearnerKind::Snode) {
    for (std::size_t l = 0; l < L.v_w.size(); ++l) {
      g.v_w.push_back(tape.reshape_rowmajor(flat, L.v_w[l].offset, L.v_w[l].rows, L.v_w[l].cols));
      g.v_b.push_back(tape.segment(flat, L.v_b[l].offset, L.v_b[l].rows));
    }
    for (std::size_t l = 0; l < L.v_u.size(); ++l) {
      ad::Var raw =
          tape.reshape_rowmajor(flat, L.v_u[l].offset, L.v_u[l].rows, L.v_u[l].cols);
      g.v_u.push_back(tape.unary(raw, ad::UnaryFn::Softplus));
    }
    if (cfg.projection_enabled) {
      // Lyapunov base point: zero augmented state, conditioning kept.
      ad::Var y0;
      if (cfg.cond_dim > 0) {
        ad::Var zeros = tape.constant(Eigen::MatrixXd::Zero(cfg.aug_dim(), ncols));
        y0 = tape.concat_rows({zeros, cond});
      } else {
        y0 = tape.constant(Eigen::MatrixXd::Zero(cfg.aug_dim(), 1));
      }
      g.g0 = icnn_apply(tape, cfg.v_spec(), g.v_w, g.v_b, g.v_u, y0, false).g;
    }
  }

  return g;
}

ad::Var rhs_velocity(ad::Tape& tape, const RhsGraph& g, ad::Var X, double t) {
  const LearnerConfig& cfg = *g.cfg;
  const int d = cfg.state_dim;
  ad::Var y = X;
  if (cfg.time_input) y = tape.append_const_row(y, t);
  if (cfg.cond_dim > 0) y = tape.concat_rows({y, g.cond});

  ad::Var u = mlp_apply(tape, cfg.f_spec(), g.f_w, g.f_b, y);
  if (cfg.kind == LearnerKind::Node || !cfg.projection_enabled) return u;

  const int aug = cfg.aug_dim();
  ad::Var f_aug = cfg.time_input ? tape.append_const_row(u, 1.0) : u;
  ad::Var y_aug = cfg.cond_dim > 0 ? tape.rows(y, 0, aug) : y;

  const IcnnGraphOut icnn = icnn_apply(tape, cfg.v_spec(), g.v_w, g.v_b, g.v_u, y, true);
  ad::Var g0row = static_cast<int>(tape.val(g.g0).cols()) == g.n ? g.g0 : tape.tile_cols(g.g0, g.n);
  ad::Var ghat = tape.sub(icnn.g, g0row);

  ad::Var v = tape.add(tape.unary(ghat, ad::UnaryFn::SmoothRelu, cfg.sigma_knee),
                       tape.scale(tape.colsum(tape.cwise_mul(y_aug, y_aug)), cfg.lyap_eps));
  ad::Var sigma_p = tape.unary(ghat, ad::UnaryFn::SmoothReluDeriv, cfg.sigma_knee);
  ad::Var w = tape.add(tape.rowbcast_mul(tape.rows(icnn.grad, 0, aug), sigma_p),
                       tape.scale(y_aug, 2.0 * cfg.lyap_eps));

  ad::Var s = tape.colsum(tape.cwise_mul(w, f_aug));
  ad::Var num = cfg.form == ProjectionForm::ReluOutside
                    ? tape.add(tape.relu(s), tape.scale(v, cfg.alpha))
                    : tape.relu(tape.add(s, tape.scale(v, cfg.alpha)));
  ad::Var nsq = tape.colsum(tape.cwise_mul(w, w));
  ad::Var den = tape.cwise_max_scalar(nsq, cfg.grad_floor);
  ad::Var k = tape.cwise_mul(num, tape.unary(den, ad::UnaryFn::Recip));
  ad::Var f_proj = tape.sub(f_aug, tape.rowbcast_mul(w, k));
  return tape.rows(f_proj, 0, d);
}

std::vector<Eigen::MatrixXd> batch_targets(const std::vector<Trajectory>& batch) {
  if (batch.empty()) throw ContractError("batch_targets: empty batch");
  const int T = batch.front().length();
  const int d = batch.front().dim();
  for (const Trajectory& tr : batch) {
    tr.validate();
    if (tr.length() != T || tr.dim() != d)
      throw ContractError("batch_targets: demonstrations must share T and d");
  }
  std::vector<Eigen::MatrixXd> targets(T, Eigen::MatrixXd(d, batch.size()));
  for (int k = 0; k < T; ++k)
    for (std::size_t j = 0; j < batch.size(); ++j)
      targets[k].col(j) = batch[j].points.row(k).transpose();
  return targets;
}

ad::Var rollout_loss(ad::Tape& tape, const RhsGraph& g,
                     const std::vector<Eigen::MatrixXd>& step_targets,
                     const IntegratorConfig& cfg) {
  if (static_cast<int>(step_targets.size()) != cfg.n_steps + 1)
    throw ContractError("rollout_loss: targets must have n_steps+1 entries");
  const int n = static_cast<int>(step_targets.front().cols());
  ad::Var x = tape.constant(step_targets.front());
  ad::Var acc;
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * cfg.dt;
    if (cfg.scheme == Scheme::Euler) {
      x = tape.add(x, tape.scale(rhs_velocity(tape, g, x, t), cfg.dt));
    } else {
      ad::Var k1 = rhs_velocity(tape, g, x, t);
      ad::Var k2 = rhs_velocity(tape, g, tape.add(x, tape.scale(k1, 0.5 * cfg.dt)), t + 0.5 * cfg.dt);
      ad::Var k3 = rhs_velocity(tape, g, tape.add(x, tape.scale(k2, 0.5 * cfg.dt)), t + 0.5 * cfg.dt);
      ad::Var k4 = rhs_velocity(tape, g, tape.add(x, tape.scale(k3, cfg.dt)), t + cfg.dt);
      ad::Var sum = tape.add(tape.add(k1, k4), tape.scale(tape.add(k2, k3), 2.0));
      x = tape.add(x, tape.scale(sum, cfg.dt / 6.0));
    }
    if (!tape.val(x).allFinite())
      throw DivergenceError("rollout_loss: non-finite state", k + 1);
    ad::Var contrib = tape.sumsq_diff(x, step_targets[k + 1]);
    acc = acc.valid() ? tape.add(acc, contrib) : contrib;
  }
  return tape.scale(acc, 0.5 / n);
}

LossGrads loss_and_param_grads(const LearnerConfig& cfg, const FlatParams& params,
                               const std::vector<Trajectory>& batch,
                               const IntegratorConfig& icfg) {
  if (params.values.size() != cfg.param_count())
    throw ContractError("loss_and_param_grads: parameter count mismatch");
  ad::Tape tape;
  ad::Var flat = tape.leaf(params.values);
  RhsGraph g = make_rhs_graph(tape, cfg, flat, ad::Var{}, static_cast<int>(batch.size()));
  const std::vector<Eigen::MatrixXd> targets = batch_targets(batch);
  ad::Var loss = rollout_loss(tape, g, targets, icfg);
  tape.backward(loss);
  LossGrads out;
  out.loss = tape.val(loss)(0, 0);
  const Eigen::MatrixXd& gm = tape.grad(flat);
  out.grads = gm.size() > 0 ? Eigen::VectorXd(gm.col(0))
                            : Eigen::VectorXd::Zero(params.values.size());
  return out;
}

}  // namespace contraj::dynamics

#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "contraj/dynamics.hpp"
#include "contraj/errors.hpp"
#include "contraj/rng.hpp"
#include "fd_check.hpp"

using namespace contraj;
using namespace contraj::dynamics;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using contraj::testing::finite_diff;
using contraj::testing::max_rel_error;

namespace {

double sp(double x) { return std::log1p(std::exp(x)); }

LearnerConfig small_snode(int d = 2, double alpha = 0.0) {
  LearnerConfig cfg;
  cfg.kind = LearnerKind::Snode;
  cfg.state_dim = d;
  cfg.f_hidden = {8};
  cfg.v_hidden = {6};
  cfg.alpha = alpha;
  return cfg;
}

/// Independent evaluation of the positive-definite Lyapunov construction,
/// written against the documented flat layout with plain loops.
double reference_lyapunov(const LearnerConfig& cfg, const VectorXd& flat, const VectorXd& y) {
  const int D = cfg.input_dim();
  const std::vector<int> widths = [&] {
    std::vector<int> w{D};
    for (int h : cfg.v_hidden) w.push_back(h);
    w.push_back(1);
    return w;
  }();
  // Offset of the Lyapunov section: full dynamics net first.
  int off = 0;
  {
    std::vector<int> fw{D};
    for (int h : cfg.f_hidden) fw.push_back(h);
    fw.push_back(cfg.state_dim);
    for (std::size_t l = 0; l + 1 < fw.size(); ++l) off += fw[l + 1] * fw[l] + fw[l + 1];
  }
  auto raw = [&](const VectorXd& input) {
    int at = off;
    std::vector<double> z;
    std::vector<double> cur;
    for (std::size_t l = 1; l < widths.size(); ++l) {
      const int rows = widths[l];
      cur.assign(rows, 0.0);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < D; ++j) cur[i] += flat[at + i * D + j] * input[j];
      at += rows * D;
      for (int i = 0; i < rows; ++i) cur[i] += flat[at + i];
      at += rows;
      if (l >= 2) {
        const int zc = widths[l - 1];
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < zc; ++j) cur[i] += sp(flat[at + i * zc + j]) * z[j];
        at += rows * zc;
      }
      if (l + 1 < widths.size()) {
        z.resize(rows);
        for (int i = 0; i < rows; ++i) z[i] = sp(cur[i]);
      }
    }
    return cur[0];
  };
  const double ghat = raw(y) - raw(VectorXd::Zero(D));
  const double knee = cfg.sigma_knee;
  double sigma = 0.0;
  if (ghat > 0.0) sigma = ghat >= knee ? ghat - 0.5 * knee : ghat * ghat / (2.0 * knee);
  return sigma + cfg.lyap_eps * y.squaredNorm();
}

}  // namespace

TEST_CASE("mlp_forward basics") {
  MlpSpec spec;
  spec.layer_widths = {3, 4, 2};
  VectorXd zeros = VectorXd::Zero(spec.param_count());

  SUBCASE("zero weights and biases give the zero vector") {
    const VectorXd out = mlp_forward(spec, zeros, VectorXd::Constant(3, 1.5));
    CHECK(out.norm() == 0.0);
  }

  SUBCASE("identity-initialized single affine layer is the identity") {
    MlpSpec id;
    id.layer_widths = {3, 3};
    VectorXd p = VectorXd::Zero(id.param_count());
    p[0] = p[4] = p[8] = 1.0;  // I, row-major
    VectorXd v(3);
    v << 0.3, -1.2, 2.0;
    CHECK((mlp_forward(id, p, v) - v).norm() == 0.0);
  }

  SUBCASE("2-2-1 net with hand-set weights") {
    MlpSpec s;
    s.layer_widths = {2, 2, 1};
    VectorXd p(s.param_count());
    // W0 = [[1, 2], [-1, 0.5]], b0 = [0.1, -0.2], W1 = [0.3, -0.7], b1 = 0.05
    p << 1.0, 2.0, -1.0, 0.5, 0.1, -0.2, 0.3, -0.7, 0.05;
    VectorXd in(2);
    in << 1.0, 0.0;
    const double expected = 0.3 * sp(1.1) - 0.7 * sp(-1.2) + 0.05;
    CHECK(mlp_forward(s, p, in)[0] == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("dimension mismatch is a contract violation") {
    CHECK_THROWS_AS(mlp_forward(spec, zeros, VectorXd::Zero(2)), ContractError);
  }
}

TEST_CASE("lyapunov function is positive definite with V(0)=0") {
  const LearnerConfig cfg = small_snode();
  Rng rng(3);
  StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
  const int D = cfg.input_dim();

  CHECK(lyapunov_value(dyn, VectorXd::Zero(D)) == 0.0);
  for (int i = 0; i < 50; ++i) {
    const VectorXd y = rng.uniform_vector(D, -2.0, 2.0);
    if (y.norm() < 1e-12) continue;
    const double v = lyapunov_value(dyn, y);
    CHECK(v > 0.0);
    CHECK(v >= cfg.lyap_eps * y.squaredNorm() - 1e-15);
  }
}

TEST_CASE("lyapunov value matches an independent re-implementation") {
  const LearnerConfig cfg = small_snode();
  Rng rng(5);
  const FlatParams params = init_params(cfg, rng);
  StableDynamics dyn = make_stable_dynamics(cfg, params);
  VectorXd y = VectorXd::Zero(cfg.input_dim());
  y[0] = 1.0;
  CHECK(lyapunov_value(dyn, y) ==
        doctest::Approx(reference_lyapunov(cfg, params.values, y)).epsilon(1e-12));
  for (int i = 0; i < 20; ++i) {
    const VectorXd yr = rng.uniform_vector(cfg.input_dim(), -1.5, 1.5);
    CHECK(lyapunov_value(dyn, yr) ==
          doctest::Approx(reference_lyapunov(cfg, params.values, yr)).epsilon(1e-11));
  }
}

TEST_CASE("lyapunov gradient") {
  const LearnerConfig cfg = small_snode();
  Rng rng(7);
  StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
  const int D = cfg.input_dim();

  SUBCASE("zero at the origin") {
    CHECK(lyapunov_grad(dyn, VectorXd::Zero(D)).norm() == 0.0);
  }

  SUBCASE("matches central finite differences") {
    for (int i = 0; i < 10; ++i) {
      const VectorXd y = rng.uniform_vector(D, -2.0, 2.0);
      const VectorXd analytic = lyapunov_grad(dyn, y);
      const VectorXd fd = finite_diff(
          [&](const VectorXd& yy) { return lyapunov_value(dyn, yy); }, y, 1e-5);
      CHECK(max_rel_error(analytic, fd) < 1e-5);
    }
  }

  SUBCASE("pure quadratic when the convex net is constant") {
    StableDynamics flat_dyn = dyn;
    const IcnnSpec vs = flat_dyn.v_spec;
    const ParamLayout L = make_layout(flat_dyn.f_spec, &vs);
    flat_dyn.params.values.segment(L.v_offset, L.v_count).setZero();
    const VectorXd y = rng.uniform_vector(D, -1.0, 1.0);
    const VectorXd g = lyapunov_grad(flat_dyn, y);
    CHECK((g - 2.0 * flat_dyn.lyap_eps * y).norm() < 1e-15);
  }
}

TEST_CASE("raw convex network is convex in its input") {
  const LearnerConfig cfg = small_snode();
  Rng rng(9);
  StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
  const int D = cfg.input_dim();
  for (int i = 0; i < 200; ++i) {
    const VectorXd a = rng.uniform_vector(D, -3.0, 3.0);
    const VectorXd b = rng.uniform_vector(D, -3.0, 3.0);
    const double lam = rng.uniform();
    const double lhs = icnn_raw_value(dyn, (lam * a + (1.0 - lam) * b).eval());
    const double rhs = lam * icnn_raw_value(dyn, a) + (1.0 - lam) * icnn_raw_value(dyn, b);
    CHECK(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("project_stable hand cases") {
  SUBCASE("inactive when descent already holds and alpha*V = 0") {
    VectorXd f(2), g(2);
    f << 1.0, -2.0;
    g << 0.0, 1.0;  // g.f = -2 <= 0
    const VectorXd out = project_stable(f, g, 0.0, 1.0, 1e-8);
    CHECK((out - f).norm() == 0.0);
  }

  SUBCASE("gradV=[0,2], f=[3,1], alpha=1, V=2 gives [3,-1]") {
    VectorXd f(2), g(2);
    f << 3.0, 1.0;
    g << 0.0, 2.0;
    const VectorXd out = project_stable(f, g, 2.0, 1.0, 1e-8);
    CHECK(out[0] == doctest::Approx(3.0));
    CHECK(out[1] == doctest::Approx(-1.0));
    CHECK(g.dot(out) == doctest::Approx(-2.0));  // equals -alpha*V
  }

  SUBCASE("gradV=[0,1], f=[1,1], alpha=0, V=0 gives [1,0]") {
    VectorXd f(2), g(2);
    f << 1.0, 1.0;
    g << 0.0, 1.0;
    const VectorXd out = project_stable(f, g, 0.0, 0.0, 1e-8);
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(0.0));
  }
}

TEST_CASE("snode_rhs behavior") {
  Rng rng(21);

  SUBCASE("projection inactive at the origin at t=0") {
    const LearnerConfig cfg = small_snode(2, 1.0);
    StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
    VectorXd y0 = VectorXd::Zero(cfg.input_dim());
    const VectorXd u = mlp_forward(
        dyn.f_spec, dyn.params.values.segment(0, dyn.f_spec.param_count()), y0);
    const VectorXd out = snode_rhs(dyn, VectorXd::Zero(2), 0.0);
    CHECK((out - u).norm() == 0.0);
  }

  SUBCASE("augmented decrease condition holds at random states") {
    for (double alpha : {0.0, 0.1, 1.0}) {
      const LearnerConfig cfg = small_snode(2, alpha);
      StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
      for (int i = 0; i < 100; ++i) {
        const VectorXd x = rng.uniform_vector(2, -2.0, 2.0);
        const double t = rng.uniform();
        VectorXd y(3);
        y << x, t;
        const VectorXd w = lyapunov_grad(dyn, y);
        if (w.squaredNorm() < dyn.grad_floor) continue;
        const double v = lyapunov_value(dyn, y);
        VectorXd f_aug(3);
        f_aug.head(2) = mlp_forward(
            dyn.f_spec, dyn.params.values.segment(0, dyn.f_spec.param_count()), y);
        f_aug[2] = 1.0;
        const VectorXd proj = project_stable(f_aug, w, v, alpha, dyn.grad_floor);
        CHECK(w.dot(proj) <= -alpha * v + 1e-9);
        // The state block of the projected field is what snode_rhs returns.
        const VectorXd out = snode_rhs(dyn, x, t);
        CHECK((out - proj.head(2)).norm() == 0.0);
      }
    }
  }

  SUBCASE("alpha=0 and descent direction leaves the nominal field untouched") {
    const LearnerConfig cfg = small_snode(2, 0.0);
    StableDynamics dyn = make_stable_dynamics(cfg, init_params(cfg, rng));
    int found = 0;
    for (int i = 0; i < 300 && found < 5; ++i) {
      const VectorXd x = rng.uniform_vector(2, -2.0, 2.0);
      const double t = rng.uniform();
      VectorXd y(3);
      y << x, t;
      VectorXd f_aug(3);
      f_aug.head(2) = mlp_forward(
          dyn.f_spec, dyn.params.values.segment(0, dyn.f_spec.param_count()), y);
      f_aug[2] = 1.0;
      if (lyapunov_grad(dyn, y).dot(f_aug) >= 0.0) continue;
      ++found;
      const VectorXd out = snode_rhs(dyn, x, t);
      CHECK((out - f_aug.head(2)).norm() == 0.0);
    }
    CHECK(found > 0);
  }

  SUBCASE("disabling the projection reduces to node_rhs bit for bit") {
    LearnerConfig cfg = small_snode(2, 0.5);
    Rng r2(33);
    const FlatParams params = init_params(cfg, r2);
    StableDynamics dyn = make_stable_dynamics(cfg, params);
    dyn.projection_enabled = false;
    MlpSpec node_spec = cfg.f_spec();
    FlatParams node_params{params.values.segment(0, node_spec.param_count()).eval()};
    for (int i = 0; i < 20; ++i) {
      const VectorXd x = r2.uniform_vector(2, -2.0, 2.0);
      const double t = r2.uniform();
      const VectorXd a = snode_rhs(dyn, x, t);
      const VectorXd b = node_rhs(node_spec, node_params, x, t);
      CHECK((a - b).norm() == 0.0);
    }
  }
}

TEST_CASE("node_rhs basics") {
  MlpSpec spec;
  spec.layer_widths = {3, 4, 2};

  SUBCASE("zero parameters give zero velocity") {
    FlatParams p{VectorXd::Zero(spec.param_count())};
    VectorXd x(2);
    x << 1.0, -1.0;
    CHECK(node_rhs(spec, p, x, 0.7).norm() == 0.0);
  }

  SUBCASE("hand-set two-layer net at (x=[1,0], t=0.5)") {
    MlpSpec s;
    s.layer_widths = {3, 2, 2};
    VectorXd p(s.param_count());
    // W0 = [[1,0,2],[0,1,-2]], b0 = [0,0.5], W1 = [[1,1],[0.5,-0.5]], b1 = [0.1,0]
    p << 1, 0, 2, 0, 1, -2, 0, 0.5, 1, 1, 0.5, -0.5, 0.1, 0;
    VectorXd x(2);
    x << 1.0, 0.0;
    const double h0 = sp(1.0 + 2.0 * 0.5);
    const double h1 = sp(0.0 - 2.0 * 0.5 + 0.5);
    const VectorXd out = node_rhs(s, FlatParams{p}, x, 0.5);
    CHECK(out[0] == doctest::Approx(h0 + h1 + 0.1).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.5 * h0 - 0.5 * h1).epsilon(1e-12));
  }
}

TEST_CASE("integrate") {
  SUBCASE("zero field keeps the start") {
    IntegratorConfig cfg{5, 0.1, Scheme::Euler};
    VectorXd x0(2);
    x0 << 1.0, 2.0;
    const Trajectory tr = integrate(
        [](const VectorXd& x, double) { return VectorXd::Zero(x.size()).eval(); }, x0, cfg);
    CHECK(tr.length() == 6);
    for (int k = 0; k < tr.length(); ++k) CHECK((tr.points.row(k).transpose() - x0).norm() == 0.0);
  }

  SUBCASE("Euler on dx/dt = -x") {
    IntegratorConfig cfg{2, 0.1, Scheme::Euler};
    VectorXd x0(1);
    x0 << 1.0;
    const Trajectory tr =
        integrate([](const VectorXd& x, double) { return (-x).eval(); }, x0, cfg);
    CHECK(tr.points(1, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(tr.points(2, 0) == doctest::Approx(0.81).epsilon(1e-15));
  }

  SUBCASE("constant unit field") {
    IntegratorConfig cfg{2, 0.5, Scheme::Euler};
    VectorXd x0(1);
    x0 << 0.0;
    const Trajectory tr = integrate(
        [](const VectorXd& x, double) { return VectorXd::Ones(x.size()).eval(); }, x0, cfg);
    CHECK(tr.points(0, 0) == 0.0);
    CHECK(tr.points(1, 0) == 0.5);
    CHECK(tr.points(2, 0) == 1.0);
  }

  SUBCASE("divergence carries the step index") {
    IntegratorConfig cfg{10, 0.1, Scheme::Euler};
    VectorXd x0(1);
    x0 << 1.0;
    int calls = 0;
    auto rhs = [&calls](const VectorXd& x, double) {
      ++calls;
      if (calls >= 3) return VectorXd::Constant(x.size(), std::nan("")).eval();
      return VectorXd::Zero(x.size()).eval();
    };
    try {
      integrate(rhs, x0, cfg);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.step() == 3);
    }
  }

  SUBCASE("rk4 matches the exponential closely") {
    IntegratorConfig cfg{10, 0.1, Scheme::Rk4};
    VectorXd x0(1);
    x0 << 1.0;
    const Trajectory tr =
        integrate([](const VectorXd& x, double) { return (-x).eval(); }, x0, cfg);
    CHECK(tr.points(10, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-5));
  }
}

TEST_CASE("trajectory_loss") {
  Trajectory a{MatrixXd::Zero(2, 1), 1.0};
  Trajectory b{MatrixXd::Ones(2, 1), 1.0};
  CHECK(trajectory_loss(a, a) == 0.0);
  CHECK(trajectory_loss(b, a) == doctest::Approx(1.0));
  Trajectory c{2.0 * MatrixXd::Ones(2, 1), 1.0};
  CHECK(trajectory_loss(c, a) == doctest::Approx(4.0 * trajectory_loss(b, a)));
  Trajectory wrong{MatrixXd::Zero(3, 1), 1.0};
  CHECK_THROWS_AS(trajectory_loss(wrong, a), ContractError);
}

namespace {

double plain_batch_loss(const LearnerConfig& cfg, const VectorXd& flat,
                        const std::vector<Trajectory>& batch, const IntegratorConfig& icfg) {
  StableDynamics dyn = make_stable_dynamics(cfg, FlatParams{flat});
  double total = 0.0;
  for (const Trajectory& demo : batch) {
    const Trajectory pred = integrate(
        [&](const VectorXd& x, double t) { return snode_rhs(dyn, x, t); },
        demo.points.row(0).transpose(), icfg);
    total += trajectory_loss(pred, demo);
  }
  return total / static_cast<double>(batch.size());
}

std::vector<Trajectory> toy_batch(Rng& rng, int n_demos, int T, int d, double dt) {
  std::vector<Trajectory> batch;
  for (int j = 0; j < n_demos; ++j) {
    Trajectory tr;
    tr.dt = dt;
    tr.points.resize(T, d);
    VectorXd x = rng.uniform_vector(d, -1.0, 1.0);
    for (int k = 0; k < T; ++k) {
      tr.points.row(k) = x.transpose() * (1.0 - static_cast<double>(k) / (T - 1));
    }
    batch.push_back(std::move(tr));
  }
  return batch;
}

}  // namespace

TEST_CASE("parameter gradients through the unrolled rollout") {
  SUBCASE("stationary at an exact fit") {
    LearnerConfig cfg = small_snode(2, 0.0);
    FlatParams zeros{VectorXd::Zero(cfg.param_count())};
    Trajectory constant{MatrixXd::Zero(5, 2), 0.25};
    IntegratorConfig icfg{4, 0.25, Scheme::Euler};
    const LossGrads lg = loss_and_param_grads(cfg, zeros, {constant}, icfg);
    CHECK(lg.loss == 0.0);
    CHECK(lg.grads.norm() < 1e-8);
  }

  SUBCASE("matches central finite differences of the plain-path loss") {
    for (double alpha : {0.0, 0.5}) {
      LearnerConfig cfg = small_snode(2, alpha);
      Rng rng(55);
      const FlatParams params = init_params(cfg, rng);
      const std::vector<Trajectory> batch = toy_batch(rng, 2, 5, 2, 0.25);
      IntegratorConfig icfg{4, 0.25, Scheme::Euler};

      const LossGrads lg = loss_and_param_grads(cfg, params, batch, icfg);
      CHECK(lg.loss == doctest::Approx(plain_batch_loss(cfg, params.values, batch, icfg))
                           .epsilon(1e-12));
      const VectorXd fd = finite_diff(
          [&](const VectorXd& p) { return plain_batch_loss(cfg, p, batch, icfg); },
          params.values, 1e-5);
      CHECK(max_rel_error(lg.grads, fd) < 1e-4);
    }
  }

  SUBCASE("gradient checks hold for rk4 and for the relu-inside form") {
    LearnerConfig cfg = small_snode(2, 0.3);
    cfg.form = ProjectionForm::ReluInside;
    Rng rng(77);
    const FlatParams params = init_params(cfg, rng);
    const std::vector<Trajectory> batch = toy_batch(rng, 2, 4, 2, 1.0 / 3.0);
    IntegratorConfig icfg{3, 1.0 / 3.0, Scheme::Rk4};
    const LossGrads lg = loss_and_param_grads(cfg, params, batch, icfg);
    const VectorXd fd = finite_diff(
        [&](const VectorXd& p) { return plain_batch_loss(cfg, p, batch, icfg); }, params.values,
        1e-5);
    CHECK(max_rel_error(lg.grads, fd) < 1e-4);
  }

  SUBCASE("a small descent step decreases the loss") {
    LearnerConfig cfg = small_snode(2, 0.0);
    Rng rng(91);
    FlatParams params = init_params(cfg, rng);
    const std::vector<Trajectory> batch = toy_batch(rng, 3, 6, 2, 0.2);
    IntegratorConfig icfg{5, 0.2, Scheme::Euler};
    const LossGrads lg = loss_and_param_grads(cfg, params, batch, icfg);
    params.values -= 1e-3 * lg.grads;
    const LossGrads after = loss_and_param_grads(cfg, params, batch, icfg);
    CHECK(after.loss < lg.loss);
  }

  SUBCASE("node learner gradients match finite differences") {
    LearnerConfig cfg = small_snode(2, 0.0);
    cfg.kind = LearnerKind::Node;
    Rng rng(101);
    const FlatParams params = init_params(cfg, rng);
    const std::vector<Trajectory> batch = toy_batch(rng, 2, 5, 2, 0.25);
    IntegratorConfig icfg{4, 0.25, Scheme::Euler};
    const LossGrads lg = loss_and_param_grads(cfg, params, batch, icfg);
    auto plain_node_loss = [&](const VectorXd& p) {
      const MlpSpec spec = cfg.f_spec();
      double total = 0.0;
      for (const Trajectory& demo : batch) {
        const Trajectory pred = integrate(
            [&](const VectorXd& x, double t) { return node_rhs(spec, FlatParams{p}, x, t); },
            demo.points.row(0).transpose(), icfg);
        total += trajectory_loss(pred, demo);
      }
      return total / static_cast<double>(batch.size());
    };
    const VectorXd fd = finite_diff(plain_node_loss, params.values, 1e-5);
    CHECK(max_rel_error(lg.grads, fd) < 1e-4);
  }
}

TEST_CASE("taped rollout values equal the plain integrator") {
  LearnerConfig cfg = small_snode(2, 0.2);
  Rng rng(111);
  const FlatParams params = init_params(cfg, rng);
  const std::vector<Trajectory> batch = toy_batch(rng, 3, 8, 2, 1.0 / 7.0);
  IntegratorConfig icfg{7, 1.0 / 7.0, Scheme::Euler};
  const LossGrads lg = loss_and_param_grads(cfg, params, batch, icfg);
  CHECK(lg.loss ==
        doctest::Approx(plain_batch_loss(cfg, params.values, batch, icfg)).epsilon(1e-12));
}

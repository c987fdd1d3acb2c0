#include <doctest.h>

#include <cmath>

#include "contraj/errors.hpp"
#include "contraj/hypernet.hpp"
#include "fd_check.hpp"

using namespace contraj;
using namespace contraj::hypernet;
using dynamics::FlatParams;
using dynamics::IntegratorConfig;
using dynamics::LearnerConfig;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using contraj::testing::finite_diff;
using contraj::testing::max_rel_error;

namespace {

LearnerConfig tiny_target() {
  LearnerConfig cfg;
  cfg.kind = dynamics::LearnerKind::Snode;
  cfg.state_dim = 1;
  cfg.f_hidden = {4};
  cfg.v_hidden = {4};
  return cfg;
}

HypernetSpec tiny_chn(int chunk_size = 16) {
  HypernetSpec spec;
  spec.mode = HypernetMode::Chunked;
  spec.hidden_widths = {12};
  spec.task_emb_dim = 4;
  spec.chunk_size = chunk_size;
  spec.chunk_emb_dim = 4;
  spec.target = tiny_target();
  return spec;
}

HypernetSpec tiny_hn() {
  HypernetSpec spec;
  spec.mode = HypernetMode::Full;
  spec.hidden_widths = {12};
  spec.task_emb_dim = 4;
  spec.target = tiny_target();
  return spec;
}

/// Line from 1 to 0 in one dimension, as step targets for a 2-demo batch.
std::vector<MatrixXd> line_targets(int T) {
  std::vector<MatrixXd> targets(T, MatrixXd(1, 2));
  for (int k = 0; k < T; ++k) {
    const double tau = static_cast<double>(k) / (T - 1);
    targets[k](0, 0) = 1.0 - tau;
    targets[k](0, 1) = 0.8 * (1.0 - tau);
  }
  return targets;
}

}  // namespace

TEST_CASE("generation basics") {
  Rng rng(3);

  SUBCASE("zero generator emits all-zero target parameters") {
    HypernetState st = init_hypernet(tiny_hn(), rng);
    st.core.setZero();
    const FlatParams p = hn_forward(st, VectorXd::Ones(4));
    CHECK(p.values.norm() == 0.0);
    CHECK(p.values.size() == tiny_target().param_count());
  }

  SUBCASE("generation is a pure function of core and embedding") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    const VectorXd e = rng.uniform_vector(4, -1, 1);
    const FlatParams a = chn_forward(st, e);
    const FlatParams b = chn_forward(st, e);
    CHECK((a.values - b.values).norm() == 0.0);
  }

  SUBCASE("mode dispatch is enforced") {
    HypernetState full = init_hypernet(tiny_hn(), rng);
    HypernetState chunked = init_hypernet(tiny_chn(), rng);
    CHECK_THROWS_AS(chn_forward(full, VectorXd::Zero(4)), ContractError);
    CHECK_THROWS_AS(hn_forward(chunked, VectorXd::Zero(4)), ContractError);
  }

  SUBCASE("small full generator matches a hand evaluation") {
    HypernetSpec spec;
    spec.mode = HypernetMode::Full;
    spec.hidden_widths = {};  // single affine layer: P = W e + b
    spec.task_emb_dim = 3;
    spec.target = tiny_target();
    Rng r2(5);
    HypernetState st = init_hypernet(spec, r2);
    const int P = spec.target_param_count();
    VectorXd e(3);
    e << 1.0, -0.5, 2.0;
    const FlatParams out = hn_forward(st, e);
    for (int i = 0; i < P; ++i) {
      double expect = st.core[P * 3 + i];  // bias after row-major W
      for (int j = 0; j < 3; ++j) expect += st.core[i * 3 + j] * e[j];
      CHECK(out.values[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("chunked assembly") {
  Rng rng(7);

  SUBCASE("chunk count is the ceiling of target/chunk and truncation keeps the head") {
    HypernetSpec spec = tiny_chn(4);
    const int P = spec.target_param_count();
    CHECK(spec.n_chunks() == (P + 3) / 4);

    HypernetState st = init_hypernet(spec, rng);
    const VectorXd e = rng.uniform_vector(4, -1, 1);
    const FlatParams out = chn_forward(st, e);
    REQUIRE(out.values.size() == P);

    // Re-assemble by hand from per-chunk forwards.
    const dynamics::MlpSpec ms = spec.mlp_spec();
    const int base = spec.mlp_param_count();
    VectorXd manual(spec.n_chunks() * spec.chunk_size);
    for (int i = 0; i < spec.n_chunks(); ++i) {
      VectorXd in(8);
      in.head(4) = e;
      in.tail(4) = st.core.segment(base + 4 * i, 4);
      manual.segment(4 * i, 4) =
          dynamics::mlp_forward(ms, st.core.segment(0, ms.param_count()), in);
    }
    CHECK((out.values - manual.head(P)).norm() == 0.0);
  }

  SUBCASE("an exact multiple needs no truncation") {
    HypernetSpec spec = tiny_chn(1);  // chunk size 1: n_chunks == P exactly
    CHECK(spec.n_chunks() * spec.chunk_size == spec.target_param_count());
  }

  SUBCASE("permuting chunk embeddings changes the output") {
    HypernetSpec spec = tiny_chn(16);
    REQUIRE(spec.n_chunks() >= 2);
    HypernetState st = init_hypernet(spec, rng);
    const VectorXd e = rng.uniform_vector(4, -1, 1);
    const FlatParams a = chn_forward(st, e);
    const int base = spec.mlp_param_count();
    // Swap the first two chunk embeddings.
    VectorXd tmp = st.core.segment(base, 4);
    st.core.segment(base, 4) = st.core.segment(base + 4, 4);
    st.core.segment(base + 4, 4) = tmp;
    const FlatParams b = chn_forward(st, e);
    CHECK((a.values - b.values).norm() > 0.0);
  }
}

TEST_CASE("generator graph agrees with the plain forward and its gradients check out") {
  for (bool chunked : {false, true}) {
    HypernetSpec spec = chunked ? tiny_chn(8) : tiny_hn();
    Rng rng(11);
    HypernetState st = init_hypernet(spec, rng);
    const VectorXd e = rng.uniform_vector(spec.task_emb_dim, -1, 1);

    ad::Tape tape;
    ad::Var core = tape.leaf(st.core);
    ad::Var emb = tape.leaf(e);
    ad::Var gen = generator_graph(tape, spec, core, emb);
    CHECK((tape.val(gen).col(0) - generate(st, e).values).norm() < 1e-13);

    ad::Var loss = tape.sumsq(gen);
    tape.backward(loss);
    const VectorXd analytic = tape.grad(core).col(0);
    const VectorXd fd = finite_diff(
        [&](const VectorXd& c) { return generate_from(spec, c, e).values.squaredNorm(); },
        st.core, 1e-6);
    CHECK(max_rel_error(analytic, fd) < 2e-4);
  }
}

TEST_CASE("task_loss") {
  Rng rng(13);
  const std::vector<MatrixXd> targets = line_targets(5);
  IntegratorConfig icfg{4, 0.25, dynamics::Scheme::Euler};

  SUBCASE("forced-constant generator matches the directly parameterized loss") {
    HypernetSpec spec = tiny_hn();
    HypernetState st = init_hypernet(spec, rng);
    Rng r2(17);
    const FlatParams direct = dynamics::init_params(spec.target, r2);
    // Zero every generator weight and set the output bias to the wanted
    // parameters: f(e, h) == direct for every e.
    st.core.setZero();
    const dynamics::MlpSpec ms = spec.mlp_spec();
    const int n_layers = static_cast<int>(ms.layer_widths.size()) - 1;
    int at = 0;
    for (int l = 0; l + 1 < n_layers; ++l)
      at += ms.layer_widths[l + 1] * ms.layer_widths[l] + ms.layer_widths[l + 1];
    at += ms.layer_widths[n_layers] * ms.layer_widths[n_layers - 1];
    st.core.segment(at, direct.values.size()) = direct.values;

    const VectorXd e = rng.uniform_vector(4, -1, 1);
    CHECK((generate(st, e).values - direct.values).norm() < 1e-12);
    std::vector<dynamics::Trajectory> batch;
    for (int j = 0; j < 2; ++j) {
      dynamics::Trajectory tr;
      tr.dt = icfg.dt;
      tr.points.resize(5, 1);
      for (int k = 0; k < 5; ++k) tr.points(k, 0) = targets[k](0, j);
      batch.push_back(tr);
    }
    const double hl = task_loss(st, e, targets, icfg);
    const auto lg = dynamics::loss_and_param_grads(spec.target, direct, batch, icfg);
    CHECK(hl == doctest::Approx(lg.loss).epsilon(1e-12));
  }

  SUBCASE("perfect generation of a zero field on a constant demo gives zero loss") {
    HypernetSpec spec = tiny_hn();
    HypernetState st = init_hypernet(spec, rng);
    st.core.setZero();
    std::vector<MatrixXd> zeros(4, MatrixXd::Zero(1, 1));
    const double l = task_loss(st, VectorXd::Zero(4), zeros, IntegratorConfig{3, 1.0 / 3.0});
    CHECK(l == 0.0);
  }
}

TEST_CASE("reg_term") {
  Rng rng(19);

  SUBCASE("no past tasks is a contract error") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    CHECK_THROWS_AS(reg_term(st, 0, VectorXd::Zero(st.core.size())), ContractError);
  }

  SUBCASE("zero displacement gives zero") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    begin_task(st, rng);
    begin_task(st, rng);  // freezes e0, snapshots
    CHECK(reg_term(st, 0, VectorXd::Zero(st.core.size())) == 0.0);
  }

  SUBCASE("delta returning the core to the snapshot gives zero") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    begin_task(st, rng);
    begin_task(st, rng);
    const VectorXd drifted = st.core + rng.uniform_vector(st.core.size(), -0.01, 0.01);
    HypernetState moved = st;
    moved.core = drifted;
    const VectorXd back = moved.snapshot - drifted;
    CHECK(reg_term(moved, 0, back) == 0.0);
  }

  SUBCASE("a pure output-bias drift of delta gives delta squared") {
    HypernetSpec spec;
    spec.mode = HypernetMode::Full;
    spec.hidden_widths = {};
    spec.task_emb_dim = 2;
    spec.target = tiny_target();
    HypernetState st = init_hypernet(spec, rng);
    begin_task(st, rng);
    begin_task(st, rng);
    const int P = spec.target_param_count();
    VectorXd drift = VectorXd::Zero(st.core.size());
    drift[P * 2 + 0] = 0.3;  // first bias entry
    drift[P * 2 + 1] = -0.4;
    st.core += drift;
    CHECK(reg_term(st, 0, VectorXd::Zero(st.core.size())) ==
          doctest::Approx(0.09 + 0.16).epsilon(1e-12));
  }
}

TEST_CASE("composite_loss") {
  Rng rng(23);
  const std::vector<MatrixXd> targets = line_targets(5);
  IntegratorConfig icfg{4, 0.25, dynamics::Scheme::Euler};

  SUBCASE("no past tasks returns the task loss exactly") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    begin_task(st, rng);
    Rng draw(1);
    const double c = composite_loss(st, targets, icfg, RegStrategy{}, draw);
    CHECK(c == task_loss(st, st.current_embedding, targets, icfg));
  }

  SUBCASE("with one past task every strategy coincides") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    begin_task(st, rng);
    begin_task(st, rng);
    st.core += rng.uniform_vector(st.core.size(), -0.01, 0.01);  // nonzero reg
    RegStrategy all{RegStrategy::Kind::All, 1, 0.01};
    RegStrategy sub{RegStrategy::Kind::Subset, 3, 0.01};
    RegStrategy single{RegStrategy::Kind::Single, 1, 0.01};
    Rng d1(1), d2(1), d3(1);
    const double a = composite_loss(st, targets, icfg, all, d1);
    const double b = composite_loss(st, targets, icfg, sub, d2);
    const double c = composite_loss(st, targets, icfg, single, d3);
    CHECK(a == doctest::Approx(b).epsilon(1e-15));
    CHECK(a == doctest::Approx(c).epsilon(1e-15));
  }

  SUBCASE("all-strategy equals task loss plus beta times the mean regularizer") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    for (int m = 0; m < 4; ++m) begin_task(st, rng);
    st.core += rng.uniform_vector(st.core.size(), -0.02, 0.02);
    const double beta = 0.37;
    Rng draw(5);
    const double comp =
        composite_loss(st, targets, icfg, RegStrategy{RegStrategy::Kind::All, 1, beta}, draw);
    const VectorXd zero = VectorXd::Zero(st.core.size());
    double mean = 0.0;
    for (int l = 0; l < 3; ++l) mean += reg_term(st, l, zero);
    mean /= 3.0;
    const double expect = task_loss(st, st.current_embedding, targets, icfg) + beta * mean;
    CHECK(comp == doctest::Approx(expect).epsilon(1e-14));
  }

  SUBCASE("the single-draw regularizer is an unbiased estimate of the full one") {
    HypernetState st = init_hypernet(tiny_chn(), rng);
    for (int m = 0; m < 6; ++m) begin_task(st, rng);  // 5 past tasks
    st.core += rng.uniform_vector(st.core.size(), -0.05, 0.05);
    const double beta = 1.0;
    const double base = task_loss(st, st.current_embedding, targets, icfg);
    Rng draw(77);
    const RegStrategy single{RegStrategy::Kind::Single, 1, beta};
    double mc = 0.0;
    const int n_draws = 10000;
    for (int i = 0; i < n_draws; ++i)
      mc += composite_loss(st, targets, icfg, single, draw) - base;
    mc /= n_draws;
    Rng d2(1);
    const double full =
        composite_loss(st, targets, icfg, RegStrategy{RegStrategy::Kind::All, 1, beta}, d2) - base;
    CHECK(std::abs(mc - full) / full < 0.02);
  }
}

TEST_CASE("begin_task bookkeeping") {
  Rng rng(29);
  HypernetState st = init_hypernet(tiny_chn(), rng);

  SUBCASE("snapshot equals the core bit for bit at task start") {
    begin_task(st, rng);
    CHECK((st.snapshot - st.core).norm() == 0.0);
    CHECK(st.has_snapshot);
  }

  SUBCASE("two calls differ by exactly one extra frozen embedding") {
    begin_task(st, rng);
    const VectorXd core_before = st.core;
    const VectorXd e0 = st.current_embedding;
    begin_task(st, rng);
    CHECK((st.core - core_before).norm() == 0.0);
    CHECK(st.past_tasks() == 1);
    CHECK((st.frozen_embeddings[0] - e0).norm() == 0.0);
    CHECK(st.current_embedding.size() == 4);
  }
}

TEST_CASE("two-step training") {
  const std::vector<MatrixXd> targets = line_targets(6);
  IntegratorConfig icfg{5, 0.2, dynamics::Scheme::Euler};
  Adam::Options opt;
  opt.lr = 3e-3;

  SUBCASE("beta=0 reduces to plain task training") {
    Rng ra(31), rb(31);
    HypernetState a = init_hypernet(tiny_chn(), ra);
    HypernetState b = init_hypernet(tiny_chn(), rb);
    HypernetTrainer ta(a, icfg, opt, RegStrategy{RegStrategy::Kind::All, 1, 0.0});
    HypernetTrainer tb(b, icfg, opt, RegStrategy{RegStrategy::Kind::Single, 1, 0.0});
    for (int task = 0; task < 2; ++task) {
      Rng sa(100 + task), sb(100 + task);
      ta.start_task(sa);
      tb.start_task(sb);
      Rng da(7), db(7);
      for (int i = 0; i < 30; ++i) {
        ta.step(targets, da);
        tb.step(targets, db);
      }
    }
    CHECK((a.core - b.core).norm() == 0.0);  // regularizer fully disabled
  }

  SUBCASE("frozen embeddings stay bitwise unchanged across training") {
    Rng rng(37);
    HypernetState st = init_hypernet(tiny_chn(), rng);
    HypernetTrainer tr(st, icfg, opt, RegStrategy{RegStrategy::Kind::All, 1, 5e-3});
    tr.start_task(rng);
    Rng d(3);
    for (int i = 0; i < 20; ++i) tr.step(targets, d);
    const VectorXd e0 = st.current_embedding;
    tr.start_task(rng);
    for (int i = 0; i < 20; ++i) tr.step(targets, d);
    CHECK((st.frozen_embeddings[0] - e0).norm() == 0.0);
  }

  SUBCASE("training reduces the task loss on a toy line") {
    Rng rng(41);
    HypernetState st = init_hypernet(tiny_chn(), rng);
    HypernetTrainer tr(st, icfg, opt, RegStrategy{RegStrategy::Kind::All, 1, 5e-3});
    tr.start_task(rng);
    Rng d(5);
    const double first = tr.step(targets, d).task_loss;
    double last = first;
    for (int i = 0; i < 400; ++i) last = tr.step(targets, d).task_loss;
    CHECK(last < 0.25 * first);
  }

  SUBCASE("heavy regularization pins the first task's generated parameters") {
    Rng rng(43);
    HypernetState st = init_hypernet(tiny_chn(), rng);
    HypernetTrainer tr(st, icfg, opt, RegStrategy{RegStrategy::Kind::All, 1, 10.0});
    tr.start_task(rng);
    Rng d(9);
    for (int i = 0; i < 200; ++i) tr.step(targets, d);
    tr.start_task(rng);
    const VectorXd e0 = st.frozen_embeddings[0];
    const VectorXd anchor = generate_from(st.spec, st.snapshot, e0).values;
    // The second task's data differs, so the core wants to move.
    std::vector<MatrixXd> other = line_targets(6);
    for (auto& m : other) m *= -1.5;
    for (int i = 0; i < 200; ++i) tr.step(other, d);
    const VectorXd now = generate(st, e0).values;
    CHECK((now - anchor).norm() / anchor.norm() < 1e-2);
  }
}

#include <cmath>
#include <vector>

#include "doctest.h"
#include "metastep/metagrad.hpp"
#include "metastep/tasks.hpp"
#include "testutil/finite_diff.hpp"

using namespace metastep;
using namespace metastep::testutil;

namespace {

Batch random_batch(Rng& rng, int n, int64_t in_dim, int64_t out_dim) {
  Batch b;
  b.inputs = Tensor({n, in_dim});
  b.targets = Tensor({n, out_dim});
  for (int64_t i = 0; i < b.inputs.numel(); ++i) b.inputs[i] = rng.normal();
  for (int64_t i = 0; i < b.targets.numel(); ++i) b.targets[i] = rng.normal();
  return b;
}

/// Forward value of the estimated system: unroll from phi_1 = theta with the
/// window schedule, then the outer loss on the query batch. Used as the
/// finite-difference side in shared-init checks.
double shared_unrolled_outer(const LossGraph& loss, const ParamGroup& layout,
                             const Tensor& theta_flat, const HyperParams& hp,
                             const WindowSchedule& schedule, const Batch& support,
                             const Batch& query) {
  ParamGroup theta = layout.with_flat(theta_flat);
  std::vector<Batch> batches(static_cast<size_t>(schedule.num_windows()), support);
  Trajectory traj =
      unroll_inner(loss, theta, theta, OptState::initial(theta_flat), hp, schedule, batches);
  return loss_value(loss, layout.with_flat(traj.final_state().phi), theta, query);
}

}  // namespace

TEST_CASE("window schedule anchors and truncation") {
  WindowSchedule s = WindowSchedule::make(8, 4);
  CHECK(s.anchors == std::vector<int>{1, 5});
  CHECK(s.window_length(0) == 4);

  WindowSchedule t = WindowSchedule::make(7, 3);
  CHECK(t.anchors == std::vector<int>{1, 4, 7});
  CHECK(t.window_length(2) == 1);  // truncated final window

  WindowSchedule exact = WindowSchedule::make(3, 1);
  CHECK(exact.anchors == std::vector<int>{1, 2, 3});
}

TEST_CASE("unroll: n=1 and frozen-gradient schedules agree for constant gradients") {
  // Affine loss: the gradient never changes, so reuse is exact.
  LossGraph affine("affine", [](Tape& t, const BoundParams& p, const BoundParams&, const Batch&) {
    NodeId c = t.constant(Tensor::row({0.4, -0.2, 1.0}));
    return t.sum(t.mul(c, p["w"]));
  });
  ParamGroup layout;
  layout.add("w", Tensor::row({1.0, 2.0, 3.0}));
  HyperParams hp{0.1, 0.9, 1e-4};
  Batch none;

  auto run = [&](int n) {
    WindowSchedule s = WindowSchedule::make(6, n);
    std::vector<Batch> batches(static_cast<size_t>(s.num_windows()), none);
    return unroll_inner(affine, ParamGroup{}, layout, OptState::initial(layout.flatten()), hp, s,
                        batches);
  };
  Trajectory exact = run(1);
  for (int n : {2, 3, 6}) {
    Trajectory est = run(n);
    CHECK(rel_l2_error(est.final_state().phi, exact.final_state().phi) <= 1e-15);
    CHECK(static_cast<int>(est.windows.size()) == (6 + n - 1) / n);
  }
}

TEST_CASE("unroll: naive-SGD window equals one step at n*eta") {
  MlpSpec spec{2, {5}, 1, Activation::Tanh};
  Rng rng(3);
  ParamGroup theta = init_mlp(spec, rng);
  Batch support = random_batch(rng, 4, 2, 1);
  LossGraph loss = mlp_mse_loss(spec);

  HyperParams hp{0.05, 0.0, 0.0};
  WindowSchedule two = WindowSchedule::make(4, 2);
  std::vector<Batch> b2(static_cast<size_t>(two.num_windows()), support);
  Trajectory est =
      unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, two, b2);

  HyperParams doubled{2 * hp.eta, 0.0, 0.0};
  WindowSchedule one = WindowSchedule::make(2, 1);
  Trajectory ref =
      unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), doubled, one, b2);

  CHECK(rel_l2_error(est.final_state().phi, ref.final_state().phi) <= 1e-10);
}

TEST_CASE("meta_gradient: one plain-SGD step has the closed form (I - eta H) grad") {
  LossGraph half_sq("half_sq", [](Tape& t, const BoundParams& p, const BoundParams&,
                                  const Batch&) {
    return t.scale(t.sum(t.square(p["w"])), 0.5);
  });
  ParamGroup theta;
  theta.add("w", Tensor::row({1.0, -2.0, 0.5}));
  HyperParams hp{0.1, 0.0, 0.0};
  Batch none;

  WindowSchedule s = WindowSchedule::make(1, 1);
  std::vector<Batch> batches = {none};
  Trajectory traj =
      unroll_inner(half_sq, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
  MetaGradReport r = meta_gradient(traj, half_sq, theta, ParamMode::SharedInit, none);

  // phi_2 = (1 - eta) phi, grad L(phi_2) = phi_2, H = I:
  // d L / d theta = (1 - eta) * phi_2 = (1 - eta)^2 phi
  Tensor expect = scale(theta.flatten(), (1 - hp.eta) * (1 - hp.eta));
  CHECK(rel_l2_error(r.grad_theta, expect) <= 1e-14);
  CHECK(r.counters.hvp_count == 1);
  CHECK(r.counters.cross_vp_count == 1);
}

TEST_CASE("meta_gradient: exact sweep matches the finite-difference hypergradient") {
  MlpSpec spec{1, {6}, 1, Activation::Tanh};
  Rng rng(11);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Episode ep = sample_sinusoid(rng, 5, 8);

  HyperParams hp{0.05, 0.9, 1e-4};
  WindowSchedule s = WindowSchedule::make(4, 1);
  std::vector<Batch> batches(4, ep.support);

  Trajectory traj =
      unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
  MetaGradReport r = meta_gradient(traj, loss, theta, ParamMode::SharedInit, ep.query);

  Tensor fd = fd_hypergradient(
      [&](const Tensor& th) {
        return shared_unrolled_outer(loss, theta, th, hp, s, ep.support, ep.query);
      },
      theta.flatten(), 1e-5);
  CHECK(rel_l2_error(r.grad_theta, fd) <= 1e-4);
}

TEST_CASE("meta_gradient: multi-step sweep is the exact adjoint of the estimated dynamics") {
  // For n > 1 the estimator is still an exact derivative -- of the
  // frozen-gradient forward map. Differentiate that map by finite
  // differences and compare.
  MlpSpec spec{2, {5}, 1, Activation::Tanh};
  Rng rng(19);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Batch support = random_batch(rng, 5, 2, 1);
  Batch query = random_batch(rng, 7, 2, 1);

  HyperParams hp{0.04, 0.9, 1e-4};
  for (int n : {2, 3, 4}) {
    WindowSchedule s = WindowSchedule::make(4, n);
    std::vector<Batch> batches(static_cast<size_t>(s.num_windows()), support);
    Trajectory traj =
        unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
    MetaGradReport r = meta_gradient(traj, loss, theta, ParamMode::SharedInit, query);

    Tensor fd = fd_hypergradient(
        [&](const Tensor& th) {
          return shared_unrolled_outer(loss, theta, th, hp, s, support, query);
        },
        theta.flatten(), 1e-5);
    CHECK(rel_l2_error(r.grad_theta, fd) <= 1e-4);
    CHECK(r.counters.hvp_count == s.num_windows());
  }
}

TEST_CASE("meta_gradient: naive-SGD multi-step closure") {
  // mu = omega = 0: multistep(n) at (eta, T) reproduces exact at (n*eta, T/n),
  // in the terminal state and in the meta-gradient.
  MlpSpec spec{2, {6}, 1, Activation::Tanh};
  Rng rng(23);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Batch support = random_batch(rng, 5, 2, 1);
  Batch query = random_batch(rng, 6, 2, 1);

  const int T = 8;
  HyperParams hp{0.03, 0.0, 0.0};
  for (int n : {2, 4}) {
    WindowSchedule est_s = WindowSchedule::make(T, n);
    std::vector<Batch> batches(static_cast<size_t>(est_s.num_windows()), support);
    Trajectory est = unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp,
                                  est_s, batches);
    MetaGradReport est_r = meta_gradient(est, loss, theta, ParamMode::SharedInit, query);

    HyperParams scaled{hp.eta * n, 0.0, 0.0};
    WindowSchedule ref_s = WindowSchedule::make(T / n, 1);
    Trajectory ref = unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), scaled,
                                  ref_s, batches);
    MetaGradReport ref_r = meta_gradient(ref, loss, theta, ParamMode::SharedInit, query);

    CHECK(rel_l2_error(est.final_state().phi, ref.final_state().phi) <= 1e-10);
    CHECK(rel_l2_error(est_r.grad_theta, ref_r.grad_theta) <= 1e-10);
  }
}

TEST_CASE("meta_gradient: multistep(1) is the exact engine") {
  MlpSpec spec{1, {5}, 1, Activation::Tanh};
  Rng rng(29);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Episode ep = sample_sinusoid(rng, 5, 5);
  HyperParams hp{0.05, 0.9, 1e-4};

  auto run = [&](int n) {
    WindowSchedule s = WindowSchedule::make(4, n);
    std::vector<Batch> batches(static_cast<size_t>(s.num_windows()), ep.support);
    Trajectory traj =
        unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
    return meta_gradient(traj, loss, theta, ParamMode::SharedInit, ep.query);
  };
  MetaGradReport a = run(1);
  MetaGradReport b = run(1);
  CHECK(rel_l2_error(a.grad_theta, b.grad_theta) == 0.0);
}

TEST_CASE("meta_gradient: counter law over window sizes") {
  MlpSpec spec{2, {4}, 1, Activation::Tanh};
  Rng rng(31);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Batch support = random_batch(rng, 4, 2, 1);
  Batch query = random_batch(rng, 4, 2, 1);
  HyperParams hp{0.05, 0.9, 1e-4};

  const int T = 8;
  std::vector<std::pair<int, int>> expectation = {{1, 8}, {2, 4}, {4, 2}, {8, 1}};
  for (auto [n, count] : expectation) {
    WindowSchedule s = WindowSchedule::make(T, n);
    std::vector<Batch> batches(static_cast<size_t>(s.num_windows()), support);
    Trajectory traj =
        unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
    MetaGradReport r = meta_gradient(traj, loss, theta, ParamMode::SharedInit, query);
    CHECK(r.counters.hvp_count == count);
    CHECK(r.counters.cross_vp_count == count);
    CHECK(traj.counters.first_order_grad_count == count);
  }
}

TEST_CASE("meta_gradient: constant-gradient losses make every window size exact") {
  LossGraph affine("affine", [](Tape& t, const BoundParams& p, const BoundParams&, const Batch&) {
    NodeId c = t.constant(Tensor::row({0.3, -0.8}));
    return t.sum(t.mul(c, p["w"]));
  });
  ParamGroup theta;
  theta.add("w", Tensor::row({0.7, 0.1}));
  HyperParams hp{0.1, 0.9, 1e-4};
  Batch none;

  auto run = [&](int n) {
    WindowSchedule s = WindowSchedule::make(6, n);
    std::vector<Batch> batches(static_cast<size_t>(s.num_windows()), none);
    Trajectory traj =
        unroll_inner(affine, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
    return meta_gradient(traj, affine, theta, ParamMode::SharedInit, none);
  };
  MetaGradReport exact = run(1);
  for (int n : {2, 3, 6}) {
    MetaGradReport est = run(n);
    CHECK(rel_l2_error(est.grad_theta, exact.grad_theta) <= 1e-12);
  }
}

TEST_CASE("first-order estimator: shared space and T=0") {
  MlpSpec spec{1, {4}, 1, Activation::Tanh};
  Rng rng(37);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Episode ep = sample_sinusoid(rng, 5, 6);
  HyperParams hp{0.05, 0.0, 0.0};

  // T=0: no windows recorded; the estimator is just the outer gradient at phi_1.
  Trajectory empty = start_trajectory(theta, theta, OptState::initial(theta.flatten()), hp);
  MetaGradReport fo = meta_gradient_first_order(empty, loss, theta, ParamMode::SharedInit,
                                                ep.query);
  Tensor direct = grad(loss, theta, theta, ep.query);
  CHECK(rel_l2_error(fo.grad_theta, direct) == 0.0);

  // After adaptation the estimator is the outer gradient at phi_{T+1}.
  WindowSchedule s = WindowSchedule::make(3, 1);
  std::vector<Batch> batches(3, ep.support);
  Trajectory traj =
      unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, s, batches);
  MetaGradReport fo2 =
      meta_gradient_first_order(traj, loss, theta, ParamMode::SharedInit, ep.query);
  Tensor at_end = grad(loss, theta.with_flat(traj.final_state().phi), theta, ep.query);
  CHECK(rel_l2_error(fo2.grad_theta, at_end) == 0.0);
  CHECK(fo2.counters.hvp_count == 0);
}

TEST_CASE("reptile delta") {
  ParamGroup theta;
  theta.add("w", Tensor::row({1.0, 1.0}));
  HyperParams hp{0.1, 0.0, 0.0};

  Trajectory traj = start_trajectory(theta, theta, OptState::initial(theta.flatten()), hp);
  CHECK(norm2(reptile_delta(theta, traj)) == 0.0);  // T=0, phi_1 = theta

  traj.states.push_back(OptState{Tensor::row({0.8, 1.2}), Tensor({2}), 2});
  Tensor d = reptile_delta(theta, traj);
  CHECK(d[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(d[1] == doctest::Approx(-0.2).epsilon(1e-15));

  ParamGroup wrong;
  wrong.add("w", Tensor::row({1.0}));
  CHECK_THROWS_AS(reptile_delta(wrong, traj), SpaceMismatch);
}

TEST_CASE("maml_outer_step: zero meta step and task averaging") {
  MlpSpec spec{1, {4}, 1, Activation::Tanh};
  Rng rng(41);
  ParamGroup theta = init_mlp(spec, rng);
  LossGraph loss = mlp_mse_loss(spec);
  Episode ep = sample_sinusoid(rng, 5, 5);
  HyperParams hp{0.05, 0.9, 1e-4};
  WindowSchedule s = WindowSchedule::make(2, 1);

  EpisodeTask task{&loss, &loss, ep.support, ep.query};
  std::vector<EpisodeTask> one = {task};
  ParamGroup same = maml_outer_step(theta, one, hp, 0.0, s, Estimator::Exact);
  CHECK(max_abs_diff(same.flatten(), theta.flatten()) == 0.0);

  std::vector<EpisodeTask> twice = {task, task};
  ParamGroup a = maml_outer_step(theta, one, hp, 0.01, s, Estimator::Exact);
  ParamGroup b = maml_outer_step(theta, twice, hp, 0.01, s, Estimator::Exact);
  CHECK(rel_l2_error(b.flatten(), a.flatten()) <= 1e-15);
}

TEST_CASE("meta-network: FD hypergradient of the recorded procedure") {
  Rng rng(47);
  TransferConfig cfg;
  cfg.input_dim = 4;
  cfg.classes = 3;
  cfg.src_h1 = 6;
  cfg.src_h2 = 5;
  cfg.tgt_h1 = 5;
  cfg.tgt_h2 = 4;
  cfg.train_per_class = 16;
  cfg.eval_per_class = 8;
  cfg.source_pretrain_steps = 60;
  TransferProblem problem = make_transfer_problem(rng, cfg);

  ParamGroup theta = problem.theta0;
  ParamGroup phi = problem.phi0;
  Batch batch = sample_batch(rng, problem.train_x, problem.train_y, 12);
  HyperParams hp{0.05, 0.9, 1e-4};
  WindowSchedule s = WindowSchedule::make(2, 2);  // K=1, N=2

  auto recorded = [&](const ParamGroup& th) {
    Trajectory traj = start_trajectory(phi, th, OptState::initial(phi.flatten()), hp);
    for (int k = 0; k < s.num_windows(); ++k)
      extend_trajectory(traj, problem.task.tfr, batch, s.window_length(k));
    extend_trajectory(traj, problem.task.acc, batch, 1);
    return traj;
  };

  Trajectory traj = recorded(theta);
  MetaGradReport r = meta_gradient(traj, problem.task.acc, theta, ParamMode::MetaNetwork, batch);
  CHECK(norm2(r.grad_theta) > 1e-8);

  Tensor fd = fd_hypergradient(
      [&](const Tensor& th_flat) {
        Trajectory t = recorded(theta.with_flat(th_flat));
        return loss_value(problem.task.acc, phi.with_flat(t.final_state().phi),
                          theta.with_flat(th_flat), batch);
      },
      theta.flatten(), 1e-5);
  CHECK(rel_l2_error(r.grad_theta, fd) <= 1e-4);

  // First-order estimator with the classification outer loss: theta has no
  // explicit path, the gradient is exactly zero.
  Trajectory traj2 = recorded(theta);
  MetaGradReport fo =
      meta_gradient_first_order(traj2, problem.task.acc, theta, ParamMode::MetaNetwork, batch);
  CHECK(norm2(fo.grad_theta) == 0.0);
}

TEST_CASE("metanet_outer_step: no theta path keeps theta fixed, K=1 N=1 degenerates") {
  Rng rng(53);
  MlpSpec arch{3, {4, 4}, 2, Activation::Tanh};
  ParamGroup phi = init_mlp(arch, rng);
  LossGraph acc = mlp_ce_loss(arch);

  Batch batch;
  batch.inputs = Tensor({6, 3});
  batch.targets = Tensor({6, 2});
  for (int64_t i = 0; i < batch.inputs.numel(); ++i) batch.inputs[i] = rng.normal();
  for (int i = 0; i < 6; ++i) batch.targets.at(i, i % 2) = 1.0;

  ParamGroup theta;
  theta.add("unused", Tensor::row({0.4, 0.6}));

  // beta = 0 and a theta-independent inner loss: no theta path anywhere.
  TransferObjective objective{&acc, &acc, &acc};
  HyperParams hp{0.05, 0.9, 1e-4};
  MetaNetStepResult res = metanet_outer_step(theta, phi, batch, objective, hp, 0.1,
                                             WindowSchedule::make(1, 1));
  CHECK(max_abs_diff(res.theta_next.flatten(), theta.flatten()) == 0.0);
  CHECK(res.report.counters.hvp_count == 2);  // one tfr window + the final acc step
}

#include <cmath>

#include "doctest.h"
#include "metastep/engine.hpp"
#include "metastep/models.hpp"
#include "metastep/rng.hpp"
#include "testutil/finite_diff.hpp"

using namespace metastep;
using namespace metastep::testutil;

namespace {

ParamGroup single(const std::string& name, Tensor t) {
  ParamGroup g;
  g.add(name, std::move(t));
  return g;
}

ParamGroup random_mlp(const MlpSpec& spec, uint64_t seed) {
  Rng rng(seed);
  return init_mlp(spec, rng);
}

Batch random_batch(int n, int64_t in_dim, int64_t out_dim, uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.inputs = Tensor({n, in_dim});
  b.targets = Tensor({n, out_dim});
  for (int64_t i = 0; i < b.inputs.numel(); ++i) b.inputs[i] = rng.normal();
  for (int64_t i = 0; i < b.targets.numel(); ++i) b.targets[i] = rng.normal();
  return b;
}

Tensor random_vec(int64_t n, uint64_t seed) {
  Rng rng(seed);
  Tensor v({n});
  for (int64_t i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

const LossGraph kHalfSq("half_sq", [](Tape& t, const BoundParams& phi, const BoundParams&,
                                      const Batch&) {
  return t.scale(t.sum(t.square(phi["w"])), 0.5);
});

}  // namespace

TEST_CASE("grad: quadratic and linear closed forms") {
  ParamGroup phi = single("w", Tensor::row({1.0, 2.0, 3.0}));
  ParamGroup theta;
  Batch batch;

  Tensor g = grad(kHalfSq, phi, theta, batch);
  CHECK(max_abs_diff(g, Tensor::row({1.0, 2.0, 3.0})) == 0.0);

  LossGraph linear("linear", [](Tape& t, const BoundParams& p, const BoundParams&, const Batch&) {
    NodeId c = t.constant(Tensor::row({0.5, -1.0}));
    return t.sum(t.mul(c, p["w"]));
  });
  ParamGroup phi2 = single("w", Tensor::row({3.0, 4.0}));
  Tensor g2 = grad(linear, phi2, theta, batch);
  CHECK(max_abs_diff(g2, Tensor::row({0.5, -1.0})) == 0.0);
}

TEST_CASE("grad: MLP regression matches central finite differences") {
  MlpSpec spec{2, {8, 8}, 1, Activation::Tanh};
  ParamGroup phi = random_mlp(spec, 42);
  ParamGroup theta;
  Batch batch = random_batch(6, 2, 1, 43);
  LossGraph loss = mlp_mse_loss(spec);

  Tensor g = grad(loss, phi, theta, batch);
  Tensor g_fd = fd_grad(loss, phi, theta, batch, 1e-5);
  CHECK(rel_l2_error(g, g_fd) <= 1e-6);
}

TEST_CASE("hvp: identity and zero Hessians") {
  ParamGroup phi = single("w", Tensor::row({1.0, -2.0, 0.5}));
  ParamGroup theta;
  Batch batch;
  Tensor v = Tensor::row({0.3, 0.7, -1.1});

  Tensor hv = hvp(kHalfSq, phi, theta, batch, v);
  CHECK(max_abs_diff(hv, v) == 0.0);

  LossGraph linear("linear", [](Tape& t, const BoundParams& p, const BoundParams&, const Batch&) {
    NodeId c = t.constant(Tensor::row({1.0, 2.0, 3.0}));
    return t.sum(t.mul(c, p["w"]));
  });
  Tensor zero = hvp(linear, phi, theta, batch, v);
  CHECK(norm2(zero) == 0.0);

  CHECK_THROWS_AS(hvp(kHalfSq, phi, theta, batch, Tensor::row({1.0})), DimensionMismatch);
}

TEST_CASE("hvp: MLP matches finite differences of the gradient") {
  MlpSpec spec{2, {6, 6}, 1, Activation::Tanh};
  ParamGroup phi = random_mlp(spec, 7);
  ParamGroup theta;
  Batch batch = random_batch(5, 2, 1, 8);
  LossGraph loss = mlp_mse_loss(spec);
  Tensor v = random_vec(phi.flat_len(), 9);

  Tensor hv = hvp(loss, phi, theta, batch, v);
  Tensor hv_fd = fd_hvp(loss, phi, theta, batch, v, 1e-4);
  CHECK(rel_l2_error(hv, hv_fd) <= 1e-5);
}

TEST_CASE("hvp: linearity and symmetry") {
  MlpSpec spec{3, {5}, 2, Activation::Tanh};
  ParamGroup phi = random_mlp(spec, 21);
  ParamGroup theta;
  Batch batch = random_batch(4, 3, 2, 22);
  LossGraph loss = mlp_mse_loss(spec);
  int64_t n = phi.flat_len();

  Tensor v1 = random_vec(n, 23), v2 = random_vec(n, 24);
  double a = 0.37, b = -1.91;

  AnchorEval eval(loss, phi, theta, batch);
  Tensor lhs = eval.hvp(add_scaled(scale(v1, a), v2, b));
  Tensor rhs = add_scaled(scale(eval.hvp(v1), a), eval.hvp(v2), b);
  CHECK(rel_l2_error(lhs, rhs) <= 1e-12);

  // <u, H v> == <v, H u>
  Tensor u = random_vec(n, 25);
  double left = dot(u, eval.hvp(v1));
  double right = dot(v1, eval.hvp(u));
  CHECK(std::abs(left - right) <= 1e-10 * std::max(std::abs(left), 1.0));
}

TEST_CASE("cross_vp: no theta path gives exact zeros, bilinear case is analytic") {
  ParamGroup phi = single("w", Tensor::row({1.0, 2.0}));
  ParamGroup theta = single("s", Tensor::scalar(0.7));
  Batch batch;
  Tensor v = Tensor::row({0.4, -0.3});

  Tensor zero = cross_vp(kHalfSq, phi, theta, batch, v);
  CHECK(zero.numel() == 1);
  CHECK(zero[0] == 0.0);

  // f = s * 0.5 ||w||^2, so v^T dg/ds = <w, v>
  LossGraph bilinear("bilinear",
                     [](Tape& t, const BoundParams& p, const BoundParams& th, const Batch&) {
                       return t.mul(th["s"], t.scale(t.sum(t.square(p["w"])), 0.5));
                     });
  Tensor c = cross_vp(bilinear, phi, theta, batch, v);
  CHECK(c.numel() == 1);
  CHECK(c[0] == doctest::Approx(dot(phi.flatten(), v)).epsilon(1e-12));

  Tensor c_fd = fd_cross_vp(bilinear, phi, theta, batch, v);
  CHECK(rel_l2_error(c, c_fd) <= 1e-7);
}

TEST_CASE("closure: the recorded backward of every op is differentiable again") {
  // One graph exercising the full registered op-set, then hvp vs the
  // finite-difference oracle. Detached ops appear in their intended
  // cancelling patterns so the oracle sees the same function.
  LossGraph everything("everything", [](Tape& t, const BoundParams& p, const BoundParams&,
                                        const Batch&) {
    NodeId w = p["w"];  // (2,3)
    NodeId act = t.add(t.tanh(w), t.mul(t.sigmoid(w), t.softplus(w)));
    NodeId shifted = t.relu(t.add_scalar(w, 0.3));
    NodeId mix = t.sub(act, t.mul(shifted, t.heaviside(w)));
    NodeId m = t.matmul(mix, t.transpose(w));  // (2,2)
    // full log-sum-exp with a detached shift; the shift cancels exactly
    NodeId rm = t.rowmax_detached(m);
    NodeId lse = t.add(t.log(t.rowsum(t.exp(t.sub(m, t.broadcast_cols(rm, 2))))), rm);  // (2,1)
    NodeId pos = t.add_scalar(t.square(w), 1.0);
    NodeId smooth = t.add(t.reciprocal(pos), t.exp(t.scale(w, 0.1)));
    NodeId spread = t.broadcast_cols(lse, 3);                       // (2,3)
    NodeId rows = t.broadcast_rows(t.colsum(smooth), 2);            // (2,3)
    NodeId total = t.add(t.mean(t.mul(spread, rows)),
                         t.mul(t.sum(smooth), t.broadcast_fill(t.mean(w), {1})));
    return total;
  });

  Tensor w0({2, 3});
  Rng rng(31);
  for (int64_t i = 0; i < w0.numel(); ++i) w0[i] = 0.5 * rng.normal() + 0.6;
  ParamGroup phi = single("w", w0);
  ParamGroup theta;
  Batch batch;

  Tensor g = grad(everything, phi, theta, batch);
  Tensor g_fd = fd_grad(everything, phi, theta, batch, 1e-6);
  CHECK(rel_l2_error(g, g_fd) <= 1e-6);

  Tensor v = random_vec(phi.flat_len(), 32);
  Tensor hv = hvp(everything, phi, theta, batch, v);
  Tensor hv_fd = fd_hvp(everything, phi, theta, batch, v, 1e-4);
  CHECK(rel_l2_error(hv, hv_fd) <= 1e-5);
}

TEST_CASE("evaluation is deterministic") {
  MlpSpec spec{2, {7}, 2, Activation::Tanh};
  ParamGroup phi = random_mlp(spec, 51);
  ParamGroup theta;
  Batch batch = random_batch(5, 2, 2, 52);
  LossGraph loss = mlp_ce_loss(spec);
  Tensor v = random_vec(phi.flat_len(), 53);

  Tensor g1 = grad(loss, phi, theta, batch);
  Tensor g2 = grad(loss, phi, theta, batch);
  CHECK(max_abs_diff(g1, g2) == 0.0);
  Tensor h1 = hvp(loss, phi, theta, batch, v);
  Tensor h2 = hvp(loss, phi, theta, batch, v);
  CHECK(max_abs_diff(h1, h2) == 0.0);
}

TEST_CASE("non-finite forward values are reported") {
  LossGraph bad("bad", [](Tape& t, const BoundParams& p, const BoundParams&, const Batch&) {
    return t.sum(t.log(p["w"]));  // negative entry -> NaN
  });
  ParamGroup phi = single("w", Tensor::row({-1.0, 2.0}));
  ParamGroup theta;
  Batch batch;
  CHECK_THROWS_AS(grad(bad, phi, theta, batch), NonFiniteLoss);
}

TEST_CASE("second-order products are counted once per call") {
  MlpSpec spec{2, {4}, 1, Activation::Tanh};
  ParamGroup phi = random_mlp(spec, 61);
  ParamGroup theta;
  Batch batch = random_batch(3, 2, 1, 62);
  LossGraph loss = mlp_mse_loss(spec);
  Tensor v = random_vec(phi.flat_len(), 63);

  EvalCounters counters;
  AnchorEval eval(loss, phi, theta, batch, &counters);
  CHECK(counters.first_order_grad_count == 1);
  eval.hvp(v, &counters);
  eval.hvp(v, &counters);
  eval.cross_vp(v, &counters);
  CHECK(counters.hvp_count == 2);
  CHECK(counters.cross_vp_count == 1);
}

#pragma once

#include <functional>

#include "metastep/errors.hpp"
#include "metastep/tensor.hpp"

namespace metastep {

/// Inner-optimizer hyper-parameters: learning rate, momentum, weight decay.
/// Weight decay is part of the dynamics, not folded into the loss.
struct HyperParams {
  double eta = 0.1;
  double mu = 0.0;
  double omega = 0.0;

  void validate() const {
    if (!(eta > 0.0)) throw ConfigError("HyperParams: eta must be > 0");
    if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("HyperParams: mu must be in [0,1)");
    if (!(omega >= 0.0)) throw ConfigError("HyperParams: omega must be >= 0");
  }
};

/// Inner-optimizer state s_t = (phi_t, v_t). The initial velocity is zero.
struct OptState {
  Tensor phi;
  Tensor vel;
  int step_index = 1;

  static OptState initial(Tensor phi0) {
    Tensor v(phi0.shape());
    return {std::move(phi0), std::move(v), 1};
  }
};

/// Adjoint pair propagated backward through the trajectory.
struct LagrangianState {
  Tensor lam_phi;
  Tensor lam_vel;
  int step_index = 0;
};

using HvpFn = std::function<Tensor(const Tensor&)>;
using CrossFn = std::function<Tensor(const Tensor&)>;

/// One momentum-SGD update:
///   v' = mu v + g + omega phi,   phi' = phi - eta v'.
inline OptState step(const OptState& s, const Tensor& g, const HyperParams& hp) {
  if (g.numel() != s.phi.numel())
    throw DimensionMismatch("step: gradient length " + std::to_string(g.numel()) +
                            " != parameter length " + std::to_string(s.phi.numel()));
  OptState out;
  out.vel = Tensor(s.phi.shape());
  out.phi = Tensor(s.phi.shape());
  for (int64_t i = 0; i < s.phi.numel(); ++i) {
    double v = hp.mu * s.vel[i] + g[i] + hp.omega * s.phi[i];
    out.vel[i] = v;
    out.phi[i] = s.phi[i] - hp.eta * v;
  }
  out.step_index = s.step_index + 1;
  return out;
}

/// The H-free part of the one-step adjoint (the transpose of the constant
/// block matrix of the update):
///   lam_phi' = (1 - eta omega) lam_phi + omega lam_vel
///   lam_vel' = -eta mu lam_phi + mu lam_vel.
inline LagrangianState adjoint_transport(const LagrangianState& lam, const HyperParams& hp) {
  check_same_len(lam.lam_phi, lam.lam_vel, "adjoint_transport");
  LagrangianState out;
  out.lam_phi = Tensor(lam.lam_phi.shape());
  out.lam_vel = Tensor(lam.lam_vel.shape());
  for (int64_t i = 0; i < lam.lam_phi.numel(); ++i) {
    out.lam_phi[i] = (1.0 - hp.eta * hp.omega) * lam.lam_phi[i] + hp.omega * lam.lam_vel[i];
    out.lam_vel[i] = -hp.eta * hp.mu * lam.lam_phi[i] + hp.mu * lam.lam_vel[i];
  }
  out.step_index = lam.step_index - 1;
  return out;
}

/// Full one-step adjoint, using Hessian symmetry to take H v in place of
/// H^T v. Exactly one call to `hvp_at_anchor` per invocation:
///   lam_phi' = (1 - eta omega) lam_phi + omega lam_vel + H (lam_vel - eta lam_phi)
///   lam_vel' = -eta mu lam_phi + mu lam_vel.
inline LagrangianState adjoint_step(const LagrangianState& lam, const HyperParams& hp,
                                    const HvpFn& hvp_at_anchor) {
  LagrangianState out = adjoint_transport(lam, hp);
  Tensor w = add_scaled(lam.lam_vel, lam.lam_phi, -hp.eta);
  Tensor hw = hvp_at_anchor(w);
  check_same_len(hw, out.lam_phi, "adjoint_step");
  for (int64_t i = 0; i < out.lam_phi.numel(); ++i) out.lam_phi[i] += hw[i];
  return out;
}

/// Per-step meta-parameter contribution Lambda^T [-eta; 1] dg/dtheta.
/// Exactly one call to `cross_vp_at_anchor`.
inline Tensor theta_term(const LagrangianState& lam, const HyperParams& hp,
                         const CrossFn& cross_vp_at_anchor) {
  Tensor w = add_scaled(lam.lam_vel, lam.lam_phi, -hp.eta);
  return cross_vp_at_anchor(w);
}

}  // namespace metastep

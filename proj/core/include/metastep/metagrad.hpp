#pragma once

#include <span>

#include "metastep/trajectory.hpp"

namespace metastep {

/// How meta-parameters enter the problem. SharedInit is the few-shot setting
/// (phi_1 = theta, same parameter space); MetaNetwork keeps theta in its own
/// space, entering only through the inner loss.
enum class ParamMode { SharedInit, MetaNetwork };

enum class Estimator { Exact, MultiStep, FirstOrder, Reptile };

struct MetaGradReport {
  Tensor grad_theta;
  EvalCounters counters;
  double wall_time_seconds = 0.0;
  size_t peak_tape_bytes = 0;
  double outer_loss = 0.0;
};

/// Exact meta-gradient of `outer` evaluated at the trajectory's terminal
/// state, back-propagated through the recorded windows. The sweep transports
/// the adjoint with the constant block matrix inside each window while
/// accumulating it, then flushes exactly one Hessian-vector product and one
/// mixed product per window against the window's retained anchor tape. For
/// n = 1 this reduces to the classic per-step adjoint recursion; for n > 1
/// it is the adjoint of the estimated dynamics, with second-order
/// evaluations reduced from T to the number of windows.
MetaGradReport meta_gradient(Trajectory& traj, const LossGraph& outer, const ParamGroup& theta,
                             ParamMode mode, const Batch& outer_batch);

/// First-order estimator: treats the adapted parameters as independent of
/// theta. SharedInit: d outer / d phi at the terminal state mapped into
/// theta-space. MetaNetwork: the explicit d outer / d theta only (exactly
/// zero when theta does not appear in the outer loss).
MetaGradReport meta_gradient_first_order(Trajectory& traj, const LossGraph& outer,
                                         const ParamGroup& theta, ParamMode mode,
                                         const Batch& outer_batch);

/// theta - phi_{T+1}; shared parameter space only.
Tensor reptile_delta(const ParamGroup& theta, const Trajectory& traj);

/// One few-shot learning task: adapt on `support` with `inner`, score the
/// meta-objective on `query` with `outer`.
struct EpisodeTask {
  const LossGraph* inner = nullptr;
  const LossGraph* outer = nullptr;
  Batch support;
  Batch query;
};

/// One outer update of the shared-initialization meta-parameters:
///   theta' = theta - eta_meta * (1/M) sum_i estimator_i
/// with each task unrolled from phi_1 = theta. Tasks are reduced in index
/// order so the result does not depend on evaluation interleaving.
ParamGroup maml_outer_step(const ParamGroup& theta, std::span<const EpisodeTask> tasks,
                           const HyperParams& hp_inner, double eta_meta,
                           const WindowSchedule& schedule, Estimator estimator,
                           MetaGradReport* report = nullptr);

/// The three compound-loss pieces of the meta-transfer objective.
struct TransferObjective {
  const LossGraph* total = nullptr;  // acc + beta * tfr, drives the plain update
  const LossGraph* tfr = nullptr;    // transfer loss, drives the inner windows
  const LossGraph* acc = nullptr;    // classification loss, final step + outer
};

struct MetaNetStepResult {
  ParamGroup theta_next;
  ParamGroup phi_next;
  MetaGradReport report;
  Trajectory trajectory;  // recorded inner run, reusable for diagnostics
};

/// One outer iteration of meta-network training: a non-differentiated update
/// of phi on the total loss; K windows of N steps on the transfer loss with
/// anchored gradients from a velocity-zero start; one final step on the
/// classification loss; then the meta-gradient of the classification loss at
/// the terminal state through all recorded steps. phi_next is the result of
/// the plain update (the inner states are discarded between iterations).
MetaNetStepResult metanet_outer_step(const ParamGroup& theta, const ParamGroup& phi,
                                     const Batch& batch, const TransferObjective& objective,
                                     const HyperParams& hp, double eta_meta,
                                     const WindowSchedule& schedule,
                                     Estimator estimator = Estimator::Exact);

}  // namespace metastep

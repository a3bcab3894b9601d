#include "metastep/metagrad.hpp"

#include <chrono>
#include <string>

namespace metastep {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_complete(const Trajectory& traj) {
  int covered = 0;
  for (const auto& w : traj.windows) {
    if (!w.anchor) throw IncompleteTrajectory("trajectory window has no anchor evaluation");
    covered += w.length;
  }
  if (covered + 1 != static_cast<int>(traj.states.size()))
    throw IncompleteTrajectory("trajectory covers " + std::to_string(covered) + " steps but has " +
                               std::to_string(traj.states.size()) + " states");
}

}  // namespace

MetaGradReport meta_gradient(Trajectory& traj, const LossGraph& outer, const ParamGroup& theta,
                             ParamMode mode, const Batch& outer_batch) {
  auto t0 = Clock::now();
  check_complete(traj);
  if (mode == ParamMode::SharedInit && theta.flat_len() != traj.phi_layout.flat_len())
    throw SpaceMismatch("meta_gradient: shared mode needs |theta| == |phi|");

  MetaGradReport report;
  report.counters = traj.counters;

  // Seed: Lambda_T = dL/ds_{T+1}. The outer losses depend on phi only, so
  // the velocity block is exactly zero.
  ParamGroup phi_final = traj.phi_layout.with_flat(traj.final_state().phi);
  AnchorEval outer_eval(outer, phi_final, theta, outer_batch, &report.counters);
  report.outer_loss = outer_eval.loss();

  LagrangianState lam;
  lam.lam_phi = outer_eval.grad();
  lam.lam_vel = Tensor(lam.lam_phi.shape());
  lam.step_index = traj.total_steps();

  Tensor grad_theta({std::max<int64_t>(theta.flat_len(), 1)});

  for (auto it = traj.windows.rbegin(); it != traj.windows.rend(); ++it) {
    TrajectoryWindow& window = *it;
    // Transport through the window with the constant block matrix while
    // accumulating the adjoint; the anchor's second-order products are then
    // applied once to the accumulated value. This is the exact adjoint of
    // the frozen-gradient window map: all gradient reuses inside the window
    // funnel their sensitivity into the single anchor evaluation.
    LagrangianState acc;
    acc.lam_phi = Tensor(lam.lam_phi.shape());
    acc.lam_vel = Tensor(lam.lam_vel.shape());
    for (int i = 0; i < window.length; ++i) {
      acc.lam_phi = add(acc.lam_phi, lam.lam_phi);
      acc.lam_vel = add(acc.lam_vel, lam.lam_vel);
      lam = adjoint_transport(lam, traj.hp);
    }
    Tensor w = add_scaled(acc.lam_vel, acc.lam_phi, -traj.hp.eta);
    lam.lam_phi = add(lam.lam_phi, window.anchor->hvp(w, &report.counters));
    grad_theta = add(grad_theta, window.anchor->cross_vp(w, &report.counters));
    lam.step_index = window.anchor_step - 1;
  }

  if (mode == ParamMode::SharedInit) {
    // phi_1 = theta: apply the transported adjoint at s_1 (velocity block
    // drops since v_1 is identically zero).
    grad_theta = add(grad_theta, lam.lam_phi);
  } else {
    // Explicit theta-dependence of the outer loss, when present.
    grad_theta = add(grad_theta, outer_eval.theta_grad(&report.counters));
  }

  report.grad_theta = std::move(grad_theta);
  report.peak_tape_bytes = traj.retained_bytes() + outer_eval.tape_bytes();
  report.wall_time_seconds = seconds_since(t0);
  return report;
}

MetaGradReport meta_gradient_first_order(Trajectory& traj, const LossGraph& outer,
                                         const ParamGroup& theta, ParamMode mode,
                                         const Batch& outer_batch) {
  auto t0 = Clock::now();
  check_complete(traj);
  MetaGradReport report;
  report.counters = traj.counters;

  ParamGroup phi_final = traj.phi_layout.with_flat(traj.final_state().phi);
  if (mode == ParamMode::SharedInit) {
    if (theta.flat_len() != traj.phi_layout.flat_len())
      throw SpaceMismatch("meta_gradient_first_order: shared mode needs |theta| == |phi|");
    AnchorEval outer_eval(outer, phi_final, theta, outer_batch, &report.counters);
    report.outer_loss = outer_eval.loss();
    report.grad_theta = outer_eval.grad();
    report.peak_tape_bytes = traj.retained_bytes() + outer_eval.tape_bytes();
  } else {
    report.outer_loss = loss_value(outer, phi_final, theta, outer_batch);
    report.grad_theta = grad_theta(outer, phi_final, theta, outer_batch, &report.counters);
    report.peak_tape_bytes = traj.retained_bytes();
  }
  report.wall_time_seconds = seconds_since(t0);
  return report;
}

Tensor reptile_delta(const ParamGroup& theta, const Trajectory& traj) {
  if (theta.flat_len() != traj.phi_layout.flat_len())
    throw SpaceMismatch("reptile_delta: shared parameter space required");
  return sub(theta.flatten(), traj.final_state().phi);
}

ParamGroup maml_outer_step(const ParamGroup& theta, std::span<const EpisodeTask> tasks,
                           const HyperParams& hp_inner, double eta_meta,
                           const WindowSchedule& schedule, Estimator estimator,
                           MetaGradReport* report) {
  if (tasks.empty()) throw TaskError("maml_outer_step: need at least one task");
  Tensor avg({std::max<int64_t>(theta.flat_len(), 1)});
  MetaGradReport merged;
  merged.grad_theta = avg;

  for (size_t i = 0; i < tasks.size(); ++i) {
    const EpisodeTask& task = tasks[i];
    try {
      std::vector<Batch> batches(static_cast<size_t>(schedule.num_windows()), task.support);
      OptState s1 = OptState::initial(theta.flatten());
      Trajectory traj = unroll_inner(*task.inner, theta, theta, s1, hp_inner, schedule, batches);

      Tensor estimate;
      switch (estimator) {
        case Estimator::Exact:
        case Estimator::MultiStep: {
          MetaGradReport r =
              meta_gradient(traj, *task.outer, theta, ParamMode::SharedInit, task.query);
          estimate = std::move(r.grad_theta);
          merged.counters.merge(r.counters);
          merged.peak_tape_bytes = std::max(merged.peak_tape_bytes, r.peak_tape_bytes);
          merged.outer_loss += r.outer_loss;
          break;
        }
        case Estimator::FirstOrder: {
          MetaGradReport r = meta_gradient_first_order(traj, *task.outer, theta,
                                                       ParamMode::SharedInit, task.query);
          estimate = std::move(r.grad_theta);
          merged.counters.merge(r.counters);
          merged.peak_tape_bytes = std::max(merged.peak_tape_bytes, r.peak_tape_bytes);
          merged.outer_loss += r.outer_loss;
          break;
        }
        case Estimator::Reptile: {
          estimate = reptile_delta(theta, traj);
          merged.counters.merge(traj.counters);
          merged.outer_loss +=
              loss_value(*task.outer, theta.with_flat(traj.final_state().phi), theta, task.query);
          break;
        }
      }
      avg = add_scaled(avg, estimate, 1.0 / static_cast<double>(tasks.size()));
    } catch (const NonFiniteLoss& e) {
      throw TaskError("task " + std::to_string(i) + ": " + e.what());
    }
  }

  merged.outer_loss /= static_cast<double>(tasks.size());
  merged.grad_theta = avg;
  if (report) *report = std::move(merged);

  return theta.with_flat(add_scaled(theta.flatten(), avg, -eta_meta));
}

MetaNetStepResult metanet_outer_step(const ParamGroup& theta, const ParamGroup& phi,
                                     const Batch& batch, const TransferObjective& objective,
                                     const HyperParams& hp, double eta_meta,
                                     const WindowSchedule& schedule, Estimator estimator) {
  MetaNetStepResult out;

  // Plain (non-differentiated) update of the task-parameters on the total
  // loss, from zero velocity; the trajectory then restarts at v = 0.
  EvalCounters line5;
  Tensor g_total = grad(*objective.total, phi, theta, batch, &line5);
  OptState updated = step(OptState::initial(phi.flatten()), g_total, hp);
  out.phi_next = phi.with_flat(updated.phi);

  // Recorded part: K windows on the transfer loss, one step on the
  // classification loss, then the meta-gradient of the classification loss.
  Trajectory traj =
      start_trajectory(phi, theta, OptState::initial(out.phi_next.flatten()), hp);
  for (int k = 0; k < schedule.num_windows(); ++k)
    extend_trajectory(traj, *objective.tfr, batch, schedule.window_length(k));
  extend_trajectory(traj, *objective.acc, batch, 1);
  traj.counters.merge(line5);

  MetaGradReport report;
  if (estimator == Estimator::FirstOrder)
    report = meta_gradient_first_order(traj, *objective.acc, theta, ParamMode::MetaNetwork, batch);
  else
    report = meta_gradient(traj, *objective.acc, theta, ParamMode::MetaNetwork, batch);

  out.theta_next = theta.with_flat(add_scaled(theta.flatten(), report.grad_theta, -eta_meta));
  out.report = std::move(report);
  out.trajectory = std::move(traj);
  return out;
}

}  // namespace metastep

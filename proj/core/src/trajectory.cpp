#include "metastep/trajectory.hpp"

#include <string>

namespace metastep {

Trajectory start_trajectory(const ParamGroup& phi_template, const ParamGroup& theta, OptState s1,
                            const HyperParams& hp) {
  hp.validate();
  if (s1.phi.numel() != phi_template.flat_len())
    throw DimensionMismatch("start_trajectory: s1.phi length " + std::to_string(s1.phi.numel()) +
                            " != template flat length " +
                            std::to_string(phi_template.flat_len()));
  check_same_len(s1.phi, s1.vel, "start_trajectory");
  Trajectory traj;
  traj.phi_layout = phi_template.zeros_like();
  traj.theta = theta;
  traj.hp = hp;
  traj.states.push_back(std::move(s1));
  return traj;
}

void extend_trajectory(Trajectory& traj, const LossGraph& loss, const Batch& batch, int length) {
  if (length < 1) throw ConfigError("extend_trajectory: window length must be >= 1");
  const OptState& anchor_state = traj.states.back();
  ParamGroup phi = traj.phi_layout.with_flat(anchor_state.phi);

  TrajectoryWindow window;
  window.anchor_step = anchor_state.step_index;
  window.length = length;
  window.loss = &loss;
  window.batch = batch;
  try {
    window.anchor =
        std::make_unique<AnchorEval>(loss, phi, traj.theta, batch, &traj.counters);
  } catch (const NonFiniteLoss& e) {
    throw NonFiniteLoss(std::string(e.what()) + " at inner step " +
                            std::to_string(anchor_state.step_index),
                        anchor_state.step_index);
  }

  const Tensor& g = window.anchor->grad();
  for (int i = 0; i < length; ++i) traj.states.push_back(step(traj.states.back(), g, traj.hp));
  traj.windows.push_back(std::move(window));
}

Trajectory unroll_inner(const LossGraph& loss, const ParamGroup& theta,
                        const ParamGroup& phi_template, const OptState& s1, const HyperParams& hp,
                        const WindowSchedule& schedule, std::span<const Batch> batches) {
  if (static_cast<int>(batches.size()) != schedule.num_windows())
    throw DimensionMismatch("unroll_inner: need one batch per anchor (" +
                            std::to_string(schedule.num_windows()) + "), got " +
                            std::to_string(batches.size()));
  Trajectory traj = start_trajectory(phi_template, theta, s1, hp);
  for (int k = 0; k < schedule.num_windows(); ++k)
    extend_trajectory(traj, loss, batches[static_cast<size_t>(k)], schedule.window_length(k));
  return traj;
}

}  // namespace metastep

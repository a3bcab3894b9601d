#pragma once

#include <memory>
#include <span>
#include <vector>

#include "metastep/dynamics.hpp"
#include "metastep/engine.hpp"
#include "metastep/schedule.hpp"

namespace metastep {

/// One window of the recorded forward pass: the anchor's gradient evaluation
/// (tape retained for the backward sweep) and the number of steps driven by
/// that frozen gradient.
struct TrajectoryWindow {
  int anchor_step = 0;  // 1-based index of the window's first step
  int length = 0;
  const LossGraph* loss = nullptr;
  Batch batch;
  std::unique_ptr<AnchorEval> anchor;
};

/// Recorded inner-optimization run: all states s_1..s_{T+1}, one retained
/// gradient evaluation per window. No checkpointing; everything needed by
/// the backward sweep stays resident, which is what the memory proxy counts.
struct Trajectory {
  std::vector<OptState> states;
  std::vector<TrajectoryWindow> windows;
  ParamGroup phi_layout;   // names/shapes for viewing flat states as groups
  ParamGroup theta;        // meta-parameters captured at unroll time
  HyperParams hp;
  EvalCounters counters;   // gradient evaluations performed during unrolling

  int total_steps() const { return static_cast<int>(states.size()) - 1; }
  const OptState& final_state() const { return states.back(); }

  const Tensor& anchor_grad(int window_index) const {
    return windows[static_cast<size_t>(window_index)].anchor->grad();
  }

  /// States + retained tapes + anchor gradients, in bytes.
  size_t retained_bytes() const {
    size_t b = 0;
    for (const auto& s : states) b += s.phi.byte_size() + s.vel.byte_size();
    for (const auto& w : windows) {
      b += w.anchor->tape_bytes();
      b += w.anchor->grad().byte_size();
    }
    return b;
  }
};

/// Open a trajectory at state s1. `phi_template` provides entry names and
/// shapes; s1.phi must match its flat length.
Trajectory start_trajectory(const ParamGroup& phi_template, const ParamGroup& theta, OptState s1,
                            const HyperParams& hp);

/// Evaluate `loss` at the current terminal state (the window's anchor),
/// retain the tape, and advance `length` steps reusing the anchor gradient.
void extend_trajectory(Trajectory& traj, const LossGraph& loss, const Batch& batch, int length);

/// Forward pass of the multi-step estimated dynamics: the gradient is
/// evaluated once per window and reused inside it. `batches` supplies one
/// batch per anchor.
Trajectory unroll_inner(const LossGraph& loss, const ParamGroup& theta,
                        const ParamGroup& phi_template, const OptState& s1, const HyperParams& hp,
                        const WindowSchedule& schedule, std::span<const Batch> batches);

}  // namespace metastep

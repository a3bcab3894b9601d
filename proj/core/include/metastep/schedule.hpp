#pragma once

#include <string>
#include <vector>

#include "metastep/errors.hpp"

namespace metastep {

/// Partition of T inner steps into non-overlapping windows of length n with
/// one gradient anchor at the first step of each window. n = 1 makes every
/// step an anchor (the exact method). When n does not divide T the final
/// window is truncated.
struct WindowSchedule {
  int total_steps = 0;   // T
  int window = 1;        // n
  std::vector<int> anchors;  // 1-based step indices: 1, n+1, 2n+1, ...

  static WindowSchedule make(int total_steps, int window) {
    if (total_steps < 1)
      throw ConfigError("WindowSchedule: total_steps must be >= 1, got " +
                        std::to_string(total_steps));
    if (window < 1)
      throw ConfigError("WindowSchedule: window must be >= 1, got " + std::to_string(window));
    WindowSchedule s;
    s.total_steps = total_steps;
    s.window = window;
    for (int t = 1; t <= total_steps; t += window) s.anchors.push_back(t);
    return s;
  }

  int num_windows() const { return static_cast<int>(anchors.size()); }

  /// Number of steps covered by window k (the last one may be shorter).
  int window_length(int k) const {
    int start = anchors[static_cast<size_t>(k)];
    int next = (k + 1 < num_windows()) ? anchors[static_cast<size_t>(k) + 1] : total_steps + 1;
    return next - start;
  }
};

}  // namespace metastep

#pragma once

#include "metastep/config.hpp"

namespace metastep {

/// Execute the configured experiment. Writes metrics.csv and summary.json
/// (plus mode-specific artifacts) under cfg.out_dir; summary.json is written
/// even on failure, with the error context. Returns a process exit status:
/// 0 ok, 2 configuration, 3 task/numerics, 4 I/O, 1 other.
int run(const RunConfig& cfg);

/// Run two configurations that differ only in estimator/window on identical
/// seeds and compare cost and outcome; writes bench_compare.json next to the
/// two run directories.
int bench_compare(const RunConfig& a, const RunConfig& b);

/// The Proposition 1 witness plus randomized hyper-parameter sweep in one
/// call; used by `run` for prop1 mode and by the CLI's prop1 subcommand.
int run_prop1(const RunConfig& cfg);

}  // namespace metastep

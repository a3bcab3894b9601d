#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metastep/errors.hpp"

namespace metastep {

/// Experiment configuration. Defaults follow the reference settings where
/// one exists (inner momentum 0.9, weight decay 1e-4, transfer-loss weight
/// 0.5); task sizes are desk-scale. All values are echoed into summary.json.
struct RunConfig {
  std::string mode = "maml-sinusoid";  // maml-sinusoid | maml-cluster | metatransfer |
                                       // prop1 | graddiff | bench
  std::string estimator = "exact";     // exact | multistep | first_order | reptile
  int window = 1;                      // n: steps sharing one gradient anchor
  int inner_steps = 4;                 // T
  double eta = 0.01;
  double mu = 0.9;
  double omega = 1e-4;
  double eta_meta = 0.002;
  std::string eta_meta_schedule = "constant";  // constant | cosine (outer loop only)
  double eta_meta_reptile = 0.05;  // Reptile moves theta toward phi_{T+1}
  int meta_batch = 4;
  int outer_iters = 2000;
  uint64_t seed = 7;
  std::string out_dir = "out";
  int eval_every = 200;
  int eval_tasks = 100;
  int eval_inner_steps = 0;  // adaptation steps at evaluation; 0 = inner_steps

  // few-shot task shapes
  int shots = 5;
  int query = 10;
  int ways = 5;
  int dim = 16;
  int hidden1 = 40;
  int hidden2 = 40;
  std::string activation = "tanh";  // tanh | relu | softplus (few-shot nets)
  double input_scale = 1.0;         // fixed input normalization for the few-shot nets

  // meta-transfer task shapes
  double beta = 0.5;
  int batch_size = 32;
  int input_dim = 8;
  int classes = 4;
  int src_h1 = 16, src_h2 = 12;
  int tgt_h1 = 12, tgt_h2 = 10;
  int train_per_class = 64;
  int eval_per_class = 32;
  int source_pretrain_steps = 500;

  bool graddiff = false;  // per-iteration gradient-difference diagnostic

  void validate() const;

  /// True when the estimator runs the adjoint sweep (exact or multistep).
  bool second_order_estimator() const {
    return estimator == "exact" || estimator == "multistep";
  }

  /// Window size the schedule uses: exact pins n = 1.
  int schedule_window() const { return estimator == "multistep" ? window : 1; }
};

/// key=value file with # comments and blank lines. Later keys override
/// earlier ones. Unknown keys and malformed values are reported with
/// file:line positions.
RunConfig load_config_file(const std::string& path);

/// Apply --key value overrides (keys mirror config keys).
void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv);

/// Apply one key=value assignment; `where` names the source for errors.
void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value,
                     const std::string& where);

/// SEED environment variable, when set, takes precedence over both the file
/// and the command line.
void apply_env_seed(RunConfig& cfg);

/// All (key, value) pairs in declaration order, for the summary echo.
std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg);

}  // namespace metastep

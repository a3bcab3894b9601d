#include "metastep/experiments.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "metastep/coeff.hpp"
#include "metastep/metrics.hpp"
#include "metastep/tasks.hpp"
#include "metastep/version.hpp"

namespace metastep {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Estimator parse_estimator(const std::string& s) {
  if (s == "exact") return Estimator::Exact;
  if (s == "multistep") return Estimator::MultiStep;
  if (s == "first_order") return Estimator::FirstOrder;
  if (s == "reptile") return Estimator::Reptile;
  throw ConfigError("estimator: unknown estimator '" + s + "'");
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

ordered_json summary_skeleton(const RunConfig& cfg) {
  ordered_json j;
  j["schema_version"] = kMetricsSchemaVersion;
  j["version"] = kVersionString;
  j["mode"] = cfg.mode;
  ordered_json echo;
  for (const auto& [k, v] : config_items(cfg)) echo[k] = v;
  j["config"] = echo;
  return j;
}

struct RunTotals {
  EvalCounters counters;
  uint64_t peak_tape_bytes = 0;
  double wall_time_seconds = 0.0;

  void absorb(const MetaGradReport& r) {
    counters.merge(r.counters);
    peak_tape_bytes = std::max<uint64_t>(peak_tape_bytes, r.peak_tape_bytes);
  }
  ordered_json to_json() const {
    return ordered_json{{"hvp_count", counters.hvp_count},
                        {"cross_vp_count", counters.cross_vp_count},
                        {"first_order_grad_count", counters.first_order_grad_count},
                        {"peak_tape_bytes", peak_tape_bytes},
                        {"wall_time_seconds", wall_time_seconds}};
  }
};

// ---------------------------------------------------------------------------
// Shared-initialization few-shot training (sinusoid regression and cluster
// classification).
// ---------------------------------------------------------------------------

struct FewShotEval {
  double pre_loss = 0.0;
  double post_loss = 0.0;
  double post_accuracy = 0.0;        // classification only
  double improved_fraction = 0.0;    // tasks where post < pre
};

Episode sample_episode(Rng& rng, const RunConfig& cfg, bool classification) {
  if (classification)
    return sample_cluster_episode(rng, cfg.ways, cfg.shots, cfg.query, cfg.dim);
  return sample_sinusoid(rng, cfg.shots, cfg.query);
}

FewShotEval evaluate_few_shot(const RunConfig& cfg, const MlpSpec& spec, const LossGraph& loss,
                              const ParamGroup& theta, const std::vector<Episode>& episodes,
                              const HyperParams& hp, bool classification) {
  // Evaluation adapts with plain (every-step) gradients; the window schedule
  // only matters while estimating meta-gradients.
  int steps = cfg.eval_inner_steps > 0 ? cfg.eval_inner_steps : cfg.inner_steps;
  WindowSchedule schedule = WindowSchedule::make(steps, 1);
  FewShotEval eval;
  int improved = 0;
  for (const auto& ep : episodes) {
    Batch query = ep.query;
    double pre = loss_value(loss, theta, theta, query);
    std::vector<Batch> batches(static_cast<size_t>(schedule.num_windows()), ep.support);
    Trajectory traj =
        unroll_inner(loss, theta, theta, OptState::initial(theta.flatten()), hp, schedule, batches);
    ParamGroup adapted = theta.with_flat(traj.final_state().phi);
    double post = loss_value(loss, adapted, theta, query);
    eval.pre_loss += pre;
    eval.post_loss += post;
    if (classification) eval.post_accuracy += accuracy(spec, adapted, query);
    if (post < pre) ++improved;
  }
  double n = static_cast<double>(episodes.size());
  eval.pre_loss /= n;
  eval.post_loss /= n;
  eval.post_accuracy /= n;
  eval.improved_fraction = improved / n;
  return eval;
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "softplus") return Activation::Softplus;
  throw ConfigError("activation: unknown activation '" + s + "'");
}

/// Outer-loop learning rate at iteration `iter` of `total` (1-based).
/// Cosine annealing applies to the outer training loop only.
double meta_lr_at(const RunConfig& cfg, double base, int iter, int total) {
  if (cfg.eta_meta_schedule == "cosine")
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * (iter - 1) / total)) * base;
  return base;
}

void run_maml(const RunConfig& cfg, const fs::path& out, ordered_json& summary) {
  bool classification = cfg.mode == "maml-cluster";
  MlpSpec spec;
  spec.input = classification ? cfg.dim : 1;
  spec.output = classification ? cfg.ways : 1;
  spec.act = parse_activation(cfg.activation);
  spec.input_scale = cfg.input_scale;
  if (cfg.hidden1 > 0) spec.hidden.push_back(cfg.hidden1);
  if (cfg.hidden2 > 0) spec.hidden.push_back(cfg.hidden2);
  LossGraph loss = classification ? mlp_ce_loss(spec) : mlp_mse_loss(spec);

  Rng train_rng(cfg.seed);
  Rng eval_rng(cfg.seed ^ 0x5eedULL);
  ParamGroup theta = init_mlp(spec, train_rng);

  std::vector<Episode> eval_episodes;
  eval_episodes.reserve(static_cast<size_t>(cfg.eval_tasks));
  for (int i = 0; i < cfg.eval_tasks; ++i)
    eval_episodes.push_back(sample_episode(eval_rng, cfg, classification));

  HyperParams hp{cfg.eta, cfg.mu, cfg.omega};
  WindowSchedule schedule = WindowSchedule::make(cfg.inner_steps, cfg.schedule_window());
  Estimator est = parse_estimator(cfg.estimator);
  double eta_meta = est == Estimator::Reptile ? cfg.eta_meta_reptile : cfg.eta_meta;

  MetricsWriter metrics((out / "metrics.csv").string());
  RunTotals totals;
  auto t0 = Clock::now();
  FewShotEval last_eval;

  for (int iter = 1; iter <= cfg.outer_iters; ++iter) {
    std::vector<EpisodeTask> tasks;
    tasks.reserve(static_cast<size_t>(cfg.meta_batch));
    std::vector<Episode> episodes;
    episodes.reserve(static_cast<size_t>(cfg.meta_batch));
    for (int m = 0; m < cfg.meta_batch; ++m)
      episodes.push_back(sample_episode(train_rng, cfg, classification));
    for (const auto& ep : episodes) tasks.push_back({&loss, &loss, ep.support, ep.query});

    MetaGradReport report;
    double lr = meta_lr_at(cfg, eta_meta, iter, cfg.outer_iters);
    theta = maml_outer_step(theta, tasks, hp, lr, schedule, est, &report);
    totals.absorb(report);

    MetricsRecord rec;
    rec.outer_iter = iter;
    rec.train_loss = report.outer_loss;
    rec.hvp_count = report.counters.hvp_count;
    rec.cross_vp_count = report.counters.cross_vp_count;
    rec.first_order_grad_count = report.counters.first_order_grad_count;
    rec.peak_tape_bytes = report.peak_tape_bytes;
    if (iter % cfg.eval_every == 0 || iter == cfg.outer_iters) {
      last_eval = evaluate_few_shot(cfg, spec, loss, theta, eval_episodes, hp, classification);
      rec.eval_loss = last_eval.pre_loss;
      rec.post_adapt_metric = classification ? last_eval.post_accuracy : last_eval.post_loss;
    }
    metrics.write(rec);
  }
  totals.wall_time_seconds = seconds_since(t0);

  summary["totals"] = totals.to_json();
  summary["final"] = ordered_json{{"pre_adapt_loss", last_eval.pre_loss},
                                  {"post_adapt_loss", last_eval.post_loss},
                                  {"post_adapt_accuracy", last_eval.post_accuracy},
                                  {"improved_fraction", last_eval.improved_fraction},
                                  {"eval_tasks", cfg.eval_tasks}};
}

// ---------------------------------------------------------------------------
// Meta-transfer training (full algorithm) and the raw estimator benchmark.
// ---------------------------------------------------------------------------

TransferConfig transfer_config(const RunConfig& cfg) {
  TransferConfig t;
  t.input_dim = cfg.input_dim;
  t.classes = cfg.classes;
  t.src_h1 = cfg.src_h1;
  t.src_h2 = cfg.src_h2;
  t.tgt_h1 = cfg.tgt_h1;
  t.tgt_h2 = cfg.tgt_h2;
  t.beta = cfg.beta;
  t.train_per_class = cfg.train_per_class;
  t.eval_per_class = cfg.eval_per_class;
  t.source_pretrain_steps = cfg.source_pretrain_steps;
  return t;
}

void run_metatransfer(const RunConfig& cfg, const fs::path& out, ordered_json& summary) {
  Rng rng(cfg.seed);
  TransferProblem problem = make_transfer_problem(rng, transfer_config(cfg));
  ParamGroup theta = problem.theta0;
  ParamGroup phi = problem.phi0;

  HyperParams hp{cfg.eta, cfg.mu, cfg.omega};
  WindowSchedule schedule = WindowSchedule::make(cfg.inner_steps, cfg.schedule_window());
  Estimator est = parse_estimator(cfg.estimator);
  if (est == Estimator::Reptile)
    throw ConfigError("estimator: reptile assumes a shared parameter space and cannot "
                      "drive meta-network training");
  bool diagnostics = cfg.graddiff || cfg.mode == "graddiff";

  Batch eval_batch{problem.eval_x, problem.eval_y};
  MetricsWriter metrics((out / "metrics.csv").string());
  std::ofstream graddiff_csv;
  if (diagnostics) {
    graddiff_csv.open(out / "graddiff.csv", std::ios::binary);
    if (!graddiff_csv) throw IoError("cannot open graddiff.csv");
    graddiff_csv << "outer_iter,step,grad_diff\r\n";
  }

  RunTotals totals;
  auto t0 = Clock::now();
  std::vector<double> first_decile, last_decile;
  int decile = std::max(1, cfg.outer_iters / 10);
  double last_eval_loss = 0.0, last_eval_acc = 0.0;

  for (int iter = 1; iter <= cfg.outer_iters; ++iter) {
    Batch batch = sample_batch(rng, problem.train_x, problem.train_y, cfg.batch_size);
    MetaNetStepResult step_result = metanet_outer_step(
        theta, phi, batch, problem.task.objective(), hp,
        meta_lr_at(cfg, cfg.eta_meta, iter, cfg.outer_iters), schedule, est);

    MetricsRecord rec;
    rec.outer_iter = iter;
    rec.train_loss = step_result.report.outer_loss;
    rec.hvp_count = step_result.report.counters.hvp_count;
    rec.cross_vp_count = step_result.report.counters.cross_vp_count;
    rec.first_order_grad_count = step_result.report.counters.first_order_grad_count;
    rec.peak_tape_bytes = step_result.report.peak_tape_bytes;

    if (diagnostics) {
      GradDiffSeries series = grad_diff_series(step_result.trajectory, problem.task.tfr, theta);
      for (size_t t = 0; t < series.values.size(); ++t) {
        double v = series.values[t];
        graddiff_csv << iter << ',' << (t + 1) << ','
                     << (std::isnan(v) ? std::string("nan") : format_g17(v)) << "\r\n";
        if (!std::isnan(v)) {
          if (iter <= decile) first_decile.push_back(v);
          if (iter > cfg.outer_iters - decile) last_decile.push_back(v);
        }
      }
      rec.grad_diff_median = median_defined(series.values);
    }

    theta = std::move(step_result.theta_next);
    phi = std::move(step_result.phi_next);
    totals.absorb(step_result.report);

    if (iter % cfg.eval_every == 0 || iter == cfg.outer_iters) {
      last_eval_loss = loss_value(problem.task.acc, phi, theta, eval_batch);
      last_eval_acc = accuracy(problem.task.target_arch, phi, eval_batch);
      rec.eval_loss = last_eval_loss;
      rec.post_adapt_metric = last_eval_acc;
    }
    metrics.write(rec);
  }
  totals.wall_time_seconds = seconds_since(t0);

  summary["totals"] = totals.to_json();
  summary["final"] =
      ordered_json{{"eval_acc_loss", last_eval_loss}, {"eval_accuracy", last_eval_acc}};
  if (diagnostics) {
    double first_median = median_defined(first_decile);
    double last_median = median_defined(last_decile);
    summary["graddiff"] = ordered_json{
        {"first_decile_median", first_median},
        {"last_decile_median", last_median},
        {"trend_decreasing", last_median < first_median},
    };
  }
}

/// Raw estimator workload: the schedule's windows and the meta-gradient,
/// without the extra classification step of the full algorithm, so the
/// second-order counts per iteration equal the number of anchors exactly.
void run_bench(const RunConfig& cfg, const fs::path& out, ordered_json& summary) {
  Rng rng(cfg.seed);
  TransferProblem problem = make_transfer_problem(rng, transfer_config(cfg));
  ParamGroup theta = problem.theta0;
  ParamGroup phi = problem.phi0;

  HyperParams hp{cfg.eta, cfg.mu, cfg.omega};
  WindowSchedule schedule = WindowSchedule::make(cfg.inner_steps, cfg.schedule_window());
  Estimator est = parse_estimator(cfg.estimator);
  if (est == Estimator::Reptile)
    throw ConfigError("estimator: reptile assumes a shared parameter space and cannot "
                      "drive meta-network training");

  MetricsWriter metrics((out / "metrics.csv").string());
  RunTotals totals;
  auto t0 = Clock::now();
  double last_outer_loss = 0.0;

  for (int iter = 1; iter <= cfg.outer_iters; ++iter) {
    Batch batch = sample_batch(rng, problem.train_x, problem.train_y, cfg.batch_size);

    // Keep the task-parameters moving so the workload stays representative;
    // this update is not differentiated through.
    Tensor g_total = grad(*problem.task.objective().total, phi, theta, batch);
    phi = phi.with_flat(step(OptState::initial(phi.flatten()), g_total, hp).phi);

    std::vector<Batch> batches(static_cast<size_t>(schedule.num_windows()), batch);
    Trajectory traj = unroll_inner(problem.task.tfr, theta, phi, OptState::initial(phi.flatten()),
                                   hp, schedule, batches);
    MetaGradReport report;
    if (est == Estimator::FirstOrder)
      report = meta_gradient_first_order(traj, problem.task.acc, theta, ParamMode::MetaNetwork,
                                         batch);
    else
      report = meta_gradient(traj, problem.task.acc, theta, ParamMode::MetaNetwork, batch);
    theta = theta.with_flat(add_scaled(theta.flatten(), report.grad_theta,
                                       -meta_lr_at(cfg, cfg.eta_meta, iter, cfg.outer_iters)));
    last_outer_loss = report.outer_loss;
    totals.absorb(report);

    MetricsRecord rec;
    rec.outer_iter = iter;
    rec.train_loss = report.outer_loss;
    rec.hvp_count = report.counters.hvp_count;
    rec.cross_vp_count = report.counters.cross_vp_count;
    rec.first_order_grad_count = report.counters.first_order_grad_count;
    rec.peak_tape_bytes = report.peak_tape_bytes;
    metrics.write(rec);
  }
  totals.wall_time_seconds = seconds_since(t0);

  summary["totals"] = totals.to_json();
  summary["final"] = ordered_json{{"outer_loss", last_outer_loss}};
}

// ---------------------------------------------------------------------------
// Proposition 1 witness.
// ---------------------------------------------------------------------------

void run_prop1_mode(const RunConfig& cfg, const fs::path& out, ordered_json& summary) {
  HyperParams hp{cfg.eta, cfg.mu, cfg.omega};
  Prop1Witness w = prop1_witness(hp);

  ordered_json witness{{"hp", {{"eta", hp.eta}, {"mu", hp.mu}, {"omega", hp.omega}}},
                       {"b_tilde_4", w.b_tilde_4_phi},
                       {"b_7", w.b_7_phi},
                       {"gap", w.gap},
                       {"induced",
                        {{"eta_tilde", w.induced.eta_t},
                         {"omega_tilde", w.induced.omega_t},
                         {"mu_tilde", w.induced.mu_t}}}};
  write_json(out / "prop1_witness.json", witness);

  // Randomized sweep over admissible hyper-parameters with mu >= 0.5; a
  // zero gap here would be a discovered counterexample and fails the run.
  Rng rng(cfg.seed);
  int sweep_count = 100;
  double min_gap = 1e300;
  int positive = 0;
  for (int i = 0; i < sweep_count; ++i) {
    HyperParams sample{rng.uniform(0.01, 0.5), rng.uniform(0.5, 0.99), rng.uniform(0.0, 1e-3)};
    std::vector<double> gaps = prop1_gaps(sample, 6);
    double g4 = gaps[2];  // |b~_4 - b_7|
    min_gap = std::min(min_gap, g4);
    if (g4 > 1e-6) ++positive;
  }

  summary["witness"] = witness;
  summary["sweep"] = ordered_json{{"count", sweep_count},
                                  {"min_gap", min_gap},
                                  {"all_gaps_positive", positive == sweep_count}};

  // Header-only metrics file: this mode has no outer iterations.
  MetricsWriter metrics((out / "metrics.csv").string());
}

}  // namespace

int run_prop1(const RunConfig& cfg) { return run(cfg); }

int run(const RunConfig& cfg) {
  fs::path out(cfg.out_dir);
  ordered_json summary = summary_skeleton(cfg);
  auto t0 = Clock::now();
  int status = 0;
  try {
    cfg.validate();
    fs::create_directories(out);
    if (cfg.mode == "maml-sinusoid" || cfg.mode == "maml-cluster") {
      run_maml(cfg, out, summary);
    } else if (cfg.mode == "metatransfer" || cfg.mode == "graddiff") {
      run_metatransfer(cfg, out, summary);
    } else if (cfg.mode == "bench") {
      run_bench(cfg, out, summary);
    } else if (cfg.mode == "prop1") {
      run_prop1_mode(cfg, out, summary);
    } else {
      throw ConfigError("mode: unknown mode '" + cfg.mode + "'");
    }
  } catch (const ConfigError& e) {
    summary["error"] = ordered_json{{"type", "ConfigError"}, {"message", e.what()}};
    status = 2;
  } catch (const ConfigMismatch& e) {
    summary["error"] = ordered_json{{"type", "ConfigMismatch"}, {"message", e.what()}};
    status = 2;
  } catch (const NonFiniteLoss& e) {
    summary["error"] = ordered_json{{"type", "NonFiniteLoss"}, {"message", e.what()}};
    status = 3;
  } catch (const TaskError& e) {
    summary["error"] = ordered_json{{"type", "TaskError"}, {"message", e.what()}};
    status = 3;
  } catch (const IoError& e) {
    summary["error"] = ordered_json{{"type", "IoError"}, {"message", e.what()}};
    status = 4;
  } catch (const std::exception& e) {
    summary["error"] = ordered_json{{"type", "error"}, {"message", e.what()}};
    status = 1;
  }
  summary["run_wall_time_seconds"] = seconds_since(t0);
  try {
    fs::create_directories(out);
    write_json(out / "summary.json", summary);
  } catch (...) {
    if (status == 0) status = 4;
  }
  return status;
}

int bench_compare(const RunConfig& a, const RunConfig& b) {
  // The two runs must be the same experiment apart from the estimator.
  auto items_a = config_items(a);
  auto items_b = config_items(b);
  for (size_t i = 0; i < items_a.size(); ++i) {
    const auto& [key, va] = items_a[i];
    const auto& vb = items_b[i].second;
    if (key == "estimator" || key == "window" || key == "out_dir") continue;
    if (va != vb)
      throw ConfigMismatch("bench_compare: configs differ in '" + key + "' (" + va + " vs " + vb +
                           ")");
  }

  RunConfig ra = a, rb = b;
  if (ra.out_dir == rb.out_dir) {
    ra.out_dir += "/a";
    rb.out_dir += "/b";
  }
  int sa = run(ra);
  int sb = run(rb);
  if (sa != 0 || sb != 0) return std::max(sa, sb);

  auto load = [](const std::string& dir) {
    std::ifstream in(fs::path(dir) / "summary.json");
    if (!in) throw IoError("bench_compare: missing summary in " + dir);
    return ordered_json::parse(in);
  };
  ordered_json ja = load(ra.out_dir);
  ordered_json jb = load(rb.out_dir);

  auto ratio = [&](const char* key) {
    double x = ja["totals"][key].get<double>();
    double y = jb["totals"][key].get<double>();
    return y != 0.0 ? x / y : 0.0;
  };

  ordered_json report;
  report["config_a"] = ordered_json{{"estimator", a.estimator}, {"window", a.window},
                                    {"out_dir", ra.out_dir}};
  report["config_b"] = ordered_json{{"estimator", b.estimator}, {"window", b.window},
                                    {"out_dir", rb.out_dir}};
  report["wall_time_ratio"] = ratio("wall_time_seconds");
  report["hvp_ratio"] = ratio("hvp_count");
  report["cross_vp_ratio"] = ratio("cross_vp_count");
  report["peak_tape_bytes_ratio"] = ratio("peak_tape_bytes");

  ordered_json deltas;
  for (auto& [key, value] : ja["final"].items()) {
    if (!value.is_number() || !jb["final"].contains(key)) continue;
    deltas[key] = value.get<double>() - jb["final"][key].get<double>();
  }
  report["final_metric_deltas"] = deltas;

  fs::path out = fs::path(a.out_dir);
  fs::create_directories(out);
  write_json(out / "bench_compare.json", report);
  return 0;
}

}  // namespace metastep

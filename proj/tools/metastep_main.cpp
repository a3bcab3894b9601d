// Command-line front end: run / bench / prop1 / graddiff.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metastep/experiments.hpp"

namespace {

using metastep::RunConfig;

/// Registers one CLI option per config key so flags mirror config keys.
struct Overrides {
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    for (const auto& [key, def] : metastep::config_items(RunConfig{})) {
      cmd->add_option("--" + key, values[key], "override config key '" + key + "'");
    }
  }

  void apply(CLI::App* cmd, RunConfig& cfg) const {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& [key, value] : values)
      if (cmd->count("--" + key) > 0) kv.emplace_back(key, value);
    metastep::apply_overrides(cfg, kv);
  }
};

int fail(const std::exception& e, int code) {
  std::fprintf(stderr, "error: %s\n", e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metastep: meta-gradients through inner optimization, with multi-step "
               "gradient-reuse estimation"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "execute an experiment described by a config file");
  std::string run_config;
  run_cmd->add_option("--config", run_config, "key=value config file")->required();
  Overrides run_over;
  run_over.attach(run_cmd);

  auto* bench_cmd =
      app.add_subcommand("bench", "run two configs differing only in estimator and compare");
  std::string config_a, config_b;
  bench_cmd->add_option("--config-a", config_a, "first config file")->required();
  bench_cmd->add_option("--config-b", config_b, "second config file")->required();

  auto* prop1_cmd = app.add_subcommand("prop1", "one-step realizability witness and sweep");
  double eta = 0.1, mu = 0.9, omega = 0.0001;
  std::string prop1_out = "out/prop1";
  uint64_t prop1_seed = 7;
  prop1_cmd->add_option("--eta", eta, "inner learning rate");
  prop1_cmd->add_option("--mu", mu, "inner momentum");
  prop1_cmd->add_option("--omega", omega, "inner weight decay");
  prop1_cmd->add_option("--out-dir", prop1_out, "output directory");
  prop1_cmd->add_option("--seed", prop1_seed, "sweep seed");

  auto* graddiff_cmd =
      app.add_subcommand("graddiff", "meta-transfer run with the gradient-difference diagnostic");
  std::string graddiff_config;
  graddiff_cmd->add_option("--config", graddiff_config, "key=value config file")->required();
  Overrides graddiff_over;
  graddiff_over.attach(graddiff_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      RunConfig cfg = metastep::load_config_file(run_config);
      run_over.apply(run_cmd, cfg);
      metastep::apply_env_seed(cfg);
      int status = metastep::run(cfg);
      std::printf("run finished (status %d); artifacts in %s\n", status, cfg.out_dir.c_str());
      return status;
    }
    if (bench_cmd->parsed()) {
      RunConfig a = metastep::load_config_file(config_a);
      RunConfig b = metastep::load_config_file(config_b);
      metastep::apply_env_seed(a);
      metastep::apply_env_seed(b);
      int status = metastep::bench_compare(a, b);
      std::printf("bench finished (status %d); comparison in %s/bench_compare.json\n", status,
                  a.out_dir.c_str());
      return status;
    }
    if (prop1_cmd->parsed()) {
      RunConfig cfg;
      cfg.mode = "prop1";
      cfg.eta = eta;
      cfg.mu = mu;
      cfg.omega = omega;
      cfg.out_dir = prop1_out;
      cfg.seed = prop1_seed;
      metastep::apply_env_seed(cfg);
      int status = metastep::run(cfg);
      std::printf("prop1 finished (status %d); witness in %s/prop1_witness.json\n", status,
                  cfg.out_dir.c_str());
      return status;
    }
    if (graddiff_cmd->parsed()) {
      RunConfig cfg = metastep::load_config_file(graddiff_config);
      graddiff_over.apply(graddiff_cmd, cfg);
      cfg.mode = "graddiff";
      cfg.graddiff = true;
      metastep::apply_env_seed(cfg);
      int status = metastep::run(cfg);
      std::printf("graddiff finished (status %d); series in %s/graddiff.csv\n", status,
                  cfg.out_dir.c_str());
      return status;
    }
  } catch (const metastep::ConfigError& e) {
    return fail(e, 2);
  } catch (const metastep::ConfigMismatch& e) {
    return fail(e, 2);
  } catch (const metastep::IoError& e) {
    return fail(e, 4);
  } catch (const std::exception& e) {
    return fail(e, 1);
  }
  return 0;
}

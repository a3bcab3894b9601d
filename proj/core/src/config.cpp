#include "metastep/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace metastep {

namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& value, const std::string& where, const std::string& key) {
  std::istringstream in(value);
  T out;
  in >> out;
  if (in.fail() || !in.eof())
    throw ConfigError(where + ": bad value '" + value + "' for key '" + key + "'");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

#define NUM_FIELD(name, type)                                                         \
  {#name, Field{[](RunConfig& c, const std::string& v, const std::string& w) {        \
                  c.name = parse_number<type>(v, w, #name);                           \
                },                                                                    \
                [](const RunConfig& c) { return std::to_string(c.name); }}}

#define DBL_FIELD(name)                                                               \
  {#name, Field{[](RunConfig& c, const std::string& v, const std::string& w) {        \
                  c.name = parse_number<double>(v, w, #name);                         \
                },                                                                    \
                [](const RunConfig& c) { return format_double(c.name); }}}

#define STR_FIELD(name)                                                               \
  {#name, Field{[](RunConfig& c, const std::string& v, const std::string&) {          \
                  c.name = v;                                                         \
                },                                                                    \
                [](const RunConfig& c) { return c.name; }}}

const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> table = {
      STR_FIELD(mode),
      STR_FIELD(estimator),
      NUM_FIELD(window, int),
      NUM_FIELD(inner_steps, int),
      DBL_FIELD(eta),
      DBL_FIELD(mu),
      DBL_FIELD(omega),
      DBL_FIELD(eta_meta),
      STR_FIELD(eta_meta_schedule),
      DBL_FIELD(eta_meta_reptile),
      NUM_FIELD(meta_batch, int),
      NUM_FIELD(outer_iters, int),
      NUM_FIELD(seed, uint64_t),
      STR_FIELD(out_dir),
      NUM_FIELD(eval_every, int),
      NUM_FIELD(eval_tasks, int),
      NUM_FIELD(eval_inner_steps, int),
      NUM_FIELD(shots, int),
      NUM_FIELD(query, int),
      NUM_FIELD(ways, int),
      NUM_FIELD(dim, int),
      NUM_FIELD(hidden1, int),
      NUM_FIELD(hidden2, int),
      STR_FIELD(activation),
      DBL_FIELD(input_scale),
      DBL_FIELD(beta),
      NUM_FIELD(batch_size, int),
      NUM_FIELD(input_dim, int),
      NUM_FIELD(classes, int),
      NUM_FIELD(src_h1, int),
      NUM_FIELD(src_h2, int),
      NUM_FIELD(tgt_h1, int),
      NUM_FIELD(tgt_h2, int),
      NUM_FIELD(train_per_class, int),
      NUM_FIELD(eval_per_class, int),
      NUM_FIELD(source_pretrain_steps, int),
      {"graddiff", Field{[](RunConfig& c, const std::string& v, const std::string& w) {
                           if (v == "1" || v == "true")
                             c.graddiff = true;
                           else if (v == "0" || v == "false")
                             c.graddiff = false;
                           else
                             throw ConfigError(w + ": bad value '" + v + "' for key 'graddiff'");
                         },
                         [](const RunConfig& c) { return c.graddiff ? "1" : "0"; }}},
  };
  return table;
}

#undef NUM_FIELD
#undef DBL_FIELD
#undef STR_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : field_table())
    if (name == key) return &field;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value,
                     const std::string& where) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(where + ": unknown key '" + key + "'");
  f->set(cfg, value, where);
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string item = line;
    size_t hash = item.find('#');
    if (hash != std::string::npos) item = item.substr(0, hash);
    item = trim(item);
    if (item.empty()) continue;
    size_t eq = item.find('=');
    std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    std::string key = trim(item.substr(0, eq));
    std::string value = trim(item.substr(eq + 1));
    apply_key_value(cfg, key, value, where);
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg,
                     const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [key, value] : kv) apply_key_value(cfg, key, value, "command line");
}

void apply_env_seed(RunConfig& cfg) {
  const char* env = std::getenv("SEED");
  if (!env) return;
  cfg.seed = parse_number<uint64_t>(env, "environment", "SEED");
}

void RunConfig::validate() const {
  static const std::vector<std::string> modes = {"maml-sinusoid", "maml-cluster", "metatransfer",
                                                 "prop1", "graddiff", "bench"};
  static const std::vector<std::string> estimators = {"exact", "multistep", "first_order",
                                                      "reptile"};
  auto in = [](const std::vector<std::string>& xs, const std::string& x) {
    for (const auto& v : xs)
      if (v == x) return true;
    return false;
  };
  if (!in(modes, mode)) throw ConfigError("mode: unknown mode '" + mode + "'");
  if (!in(estimators, estimator)) throw ConfigError("estimator: unknown estimator '" + estimator + "'");
  if (window < 1) throw ConfigError("window: must be >= 1");
  if (inner_steps < 1) throw ConfigError("inner_steps: must be >= 1");
  if (!(eta > 0.0)) throw ConfigError("eta: must be > 0");
  if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("mu: must be in [0,1)");
  if (!(omega >= 0.0)) throw ConfigError("omega: must be >= 0");
  if (meta_batch < 1) throw ConfigError("meta_batch: must be >= 1");
  if (outer_iters < 1) throw ConfigError("outer_iters: must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every: must be >= 1");
  if (eval_tasks < 1) throw ConfigError("eval_tasks: must be >= 1");
  if (window > inner_steps)
    throw ConfigError("window: must not exceed inner_steps");
  if ((mode == "maml-cluster") && ways < 2) throw ConfigError("ways: must be >= 2");
  if (activation != "tanh" && activation != "relu" && activation != "softplus")
    throw ConfigError("activation: unknown activation '" + activation + "'");
  if (eta_meta_schedule != "constant" && eta_meta_schedule != "cosine")
    throw ConfigError("eta_meta_schedule: must be 'constant' or 'cosine'");
  if (mode == "graddiff" && estimator == "multistep" && window > 1)
    throw ConfigError("graddiff: diagnostic requires the exact schedule (window 1)");
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : field_table()) out.emplace_back(name, field.get(cfg));
  return out;
}

}  // namespace metastep

#include "sentinel/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "sentinel/attacks.hpp"

namespace sentinel {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_dlist(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

double parse_double_or_throw(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw std::runtime_error("config-parse-error: bad number for " + key);
  }
  return x;
}

long parse_long_or_throw(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw std::runtime_error("config-parse-error: bad integer for " + key);
  }
  return x;
}

bool parse_bool_or_throw(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::runtime_error("config-parse-error: bad bool for " + key);
}

std::vector<double> parse_dlist_or_throw(const std::string& key,
                                         const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_double_or_throw(key, trim(item)));
  }
  return out;
}

struct FieldDef {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::vector<FieldDef> build_schema() {
  std::vector<FieldDef> fields;
  auto add_double = [&](const char* key, auto member) {
    fields.push_back({key,
                      [key, member](ExperimentConfig& c, const std::string& v) {
                        c.*member = parse_double_or_throw(key, v);
                      },
                      [member](const ExperimentConfig& c) {
                        return fmt_double(c.*member);
                      }});
  };
  (void)add_double;

  auto add = [&](const char* key, auto setter, auto getter) {
    fields.push_back({key, setter, getter});
  };

#define FIELD_D(KEY, REF)                                             \
  add(KEY,                                                            \
      [](ExperimentConfig& c, const std::string& v) {                 \
        c.REF = parse_double_or_throw(KEY, v);                        \
      },                                                              \
      [](const ExperimentConfig& c) { return fmt_double(c.REF); })
#define FIELD_I(KEY, REF)                                             \
  add(KEY,                                                            \
      [](ExperimentConfig& c, const std::string& v) {                 \
        c.REF = static_cast<int>(parse_long_or_throw(KEY, v));        \
      },                                                              \
      [](const ExperimentConfig& c) { return std::to_string(c.REF); })
#define FIELD_L(KEY, REF)                                             \
  add(KEY,                                                            \
      [](ExperimentConfig& c, const std::string& v) {                 \
        c.REF = parse_long_or_throw(KEY, v);                          \
      },                                                              \
      [](const ExperimentConfig& c) { return std::to_string(c.REF); })
#define FIELD_B(KEY, REF)                                             \
  add(KEY,                                                            \
      [](ExperimentConfig& c, const std::string& v) {                 \
        c.REF = parse_bool_or_throw(KEY, v);                          \
      },                                                              \
      [](const ExperimentConfig& c) {                                 \
        return std::string(c.REF ? "true" : "false");                 \
      })

  add("mode",
      [](ExperimentConfig& c, const std::string& v) {
        if (v == "mesh") c.mode = RunMode::Mesh;
        else if (v == "swarm") c.mode = RunMode::Swarm;
        else if (v == "theory") c.mode = RunMode::Theory;
        else throw std::runtime_error("config-parse-error: bad mode " + v);
      },
      [](const ExperimentConfig& c) { return std::string(run_mode_name(c.mode)); });
  add("seed",
      [](ExperimentConfig& c, const std::string& v) {
        c.seed = static_cast<uint64_t>(parse_long_or_throw("seed", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.seed); });
  FIELD_L("run.warmup", warmup);
  FIELD_L("run.steps", steps);

  FIELD_I("topology.stages", topology.stages);
  FIELD_I("topology.replicas", topology.replicas);
  FIELD_I("topology.width", topology.width);

  FIELD_I("task.input_dim", task.input_dim);
  FIELD_I("task.target_dim", task.target_dim);
  FIELD_I("task.batch_size", task.batch_size);
  add("task.teacher_seed",
      [](ExperimentConfig& c, const std::string& v) {
        c.task.teacher_seed =
            static_cast<uint64_t>(parse_long_or_throw("task.teacher_seed", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.task.teacher_seed); });
  FIELD_D("task.teacher_scale", task.teacher_scale);

  FIELD_D("optimizer.eta", optimizer.learning_rate);
  FIELD_D("optimizer.beta", optimizer.momentum);
  add("optimizer.aggregation",
      [](ExperimentConfig& c, const std::string& v) {
        if (v == "mean") c.aggregation = AggregationMode::Mean;
        else if (v == "coordinate-median") c.aggregation = AggregationMode::CoordinateMedian;
        else throw std::runtime_error("config-parse-error: bad optimizer.aggregation " + v);
      },
      [](const ExperimentConfig& c) {
        return std::string(c.aggregation == AggregationMode::Mean
                               ? "mean"
                               : "coordinate-median");
      });

  FIELD_B("verification.enabled", verification.enabled);
  FIELD_D("verification.beta_h", verification.beta_h);
  FIELD_D("verification.beta_g", verification.beta_g);
  FIELD_I("verification.window", verification.window);
  FIELD_I("verification.max_violations", verification.max_violations);
  FIELD_L("verification.forgiveness", verification.forgiveness);
  FIELD_D("verification.alpha_fp", verification.alpha_fp);
  FIELD_D("verification.k0", verification.k0);
  FIELD_D("verification.growth", verification.growth);
  FIELD_D("verification.shrink", verification.shrink);
  FIELD_I("verification.max_adapt_iters", verification.max_adapt_iters);
  FIELD_D("verification.lambda_l1", verification.lambda_l1);
  FIELD_D("verification.lambda_l2", verification.lambda_l2);
  FIELD_D("verification.lambda_sfr", verification.lambda_sfr);
  FIELD_D("verification.lambda_sw", verification.lambda_sw);
  FIELD_D("verification.sfr_abs_floor", verification.sfr_abs_floor);
  FIELD_D("verification.gradient_band_scale", verification.gradient_band_scale);
  add("verification.metrics",
      [](ExperimentConfig& c, const std::string& v) {
        std::array<bool, kNumMetrics> mask = {false, false, false, false};
        std::stringstream ss(v);
        std::string item;
        bool any = false;
        while (std::getline(ss, item, ',')) {
          const std::string name = trim(item);
          if (name.empty()) continue;
          bool known = false;
          for (int m = 0; m < kNumMetrics; ++m) {
            if (name == metric_name(static_cast<Metric>(m))) {
              mask[m] = true;
              known = true;
            }
          }
          if (!known) {
            throw std::runtime_error(
                "config-parse-error: bad metric in verification.metrics: " + name);
          }
          any = true;
        }
        if (!any) {
          throw std::runtime_error(
              "config-parse-error: verification.metrics must name a metric");
        }
        c.verification.metrics_enabled = mask;
      },
      [](const ExperimentConfig& c) {
        std::string out;
        for (int m = 0; m < kNumMetrics; ++m) {
          if (!c.verification.metrics_enabled[m]) continue;
          if (!out.empty()) out += ",";
          out += metric_name(static_cast<Metric>(m));
        }
        return out;
      });
  FIELD_I("verification.n_proj", verification.n_proj);

  add("attack.variant",
      [](ExperimentConfig& c, const std::string& v) {
        if (v != "none" && v != "mixed") attack_variant_from_name(v);
        c.attack.variant = v;
      },
      [](const ExperimentConfig& c) { return c.attack.variant; });
  add("attack.target",
      [](ExperimentConfig& c, const std::string& v) {
        if (v != "activation" && v != "gradient") {
          throw std::runtime_error("config-parse-error: bad attack.target " + v);
        }
        c.attack.target = v;
      },
      [](const ExperimentConfig& c) { return c.attack.target; });
  FIELD_D("attack.fraction", attack.fraction);
  FIELD_D("attack.collusion", attack.collusion);
  FIELD_L("attack.start", attack.start);
  FIELD_D("attack.constant_value", attack.constant_value);
  FIELD_D("attack.scale", attack.scale);
  FIELD_D("attack.flip_prob", attack.flip_prob);
  FIELD_D("attack.sigma", attack.sigma);
  FIELD_B("attack.stealth", attack.stealth);
  FIELD_D("attack.stealth_scale", attack.stealth_scale);
  FIELD_I("attack.delay", attack.delay);
  FIELD_D("attack.quantile", attack.quantile);
  FIELD_D("attack.drift_rate", attack.drift_rate);
  FIELD_D("attack.noise_sigma", attack.noise_sigma);
  FIELD_B("attack.clip_norm_enabled", attack.clip_norm_enabled);
  FIELD_D("attack.clip_norm", attack.clip_norm);

  FIELD_I("swarm.trainers", swarm.trainers);
  FIELD_I("swarm.pool", swarm.pool);
  FIELD_I("swarm.micro_batch", swarm.micro_batch);
  FIELD_I("swarm.accumulation", swarm.accumulation);
  FIELD_I("swarm.compression_k", swarm.compression_k);
  FIELD_I("swarm.measure_every", swarm.measure_every);

  FIELD_B("output.trace", output.trace);
  FIELD_I("output.thresholds_every", output.thresholds_every);
  FIELD_I("output.validate_every", output.validate_every);

  FIELD_I("theory.d", theory.d);
  FIELD_I("theory.p", theory.p);
  FIELD_D("theory.eps_prob", theory.eps_prob);
  FIELD_I("theory.trials", theory.trials);
  FIELD_D("theory.tau", theory.tau);
  FIELD_D("theory.l_omega", theory.l_omega);
  FIELD_D("theory.gamma", theory.gamma);
  FIELD_D("theory.eps_pert", theory.eps_pert);
  FIELD_D("theory.eta", theory.eta);
  FIELD_D("theory.beta", theory.beta);
  FIELD_D("theory.smoothness", theory.smoothness);
  FIELD_D("theory.c_lyap", theory.c_lyap);
  FIELD_D("theory.eps1", theory.eps1);
  FIELD_D("theory.eps2", theory.eps2);
  FIELD_D("theory.eps3", theory.eps3);
  FIELD_B("theory.c2_abs_inner", theory.c2_abs_inner);
  FIELD_D("theory.sigma", theory.sigma);
  FIELD_D("theory.loss0", theory.loss0);
  FIELD_D("theory.loss_star", theory.loss_star);
  FIELD_L("theory.horizon", theory.horizon);
  add("theory.lipschitz_theta",
      [](ExperimentConfig& c, const std::string& v) {
        c.theory.lipschitz_theta = parse_dlist_or_throw("theory.lipschitz_theta", v);
      },
      [](const ExperimentConfig& c) { return fmt_dlist(c.theory.lipschitz_theta); });
  add("theory.lipschitz_f",
      [](ExperimentConfig& c, const std::string& v) {
        c.theory.lipschitz_f = parse_dlist_or_throw("theory.lipschitz_f", v);
      },
      [](const ExperimentConfig& c) { return fmt_dlist(c.theory.lipschitz_f); });
  FIELD_B("theory.estimate_from_model", theory.estimate_from_model);

#undef FIELD_D
#undef FIELD_I
#undef FIELD_L
#undef FIELD_B

  std::sort(fields.begin(), fields.end(),
            [](const FieldDef& a, const FieldDef& b) { return a.key < b.key; });
  return fields;
}

const std::vector<FieldDef>& schema() {
  static const std::vector<FieldDef> fields = build_schema();
  return fields;
}

const FieldDef* find_field(const std::string& key) {
  for (const auto& f : schema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void check(bool ok, const std::string& message) {
  if (!ok) throw std::runtime_error(message);
}

void validate(ExperimentConfig& cfg) {
  check(cfg.topology.stages >= 2, "config-invalid: topology.stages must be >= 2");
  check(cfg.topology.replicas >= 1, "config-invalid: topology.replicas must be >= 1");
  check(cfg.topology.width >= 2, "config-invalid: topology.width must be >= 2");
  check(cfg.task.input_dim >= 2, "config-invalid: task.input_dim must be >= 2");
  check(cfg.task.target_dim >= 1, "config-invalid: task.target_dim must be >= 1");
  check(cfg.task.batch_size >= 1, "config-invalid: task.batch_size must be >= 1");
  check(cfg.optimizer.learning_rate > 0, "config-invalid: optimizer.eta must be > 0");
  check(cfg.optimizer.momentum >= 0 && cfg.optimizer.momentum < 1,
        "config-invalid: optimizer.beta must be in [0,1)");
  check(cfg.verification.beta_h >= 0 && cfg.verification.beta_h < 1,
        "config-invalid: verification.beta_h must be in [0,1)");
  check(cfg.verification.beta_g >= 0 && cfg.verification.beta_g < 1,
        "config-invalid: verification.beta_g must be in [0,1)");
  check(cfg.verification.window >= 1, "config-invalid: verification.window must be >= 1");
  check(cfg.verification.max_violations >= 1,
        "config-invalid: verification.max_violations must be >= 1");
  check(cfg.verification.growth > 1, "config-invalid: verification.growth must be > 1");
  check(cfg.verification.shrink > 0 && cfg.verification.shrink < 1,
        "config-invalid: verification.shrink must be in (0,1)");
  check(cfg.warmup >= 1, "config-invalid: run.warmup must be >= 1");
  check(cfg.steps >= 0, "config-invalid: run.steps must be >= 0");

  check(cfg.attack.fraction >= 0, "config-invalid: attack.fraction must be >= 0");
  if (cfg.attack.variant != "none") {
    check(cfg.attack.fraction < 0.5, "honest-majority-violated: attack.fraction");
    check(cfg.attack.collusion > 0 && cfg.attack.collusion <= 1,
          "config-invalid: attack.collusion must be in (0,1]");
  }
  check(cfg.attack.flip_prob >= 0 && cfg.attack.flip_prob <= 1,
        "config-invalid: attack.flip_prob must be in [0,1]");
  check(cfg.attack.quantile >= 0 && cfg.attack.quantile <= 1,
        "config-invalid: attack.quantile must be in [0,1]");
  check(cfg.attack.delay >= 1, "config-invalid: attack.delay must be >= 1");
  if (cfg.attack.start < 0) cfg.attack.start = cfg.warmup + 1;
  check(cfg.attack.start > cfg.warmup,
        "config-invalid: attack.start must fall after run.warmup");

  check(cfg.swarm.trainers >= 1, "config-invalid: swarm.trainers must be >= 1");
  check(cfg.swarm.pool >= 1, "config-invalid: swarm.pool must be >= 1");
  check(cfg.swarm.micro_batch >= 1, "config-invalid: swarm.micro_batch must be >= 1");
  check(cfg.swarm.accumulation >= 1, "config-invalid: swarm.accumulation must be >= 1");
  check(cfg.swarm.compression_k >= 0,
        "config-invalid: swarm.compression_k must be >= 0");
  check(cfg.swarm.compression_k <= cfg.topology.width,
        "config-invalid: swarm.compression_k exceeds topology.width");

  check(cfg.theory.eps_prob > 0 && cfg.theory.eps_prob < 1,
        "config-invalid: theory.eps_prob must be in (0,1)");
  check(cfg.theory.gamma < 0.5, "honest-majority-violated: theory.gamma");
}

}  // namespace

const char* run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::Mesh: return "mesh";
    case RunMode::Swarm: return "swarm";
    case RunMode::Theory: return "theory";
  }
  return "unknown";
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config-parse-error: missing '=' at line " +
                               std::to_string(lineno));
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const FieldDef* field = find_field(key);
    if (field == nullptr) {
      throw std::runtime_error("unknown-key: " + key);
    }
    field->set(cfg, value);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config-io-error: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string emit_resolved_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : schema()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The seed stays out of the hash so sweeps over seeds group under one
  // configuration directory.
  std::string canonical;
  for (const auto& f : schema()) {
    if (f.key == "seed") continue;
    canonical += f.key;
    canonical += " = ";
    canonical += f.get(cfg);
    canonical += "\n";
  }
  const uint64_t h = fnv1a64(canonical);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sentinel

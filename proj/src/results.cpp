#include "sentinel/results.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace sentinel {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string file_header(const ResultsBundle& b) {
  return "# schema=1 config=" + config_hash(b.config) +
         " seed=" + std::to_string(b.config.seed) + "\n";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io-error: cannot write " + path.string());
  out << content;
}

}  // namespace

std::string metrics_to_json(const ResultsBundle& b) {
  nlohmann::json j;
  j["schema"] = 1;
  j["config_hash"] = config_hash(b.config);
  j["seed"] = b.config.seed;
  j["mode"] = run_mode_name(b.config.mode);
  j["attack"] = b.config.attack.variant;
  j["attack_target"] = b.config.attack.target;
  j["verification"] = b.config.verification.enabled;
  const RunMetrics& m = b.metrics;
  j["status"] = m.status;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  if (m.detection_speed) {
    j["detection_speed"] = *m.detection_speed;
  } else {
    j["detection_speed"] = nullptr;
  }
  j["true_positives"] = m.true_positives;
  j["false_positives"] = m.false_positives;
  j["malicious_activated"] = m.malicious_activated;
  j["bans"] = m.bans;
  j["flags"] = m.flags;
  j["verdicts"] = m.verdicts;
  j["flag_rate"] = m.flag_rate;
  j["initial_train_loss"] = m.initial_train_loss;
  j["final_train_loss"] = m.final_train_loss;
  if (m.final_val_loss) {
    j["final_val_loss"] = *m.final_val_loss;
  } else {
    j["final_val_loss"] = nullptr;
  }
  j["iterations_run"] = m.iterations_run;
  if (m.max_momentum_deviation) {
    j["max_momentum_deviation"] = *m.max_momentum_deviation;
  }
  if (m.worst_ema_variance_ratio) {
    j["worst_ema_variance_ratio"] = *m.worst_ema_variance_ratio;
  }
  return j.dump(2) + "\n";
}

std::string write_bundle(const ResultsBundle& b, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(out_dir) / config_hash(b.config) /
                       std::to_string(b.config.seed);
  fs::create_directories(dir);

  write_file(dir / "summary.json", metrics_to_json(b));

  {
    std::string s = file_header(b) + "# resolved configuration\n" +
                    emit_resolved_config(b.config);
    write_file(dir / "config.resolved", s);
  }

  {
    std::string s = file_header(b) + "iteration,train_loss,val_loss\n";
    for (const auto& row : b.loss) {
      s += std::to_string(row.iteration) + "," + fmt(row.train_loss) + ",";
      if (row.val_loss) s += fmt(*row.val_loss);
      s += "\n";
    }
    write_file(dir / "loss.csv", s);
  }

  {
    std::string s;
    {
      nlohmann::json meta;
      meta["schema"] = 1;
      meta["config_hash"] = config_hash(b.config);
      meta["seed"] = b.config.seed;
      s += meta.dump() + "\n";
    }
    for (const auto& e : b.events) {
      nlohmann::json j;
      j["t"] = e.iteration;
      j["stage"] = e.stage;
      j["replica"] = e.replica;
      j["kind"] = signal_kind_name(e.kind);
      j["action"] = e.action;
      j["metric"] = e.metric >= 0 ? metric_name(static_cast<Metric>(e.metric))
                                  : "none";
      j["gamma_value"] = e.gamma;
      j["tau_lower"] = e.tau_lower;
      j["tau_upper"] = e.tau_upper;
      s += j.dump() + "\n";
    }
    write_file(dir / "events.jsonl", s);
  }

  {
    std::string s = file_header(b) +
                    "iteration,stage,kind,metric,q1,q2,q3,k,tau_lower,tau_upper\n";
    for (const auto& row : b.thresholds) {
      s += std::to_string(row.iteration) + "," + std::to_string(row.stage) + "," +
           signal_kind_name(row.kind) + "," +
           metric_name(static_cast<Metric>(row.metric)) + "," + fmt(row.q1) + "," +
           fmt(row.q2) + "," + fmt(row.q3) + "," + fmt(row.k) + "," +
           fmt(row.tau_lower) + "," + fmt(row.tau_upper) + "\n";
    }
    write_file(dir / "thresholds.csv", s);
  }

  if (b.config.output.trace) {
    std::string s =
        file_header(b) +
        "iteration,stage,replica,kind,metric,gamma,tau_lower,tau_upper,verdict\n";
    for (const auto& row : b.trace) {
      s += std::to_string(row.iteration) + "," + std::to_string(row.stage) + "," +
           std::to_string(row.replica) + "," + signal_kind_name(row.kind) + "," +
           metric_name(static_cast<Metric>(row.metric)) + "," + fmt(row.gamma) +
           "," + fmt(row.tau_lower) + "," + fmt(row.tau_upper) + "," +
           row.verdict + "\n";
    }
    write_file(dir / "trace.csv", s);
  }

  if (b.config.mode == RunMode::Swarm) {
    std::string s = file_header(b) + "iteration,stage,kind,stddev,mean_norm\n";
    for (const auto& row : b.ema_variance) {
      s += std::to_string(row.iteration) + "," + std::to_string(row.stage) + "," +
           signal_kind_name(row.kind) + "," + fmt(row.stddev) + "," +
           fmt(row.mean_norm) + "\n";
    }
    write_file(dir / "ema_variance.csv", s);

    std::string audit;
    {
      nlohmann::json meta;
      meta["schema"] = 1;
      meta["config_hash"] = config_hash(b.config);
      meta["seed"] = b.config.seed;
      audit += meta.dump() + "\n";
    }
    for (const auto& row : b.ledger_audit) {
      nlohmann::json j;
      j["tick"] = row.tick;
      j["worker"] = row.worker_uid;
      j["action"] = row.action;
      j["violations"] = row.violations;
      j["trainer"] = row.trainer;
      audit += j.dump() + "\n";
    }
    write_file(dir / "ledger_audit.jsonl", audit);
  }

  return dir.string();
}

}  // namespace sentinel

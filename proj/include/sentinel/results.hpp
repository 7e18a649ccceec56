#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sentinel/config.hpp"
#include "sentinel/detector.hpp"

namespace sentinel {

struct LossRow {
  long iteration = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct DetectionEvent {
  long iteration = 0;
  int stage = 0;
  int replica = 0;
  SignalKind kind = SignalKind::Activation;
  std::string action;  // flag | taint | tainted-by-upstream | ban | natural-shift
  int metric = -1;
  double gamma = 0.0;
  double tau_lower = 0.0;
  double tau_upper = 0.0;
};

struct ThresholdSample {
  long iteration = 0;
  int stage = 0;
  SignalKind kind = SignalKind::Activation;
  int metric = 0;
  double q1 = 0, q2 = 0, q3 = 0, k = 0, tau_lower = 0, tau_upper = 0;
};

struct TraceRow {
  long iteration = 0;
  int stage = 0;
  int replica = 0;
  SignalKind kind = SignalKind::Activation;
  int metric = 0;
  double gamma = 0.0;
  double tau_lower = 0.0;
  double tau_upper = 0.0;
  std::string verdict;
};

struct EmaVarianceRow {
  long iteration = 0;
  int stage = 0;
  SignalKind kind = SignalKind::Activation;
  double stddev = 0.0;
  double mean_norm = 0.0;  // RMS of the cross-trainer mean EMA
};

struct LedgerAuditRow {
  long tick = 0;
  std::string worker_uid;
  std::string action;  // report | ban | forgive
  int violations = 0;
  int trainer = -1;
};

struct RunMetrics {
  std::string status = "completed";  // completed | diverged | stage-starved
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> detection_speed;  // mean iterations, detected only
  int true_positives = 0;
  int false_positives = 0;
  int malicious_activated = 0;
  int bans = 0;
  long flags = 0;
  long verdicts = 0;
  double flag_rate = 0.0;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;  // mean over the last 100 iterations
  std::optional<double> final_val_loss;
  long iterations_run = 0;
  // Momentum probe instrumentation (clip-norm runs only).
  std::optional<double> max_momentum_deviation;
  // Swarm: worst cross-trainer EMA stddev / mean-norm ratio observed.
  std::optional<double> worst_ema_variance_ratio;
};

struct ResultsBundle {
  ExperimentConfig config;
  RunMetrics metrics;
  std::vector<LossRow> loss;
  std::vector<DetectionEvent> events;
  std::vector<ThresholdSample> thresholds;
  std::vector<TraceRow> trace;
  std::vector<EmaVarianceRow> ema_variance;  // swarm only
  std::vector<LedgerAuditRow> ledger_audit;  // swarm only
};

/// Writes the bundle under <out>/<config-hash>/<seed>/ and returns that
/// directory. Files are byte-stable across reruns of the same config+seed.
std::string write_bundle(const ResultsBundle& bundle, const std::string& out_dir);

std::string metrics_to_json(const ResultsBundle& bundle);

}  // namespace sentinel

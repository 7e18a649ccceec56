#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "sentinel/attacks.hpp"
#include "sentinel/config.hpp"
#include "sentinel/detector.hpp"
#include "sentinel/model.hpp"
#include "sentinel/results.hpp"

namespace sentinel {

struct MeshTopology {
  int stages = 0;
  int replicas = 0;
  std::set<WorkerId> malicious;  // ground truth

  double gamma(int stage) const;
};

struct IterationReport {
  long iteration = 0;
  double train_loss = 0.0;
  int taints = 0;
  int bans = 0;
  int ema_skips = 0;
  int verdicts = 0;
  int flags = 0;
  std::map<int, int> verdicts_by_stage;
};

/// Per-iteration EMA bookkeeping captured for the purity replay test.
struct EmaAuditEntry {
  long iteration = 0;
  int stage = 0;
  SignalKind kind = SignalKind::Activation;
  std::vector<std::pair<int, Vec>> signals;  // present unbanned replicas
  std::set<int> excluded;                    // left out of the clean mean
  Vec ema_after;
};

/// Fixed DP x PP orchestration: warm-up, activation/gradient verification,
/// cascading taint, gradient replacement, consensus clearing, scoring.
class MeshSimulation {
 public:
  explicit MeshSimulation(const ExperimentConfig& cfg);

  ResultsBundle run();

  void run_warmup();
  IterationReport run_iteration(long t);

  const MeshTopology& topology() const { return topology_; }
  const VerdictLedger& ledger() const { return ledger_; }
  const AttackSchedule& schedule() const { return schedule_; }
  const DetectorBank& activation_bank(int stage) const;
  const DetectorBank& gradient_bank(int stage) const;
  const std::map<WorkerId, long>& first_attack_iterations() const {
    return first_attack_;
  }
  long warmup_steps() const { return cfg_.warmup; }
  void enable_ema_audit() { audit_enabled_ = true; }
  const std::vector<EmaAuditEntry>& ema_audit() const { return ema_audit_; }

 private:
  struct PassResult {
    int verdicts = 0;
    int flags = 0;
    int taints = 0;
    int bans = 0;
    bool natural_shift = false;
  };

  bool verification_active(long t) const;
  std::set<int> active_columns() const;
  void draw_batches(long t);
  PassResult verification_pass(SignalKind kind, int stage, long t,
                               const std::map<int, Vec>& signals,
                               const std::map<int, std::vector<Vec>>& rows,
                               DetectorBank& bank);
  void warmup_collect(SignalKind kind, int stage, long t,
                      const std::map<int, Vec>& signals, DetectorBank& bank);
  void update_ema(DetectorBank& bank, SignalKind kind, int stage, long t,
                  const std::map<int, Vec>& signals,
                  const std::set<int>& excluded, IterationReport& report);
  void adapt_bank(DetectorBank& bank, SignalKind kind, int stage, long t);
  void sample_thresholds(const DetectorBank& bank, SignalKind kind, int stage,
                         long t);
  void record_validation(long t);
  Vec probe_perturbation(const WorkerId& w, const Vec& honest_mean, long t);

  ExperimentConfig cfg_;
  MeshTopology topology_;
  std::vector<size_t> dims_;
  PipelineModel model_;
  PipelineModel teacher_;
  std::vector<StageOptimizerState> opt_;
  std::vector<Rng> data_rngs_;
  Batch validation_;

  AttackSchedule schedule_;
  std::map<WorkerId, std::unique_ptr<AttackerState>> attacker_state_;
  std::map<WorkerId, long> first_attack_;

  VerdictLedger ledger_;
  std::vector<DetectorBank> act_banks_;   // index: stage 1..p-1
  std::vector<DetectorBank> grad_banks_;  // index: stage 2..p

  // Momentum probe: nominal vs observed EMA banks, updated over the full
  // replica mean with no exclusions.
  std::vector<Vec> probe_act_nom_, probe_act_obs_;
  std::vector<Vec> probe_grad_nom_, probe_grad_obs_;
  double probe_max_deviation_ = 0.0;

  std::vector<Batch> batches_;  // per replica, redrawn each iteration
  std::set<WorkerId> active_attackers_;

  ResultsBundle bundle_;
  std::string status_ = "completed";
  long iterations_run_ = 0;
  long total_flags_ = 0;
  long total_verdicts_ = 0;
  int total_bans_ = 0;

  bool audit_enabled_ = false;
  std::vector<EmaAuditEntry> ema_audit_;
};

/// Precision/recall/F1 over banned-vs-ground-truth plus mean detection speed.
RunMetrics score_run(const MeshTopology& topology, const VerdictLedger& ledger,
                     const std::map<WorkerId, long>& first_attack);

}  // namespace sentinel

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sentinel/attacks.hpp"
#include "sentinel/config.hpp"
#include "sentinel/detector.hpp"
#include "sentinel/model.hpp"
#include "sentinel/results.hpp"

namespace sentinel {
namespace swarm {

/// Seeded orthonormal basis shared by every party; columns span the
/// compression subspace.
struct SubspaceBasis {
  Matrix u;  // m x k, U^T U = I_k

  size_t full_dim() const { return u.rows; }
  size_t compressed_dim() const { return u.cols; }
};

SubspaceBasis make_basis(size_t m, size_t k, Rng rng);
Vec compress(const Vec& x, const SubspaceBasis& basis);
Vec decompress(const Vec& xc, const SubspaceBasis& basis);

struct PoolWorker {
  std::string uid;
  int stage = 0;
  int index = 0;
  long load = 0;
  bool malicious = false;
};

/// Per-stage worker pool with load-aware routing.
class WorkerPool {
 public:
  void add(PoolWorker w) { workers_.push_back(std::move(w)); }
  /// Random unbanned worker weighted by 1/(1+load); bumps its load.
  /// Throws "stage-starved" when every worker is banned.
  PoolWorker& route(Rng& rng, const std::set<std::string>& banned);
  std::vector<PoolWorker>& workers() { return workers_; }
  const std::vector<PoolWorker>& workers() const { return workers_; }

 private:
  std::vector<PoolWorker> workers_;
};

struct LedgerEntry {
  int violations = 0;
  bool banned = false;
  long last_violation_tick = -1;
  long ban_tick = -1;
};

/// DHT-analog violation ledger shared by all trainers; updates are atomic
/// in the simulated schedule.
class SharedLedger {
 public:
  explicit SharedLedger(LedgerConfig cfg = {}) : cfg_(cfg) {}

  /// Returns true when this report banned the worker.
  bool report(const std::string& uid, bool severe, long tick,
              std::vector<LedgerAuditRow>* audit, int trainer);
  /// Ages violation counters: one decrement per forgiveness window since
  /// the last violation.
  void forgiveness_sweep(long tick, std::vector<LedgerAuditRow>* audit);
  bool is_banned(const std::string& uid) const;
  const std::map<std::string, LedgerEntry>& entries() const { return entries_; }
  std::set<std::string> banned_set() const;

 private:
  LedgerConfig cfg_;
  std::map<std::string, LedgerEntry> entries_;
};

/// One trainer: owns a micro-batch end to end, keeps its own EMAs,
/// histories and thresholds per stage and signal kind.
struct TrainerState {
  int id = 0;
  std::vector<DetectorBank> act_banks;   // stage 1..p-1
  std::vector<DetectorBank> grad_banks;  // stage 2..p
  Rng data_rng{0, "unset"};
  Rng route_rng{0, "unset"};
  long microbatches_done = 0;
};

struct SwarmRunStats {
  std::set<std::string> strong_attackers;  // constant/random-value/scaling
  std::set<std::string> banned_strong;
};

/// SWARM-mode simulation: stochastic routing over worker pools, per-trainer
/// verification, shared ledger, zero-tensor taint replacement.
class SwarmSimulation {
 public:
  explicit SwarmSimulation(const ExperimentConfig& cfg);

  ResultsBundle run();

  /// Drives one trainer through a full micro-batch (all forward and
  /// backward hops). Exposed for focused tests.
  struct MicrobatchReport {
    double loss = 0.0;
    bool tainted = false;
    int ledger_reports = 0;
  };
  MicrobatchReport trainer_step(int trainer_idx, long round);

  const SharedLedger& shared_ledger() const { return ledger_; }
  const std::vector<WorkerPool>& pools() const { return pools_; }
  const TrainerState& trainer(int i) const { return trainers_.at(i); }
  const std::map<std::string, long>& attack_starts() const { return attack_start_; }
  double worst_variance_ratio() const { return worst_variance_ratio_; }
  const std::map<std::string, AttackSpec>& malicious_specs() const {
    return malicious_specs_;
  }
  double cross_trainer_ema_stddev(int stage, SignalKind kind) const;
  double cross_trainer_mean_norm(int stage, SignalKind kind) const;
  const SubspaceBasis* basis() const { return basis_ ? &*basis_ : nullptr; }

 private:
  const DetectorBank& bank_of(const TrainerState& tr, SignalKind kind,
                              int stage) const;
  DetectorBank& bank_of(TrainerState& tr, SignalKind kind, int stage);
  Vec signal_view(const Matrix& m) const;  // batch mean, compressed if enabled
  bool worker_attacks(const PoolWorker& w, long round);
  void sync_emas();
  void measure_variance(long round);
  void optimizer_flush(int stage);

  ExperimentConfig cfg_;
  AdaptParams adapt_act_;
  AdaptParams adapt_grad_;
  std::vector<size_t> dims_;
  PipelineModel model_;
  PipelineModel teacher_;
  std::vector<StageOptimizerState> opt_;
  std::vector<StageGrads> accum_;
  std::vector<int> accum_count_;
  Batch validation_;

  std::vector<WorkerPool> pools_;
  std::map<std::string, std::unique_ptr<AttackerState>> attacker_state_;
  std::map<std::string, AttackSpec> malicious_specs_;
  std::map<std::string, long> first_attack_;
  std::map<std::string, long> attack_start_;
  std::set<std::string> colluding_now_;
  long collusion_round_ = -1;
  Rng collusion_rng_{0, "unset"};

  SharedLedger ledger_;
  std::vector<TrainerState> trainers_;
  std::optional<SubspaceBasis> basis_;

  ResultsBundle bundle_;
  std::string status_ = "completed";
  long total_flags_ = 0;
  long total_verdicts_ = 0;
  double worst_variance_ratio_ = 0.0;
};

}  // namespace swarm
}  // namespace sentinel

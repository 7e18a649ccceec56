#pragma once

#include <array>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sentinel/attacks.hpp"
#include "sentinel/numerics.hpp"

namespace sentinel {

enum class SignalKind { Activation, Gradient };
const char* signal_kind_name(SignalKind k);

enum class Metric : int { L1 = 0, L2 = 1, Sfr = 2, Sw = 3 };
inline constexpr int kNumMetrics = 4;
const char* metric_name(Metric m);

/// EMA reference update over the clean replica mean.
Vec ema_update(const Vec& m, const Vec& clean_mean, double beta);

double metric_l1(const Vec& x, const Vec& m);
double metric_l2_whitened(const Vec& x, const Vec& m);
double metric_sfr(const Vec& x, const Vec& m);  // sign(0) counts as +1
/// n_proj == 0: 1-D transport between the coordinate distributions.
/// n_proj >= 1: mean transport over seeded random unit projections of the
/// per-sample rows against the reference point.
double metric_sw(const Vec& x, const Vec& m, int n_proj = 0,
                 const std::vector<Vec>* sample_rows = nullptr,
                 Rng* proj_rng = nullptr);

/// Tukey-fence state for one (stage, metric, signal-kind) stream plus the
/// multiplier that the adaptive loop carries between iterations.
struct Thresholds {
  bool warmed = false;
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;
  double k = 1.5;
  double iqr = 0.0;  // floored at kIqrEpsilon
  double tau_lower = 0.0;
  double tau_upper = 0.0;
};

inline constexpr double kIqrEpsilon = 1e-12;

struct AdaptParams {
  double k0 = 1.5;
  double alpha_fp = 0.01;
  double growth = 1.2;
  double shrink = 0.9;
  int max_iters = 50;
  std::array<double, kNumMetrics> lambda = {5.0, 12.0, 2.5, 6.0};
  // Absolute fence floor per metric. The sign-flip ratio needs one: it is
  // already normalized to [0,1] and its benign median can be exactly zero,
  // where a relative floor collapses.
  std::array<double, kNumMetrics> min_abs = {0.0, 0.0, 0.35, 0.0};
};

/// Rolling window of benign deviations; only verdicts that were clean at
/// insertion time may enter.
class DeviationHistory {
 public:
  explicit DeviationHistory(size_t window = 100) : window_(window) {}
  void push(double value);
  bool empty() const { return values_.empty(); }
  size_t size() const { return values_.size(); }
  const std::deque<double>& values() const { return values_; }
  void set_window(size_t w) { window_ = w; trim(); }

 private:
  void trim();
  size_t window_;
  std::deque<double> values_;
};

/// True iff the deviation falls outside the stored fences.
/// Throws "not-warmed-up" before the first adapt_thresholds call.
bool tukey_flag(double gamma, const Thresholds& th);

/// Deviations 100x the allowed fence half-width warrant an immediate ban.
bool is_severe(double gamma, const Thresholds& th);

/// Recompute quartiles, adapt the multiplier toward the target false
/// positive rate, then push fences at least lambda*|median| from the median.
/// Throws "empty-history" on an empty window.
Thresholds adapt_thresholds(const DeviationHistory& history, Thresholds state,
                            const AdaptParams& params, Metric metric);

struct Verdict {
  enum class Outcome { Clean, Flagged, Severe };
  Outcome outcome = Outcome::Clean;
  std::array<double, kNumMetrics> gamma{};
  std::array<bool, kNumMetrics> flagged{};
  int severe_metric = -1;  // first metric whose severe rule fired

  bool is_clean() const { return outcome == Outcome::Clean; }
  bool is_severe() const { return outcome == Outcome::Severe; }
};

inline constexpr std::array<bool, kNumMetrics> kAllMetrics = {true, true,
                                                               true, true};

/// Evaluate the enabled metrics against the EMA and the per-metric fences.
/// Disabled metrics still report their deviation but never flag; running
/// with a single metric enabled is the distance-metric ablation.
Verdict verify_signal(const Vec& x, const Vec& ema,
                      const std::array<Thresholds, kNumMetrics>& thresholds,
                      int n_proj = 0,
                      const std::vector<Vec>* sample_rows = nullptr,
                      Rng* proj_rng = nullptr,
                      const std::array<bool, kNumMetrics>& enabled = kAllMetrics);

struct LedgerConfig {
  int max_violations = 5;     // c
  long forgiveness = 100;     // consecutive clean steps per decrement
};

struct WorkerStatus {
  int violations = 0;
  long consecutive_clean = 0;      // clean iterations, not clean verdicts
  long last_clean_iteration = -1;  // dedups the two per-iteration verdicts
  bool banned = false;
  long ban_iteration = -1;
};

struct LedgerAction {
  bool tainted = false;
  bool banned = false;
};

/// Violation counter with forgiveness. Throws "already-banned" when invoked
/// for a banned worker.
LedgerAction ledger_update(WorkerStatus& status, const Verdict& verdict,
                           long iteration, const LedgerConfig& cfg);

/// Detector state for one (stage, signal-kind) stream.
struct DetectorBank {
  Vec ema;
  std::array<DeviationHistory, kNumMetrics> history;
  std::array<Thresholds, kNumMetrics> thresholds;
};

/// Violation counters, bans, and the per-iteration taint view for one run.
class VerdictLedger {
 public:
  explicit VerdictLedger(LedgerConfig cfg = {}) : cfg_(cfg) {}

  WorkerStatus& status(const WorkerId& w) { return status_[w]; }
  const std::map<WorkerId, WorkerStatus>& all() const { return status_; }
  const LedgerConfig& config() const { return cfg_; }

  LedgerAction update(const WorkerId& w, const Verdict& v, long iteration);

  bool is_banned(const WorkerId& w) const;
  std::set<WorkerId> banned_set() const;

  void taint(long iteration, const WorkerId& w);
  bool tainted_this_iteration(long iteration, int replica) const;
  void begin_iteration(long iteration);
  const std::set<WorkerId>& taints_now() const { return taints_now_; }

 private:
  LedgerConfig cfg_;
  std::map<WorkerId, WorkerStatus> status_;
  long current_iteration_ = -1;
  std::set<WorkerId> taints_now_;     // (stage, replica) tainted this iteration
  std::set<int> tainted_replicas_;    // column view for cascade suppression
};

}  // namespace sentinel

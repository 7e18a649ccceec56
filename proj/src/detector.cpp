#include "sentinel/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentinel {

const char* signal_kind_name(SignalKind k) {
  return k == SignalKind::Activation ? "activation" : "gradient";
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::L1: return "l1";
    case Metric::L2: return "l2";
    case Metric::Sfr: return "sfr";
    case Metric::Sw: return "sw";
  }
  return "unknown";
}

Vec ema_update(const Vec& m, const Vec& clean_mean, double beta) {
  if (m.size() != clean_mean.size()) throw std::runtime_error("shape-mismatch");
  Vec out(m.size());
  for (size_t i = 0; i < m.size(); ++i) {
    out[i] = beta * m[i] + (1.0 - beta) * clean_mean[i];
  }
  return out;
}

double metric_l1(const Vec& x, const Vec& m) {
  if (x.size() != m.size()) throw std::runtime_error("shape-mismatch");
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - m[i]);
  return s / static_cast<double>(x.size());
}

double metric_l2_whitened(const Vec& x, const Vec& m) {
  const Vec wx = whiten(x);
  const Vec wm = whiten(m);
  double s = 0.0;
  for (size_t i = 0; i < wx.size(); ++i) {
    const double d = wx[i] - wm[i];
    s += d * d;
  }
  return s / static_cast<double>(wx.size());
}

namespace {
inline int sign_of(double v) { return v < 0.0 ? -1 : 1; }
}  // namespace

double metric_sfr(const Vec& x, const Vec& m) {
  if (x.size() != m.size()) throw std::runtime_error("shape-mismatch");
  size_t flips = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (sign_of(x[i]) != sign_of(m[i])) ++flips;
  }
  return static_cast<double>(flips) / static_cast<double>(x.size());
}

double metric_sw(const Vec& x, const Vec& m, int n_proj,
                 const std::vector<Vec>* sample_rows, Rng* proj_rng) {
  if (x.size() != m.size()) throw std::runtime_error("shape-mismatch");
  if (n_proj <= 0 || sample_rows == nullptr || proj_rng == nullptr ||
      sample_rows->empty()) {
    return wasserstein1d(x, m);
  }
  // Projected mode: compare the per-sample rows against the reference point
  // along seeded random directions.
  const size_t dim = m.size();
  double total = 0.0;
  for (int p = 0; p < n_proj; ++p) {
    Vec u(dim);
    for (double& v : u) v = proj_rng->normal();
    const double norm = std::max(l2_norm(u), 1e-12);
    for (double& v : u) v /= norm;
    double ref = 0.0;
    for (size_t j = 0; j < dim; ++j) ref += m[j] * u[j];
    Vec projected(sample_rows->size());
    for (size_t r = 0; r < sample_rows->size(); ++r) {
      const Vec& row = (*sample_rows)[r];
      double dot = 0.0;
      for (size_t j = 0; j < dim; ++j) dot += row[j] * u[j];
      projected[r] = dot;
    }
    total += wasserstein1d(projected, Vec(projected.size(), ref));
  }
  return total / static_cast<double>(n_proj);
}

void DeviationHistory::push(double value) {
  values_.push_back(value);
  trim();
}

void DeviationHistory::trim() {
  while (values_.size() > window_) values_.pop_front();
}

bool tukey_flag(double gamma, const Thresholds& th) {
  if (!th.warmed) throw std::runtime_error("not-warmed-up");
  return gamma < th.tau_lower || gamma > th.tau_upper;
}

bool is_severe(double gamma, const Thresholds& th) {
  if (!th.warmed) throw std::runtime_error("not-warmed-up");
  // A window with no spread has no meaningful "100x the fence" scale; the
  // violation counter handles those streams instead of an instant ban.
  if (th.iqr <= kIqrEpsilon) return false;
  return std::abs(gamma - th.q2) >= 100.0 * th.k * th.iqr;
}

Thresholds adapt_thresholds(const DeviationHistory& history, Thresholds state,
                            const AdaptParams& params, Metric metric) {
  if (history.empty()) throw std::runtime_error("empty-history");
  Vec values(history.values().begin(), history.values().end());

  Thresholds out = state;
  out.q1 = percentile(values, 0.25);
  out.q2 = percentile(values, 0.50);
  out.q3 = percentile(values, 0.75);
  out.iqr = std::max(out.q3 - out.q1, kIqrEpsilon);
  if (!out.warmed) out.k = params.k0;

  const auto fp_rate = [&](double k) {
    const double lo = out.q2 - k * out.iqr;
    const double hi = out.q2 + k * out.iqr;
    size_t outside = 0;
    for (double v : values) {
      if (v < lo || v > hi) ++outside;
    }
    return static_cast<double>(outside) / static_cast<double>(values.size());
  };

  // Widen while the window false-positive rate misses the target.
  double fp = fp_rate(out.k);
  for (int i = 0; i < params.max_iters && fp > params.alpha_fp; ++i) {
    out.k *= params.growth;
    fp = fp_rate(out.k);
  }
  // Narrow while it is far below the target ("<< alpha" read as alpha/10).
  // A shrink never re-raises the window rate past the target, otherwise a
  // gapped window would undo the widening pass in a single step.
  for (int i = 0; i < params.max_iters && fp < params.alpha_fp / 10.0; ++i) {
    const double k_next = out.k * params.shrink;
    const double fp_next = fp_rate(k_next);
    if (fp_next > params.alpha_fp) break;
    out.k = k_next;
    fp = fp_next;
  }

  out.tau_lower = out.q2 - out.k * out.iqr;
  out.tau_upper = out.q2 + out.k * out.iqr;

  // Keep the fences a minimum distance from the median.
  const int mi = static_cast<int>(metric);
  const double d_min =
      std::max(std::abs(out.q2) * params.lambda[mi], params.min_abs[mi]);
  out.tau_lower = std::min(out.tau_lower, out.q2 - d_min);
  out.tau_upper = std::max(out.tau_upper, out.q2 + d_min);

  out.warmed = true;
  return out;
}

Verdict verify_signal(const Vec& x, const Vec& ema,
                      const std::array<Thresholds, kNumMetrics>& thresholds,
                      int n_proj, const std::vector<Vec>* sample_rows,
                      Rng* proj_rng, const std::array<bool, kNumMetrics>& enabled) {
  Verdict v;
  v.gamma[static_cast<int>(Metric::L1)] = metric_l1(x, ema);
  v.gamma[static_cast<int>(Metric::L2)] = metric_l2_whitened(x, ema);
  v.gamma[static_cast<int>(Metric::Sfr)] = metric_sfr(x, ema);
  v.gamma[static_cast<int>(Metric::Sw)] =
      metric_sw(x, ema, n_proj, sample_rows, proj_rng);
  for (int i = 0; i < kNumMetrics; ++i) {
    if (!enabled[i]) continue;
    if (tukey_flag(v.gamma[i], thresholds[i])) {
      v.flagged[i] = true;
      v.outcome = Verdict::Outcome::Flagged;
      // Severe only escalates a flag; a fence narrower than the severe band
      // must not ban what it would not even flag.
      if (v.severe_metric < 0 && sentinel::is_severe(v.gamma[i], thresholds[i])) {
        v.severe_metric = i;
      }
    }
  }
  if (v.severe_metric >= 0) v.outcome = Verdict::Outcome::Severe;
  return v;
}

LedgerAction ledger_update(WorkerStatus& status, const Verdict& verdict,
                           long iteration, const LedgerConfig& cfg) {
  LedgerAction action;
  if (status.banned) throw std::runtime_error("already-banned");
  if (verdict.is_clean()) {
    if (iteration != status.last_clean_iteration) {
      status.last_clean_iteration = iteration;
      ++status.consecutive_clean;
      if (cfg.forgiveness > 0 &&
          status.consecutive_clean % cfg.forgiveness == 0 &&
          status.violations > 0) {
        --status.violations;
      }
    }
    return action;
  }
  status.consecutive_clean = 0;
  ++status.violations;
  action.tainted = true;
  if (verdict.is_severe() || status.violations >= cfg.max_violations) {
    status.banned = true;
    action.banned = true;
  }
  return action;
}

LedgerAction VerdictLedger::update(const WorkerId& w, const Verdict& v,
                                   long iteration) {
  WorkerStatus& st = status_[w];
  LedgerAction action = ledger_update(st, v, iteration, cfg_);
  if (action.banned && st.ban_iteration < 0) st.ban_iteration = iteration;
  return action;
}

bool VerdictLedger::is_banned(const WorkerId& w) const {
  auto it = status_.find(w);
  return it != status_.end() && it->second.banned;
}

std::set<WorkerId> VerdictLedger::banned_set() const {
  std::set<WorkerId> out;
  for (const auto& [w, st] : status_) {
    if (st.banned) out.insert(w);
  }
  return out;
}

void VerdictLedger::taint(long iteration, const WorkerId& w) {
  if (iteration != current_iteration_) begin_iteration(iteration);
  taints_now_.insert(w);
  tainted_replicas_.insert(w.replica);
}

bool VerdictLedger::tainted_this_iteration(long iteration, int replica) const {
  if (iteration != current_iteration_) return false;
  return tainted_replicas_.count(replica) > 0;
}

void VerdictLedger::begin_iteration(long iteration) {
  current_iteration_ = iteration;
  taints_now_.clear();
  tainted_replicas_.clear();
}

}  // namespace sentinel

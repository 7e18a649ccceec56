#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sentinel/numerics.hpp"

namespace sentinel {

enum class AttackVariant {
  Constant,
  RandomValue,
  Scaling,
  RandomSign,
  BiasAddition,
  Delay,
  InvisibleNoise,
  AdaptiveEma,
};

enum class AttackTarget { Activation, Gradient };

const char* attack_variant_name(AttackVariant v);
AttackVariant attack_variant_from_name(const std::string& name);

struct AttackSpec {
  AttackVariant variant = AttackVariant::Constant;
  AttackTarget target = AttackTarget::Activation;
  double constant_value = 0.0;
  double scale = 10.0;
  double flip_prob = 1.0;
  double sigma = 1.0;          // bias-addition noise scale
  bool stealth = false;        // bias-addition: sigma follows the signal norm
  double stealth_scale = 1.0;  // multiplier on stealth_sigma(x)
  int delay = 100;             // k >= 1
  double quantile = 0.01;      // invisible-noise alpha
  double drift_rate = 0.5;     // adaptive attack alpha
  double noise_sigma = 0.01;   // adaptive attack stealth noise
  double ema_beta = 0.9;       // adaptive attack / verifier decay
};

/// Holds the last k honest signals for a delay attacker; the attack is the
/// identity until it is full.
class DelayBuffer {
 public:
  explicit DelayBuffer(int k) : k_(k) {}
  bool full() const { return static_cast<int>(entries_.size()) >= k_; }
  std::optional<Vec> exchange(const Vec& honest);

 private:
  int k_;
  std::deque<Vec> entries_;
};

/// Per-attacker mutable state: delay ring, the attacker's private EMA of its
/// own honest signals, and the fixed drift target.
struct AttackerState {
  AttackerState(const AttackSpec& spec, Rng rng);

  AttackSpec spec;
  Rng rng;
  DelayBuffer delay_buffer;
  // Adaptive attack: EMA history so m_{t-delta} stays addressable.
  Vec ema;
  bool ema_started = false;
  std::deque<Vec> ema_history;
  int stale_lag = 0;
  Vec drift_target;
};

/// sigma = ||x||_2 / sqrt(m) so noise of that scale matches the signal norm.
double stealth_sigma(const Vec& x);

/// Produces the corrupted signal for `honest`; never mutates the input.
/// Stateful variants (delay, adaptive) read and advance `state`.
Vec apply_attack(AttackerState& state, const Vec& honest);

/// Advances stateful attack bookkeeping for a round where the attacker
/// stays quiet: the delay ring and the private EMA still see the honest
/// signal. No-op for memoryless variants.
void observe_attack(AttackerState& state, const Vec& honest);

struct WorkerId {
  int stage = 0;
  int replica = 0;
  bool operator<(const WorkerId& o) const {
    return stage != o.stage ? stage < o.stage : replica < o.replica;
  }
  bool operator==(const WorkerId& o) const {
    return stage == o.stage && replica == o.replica;
  }
};

struct ScheduledAttacker {
  WorkerId worker;
  AttackSpec spec;
  long start_iteration = 0;
};

/// Which workers are malicious, when they start, and how many collude per
/// round. Ground truth for run scoring lives here too.
class AttackSchedule {
 public:
  AttackSchedule() = default;
  AttackSchedule(std::vector<ScheduledAttacker> attackers, double collusion_fraction,
                 Rng rng);

  /// ceil(fraction * |eligible|) unbanned attackers past their start time,
  /// resampled every round from the schedule stream.
  std::set<WorkerId> active_attackers(long iteration,
                                      const std::set<WorkerId>& banned) const;

  const std::vector<ScheduledAttacker>& attackers() const { return attackers_; }
  bool is_malicious(const WorkerId& w) const;
  const ScheduledAttacker* find(const WorkerId& w) const;

 private:
  std::vector<ScheduledAttacker> attackers_;
  double collusion_fraction_ = 1.0;
  Rng rng_{0, "unused"};
};

}  // namespace sentinel

#include "sentinel/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentinel {

const char* attack_variant_name(AttackVariant v) {
  switch (v) {
    case AttackVariant::Constant: return "constant";
    case AttackVariant::RandomValue: return "random-value";
    case AttackVariant::Scaling: return "scaling";
    case AttackVariant::RandomSign: return "random-sign";
    case AttackVariant::BiasAddition: return "bias-addition";
    case AttackVariant::Delay: return "delay";
    case AttackVariant::InvisibleNoise: return "invisible-noise";
    case AttackVariant::AdaptiveEma: return "adaptive-ema";
  }
  return "unknown";
}

AttackVariant attack_variant_from_name(const std::string& name) {
  if (name == "constant") return AttackVariant::Constant;
  if (name == "random-value") return AttackVariant::RandomValue;
  if (name == "scaling") return AttackVariant::Scaling;
  if (name == "random-sign") return AttackVariant::RandomSign;
  if (name == "bias-addition") return AttackVariant::BiasAddition;
  if (name == "delay") return AttackVariant::Delay;
  if (name == "invisible-noise") return AttackVariant::InvisibleNoise;
  if (name == "adaptive-ema") return AttackVariant::AdaptiveEma;
  throw std::runtime_error("unknown-attack-variant: " + name);
}

std::optional<Vec> DelayBuffer::exchange(const Vec& honest) {
  std::optional<Vec> out;
  if (full()) {
    out = entries_.front();
    entries_.pop_front();
  }
  entries_.push_back(honest);
  return out;
}

AttackerState::AttackerState(const AttackSpec& s, Rng r)
    : spec(s), rng(r), delay_buffer(std::max(1, s.delay)) {
  if (spec.variant == AttackVariant::AdaptiveEma) {
    // delta = ceil(log 0.1 / log beta): the horizon after which a stale EMA
    // retains under 10% of its weight.
    stale_lag = static_cast<int>(
        std::ceil(std::log(0.1) / std::log(spec.ema_beta)));
  }
}

double stealth_sigma(const Vec& x) {
  if (x.empty()) throw std::runtime_error("empty-signal");
  return l2_norm(x) / std::sqrt(static_cast<double>(x.size()));
}

namespace {

// Track the attacker's private EMA of its own honest signals.
void advance_adaptive_state(AttackerState& st, const Vec& honest) {
  if (!st.ema_started) {
    st.ema.assign(honest.size(), 0.0);
    st.ema_started = true;
  }
  for (size_t i = 0; i < honest.size(); ++i) {
    st.ema[i] = st.spec.ema_beta * st.ema[i] + (1.0 - st.spec.ema_beta) * honest[i];
  }
  st.ema_history.push_back(st.ema);
  if (static_cast<int>(st.ema_history.size()) > st.stale_lag + 1) {
    st.ema_history.pop_front();
  }
}

Vec adaptive_ema_attack(AttackerState& st, const Vec& honest) {
  if (st.drift_target.empty()) {
    Vec t(honest.size());
    for (double& v : t) v = st.rng.normal();
    const double n = l2_norm(t);
    if (n > 0.0) {
      for (double& v : t) v /= n;
    }
    st.drift_target = std::move(t);
  }
  advance_adaptive_state(st, honest);
  // Inert until m_{t-delta} exists.
  if (static_cast<int>(st.ema_history.size()) <= st.stale_lag) return honest;
  const Vec& stale = st.ema_history.front();
  const double norm = std::max(l2_norm(stale), 1e-12);
  Vec out(honest.size());
  for (size_t i = 0; i < honest.size(); ++i) {
    out[i] = stale[i] + st.spec.drift_rate * (st.drift_target[i] - stale[i]) / norm +
             st.spec.noise_sigma * st.rng.normal();
  }
  return out;
}

}  // namespace

void observe_attack(AttackerState& st, const Vec& honest) {
  switch (st.spec.variant) {
    case AttackVariant::Delay:
      st.delay_buffer.exchange(honest);
      break;
    case AttackVariant::AdaptiveEma:
      advance_adaptive_state(st, honest);
      break;
    default:
      break;  // memoryless
  }
}

Vec apply_attack(AttackerState& st, const Vec& honest) {
  const AttackSpec& spec = st.spec;
  switch (spec.variant) {
    case AttackVariant::Constant:
      return Vec(honest.size(), spec.constant_value);
    case AttackVariant::RandomValue: {
      Vec out(honest.size());
      for (double& v : out) v = st.rng.normal();
      return out;
    }
    case AttackVariant::Scaling: {
      Vec out = honest;
      for (double& v : out) v *= spec.scale;
      return out;
    }
    case AttackVariant::RandomSign: {
      Vec out = honest;
      for (double& v : out) {
        if (st.rng.uniform() < spec.flip_prob) v = -v;
      }
      return out;
    }
    case AttackVariant::BiasAddition: {
      const double sigma =
          spec.stealth ? spec.stealth_scale * stealth_sigma(honest) : spec.sigma;
      Vec out = honest;
      for (double& v : out) v += sigma * st.rng.normal();
      return out;
    }
    case AttackVariant::Delay: {
      auto past = st.delay_buffer.exchange(honest);
      return past ? *past : honest;
    }
    case AttackVariant::InvisibleNoise: {
      // Boundary values just inside the (1 - alpha) quantile of the signal's
      // own statistics.
      const double p = 1.0 - spec.quantile;
      const double z_max = std::sqrt(2.0) * erfinv(2.0 * p - 1.0);
      const double mu = vec_mean(honest);
      Vec out(honest.size());
      for (size_t i = 0; i < honest.size(); ++i) {
        const double sigma_i = std::abs(honest[i] - mu);
        out[i] = mu + z_max * sigma_i * st.rng.normal();
      }
      return out;
    }
    case AttackVariant::AdaptiveEma:
      return adaptive_ema_attack(st, honest);
  }
  throw std::runtime_error("unknown-attack-variant");
}

AttackSchedule::AttackSchedule(std::vector<ScheduledAttacker> attackers,
                               double collusion_fraction, Rng rng)
    : attackers_(std::move(attackers)),
      collusion_fraction_(collusion_fraction),
      rng_(rng) {
  std::sort(attackers_.begin(), attackers_.end(),
            [](const ScheduledAttacker& a, const ScheduledAttacker& b) {
              return a.worker < b.worker;
            });
}

std::set<WorkerId> AttackSchedule::active_attackers(
    long iteration, const std::set<WorkerId>& banned) const {
  std::vector<const ScheduledAttacker*> eligible;
  for (const auto& a : attackers_) {
    if (iteration >= a.start_iteration && banned.count(a.worker) == 0) {
      eligible.push_back(&a);
    }
  }
  std::set<WorkerId> active;
  if (eligible.empty()) return active;
  const auto want = static_cast<size_t>(
      std::ceil(collusion_fraction_ * static_cast<double>(eligible.size())));
  const size_t count = std::min(want, eligible.size());
  // Partial Fisher-Yates on the eligible list, one fresh substream per round.
  Rng round_rng = rng_.derive("round/" + std::to_string(iteration));
  for (size_t i = 0; i < count; ++i) {
    const size_t j = i + round_rng.uniform_index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    active.insert(eligible[i]->worker);
  }
  return active;
}

bool AttackSchedule::is_malicious(const WorkerId& w) const {
  return find(w) != nullptr;
}

const ScheduledAttacker* AttackSchedule::find(const WorkerId& w) const {
  for (const auto& a : attackers_) {
    if (a.worker == w) return &a;
  }
  return nullptr;
}

}  // namespace sentinel

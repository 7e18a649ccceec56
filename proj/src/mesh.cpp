#include "sentinel/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentinel {

namespace {

Vec flatten(const Matrix& m) { return m.data; }

Matrix unflatten(const Vec& v, size_t rows, size_t cols) {
  Matrix m(rows, cols);
  m.data = v;
  return m;
}

Matrix broadcast_rows(const Vec& v, size_t rows) {
  Matrix m(rows, v.size());
  for (size_t i = 0; i < rows; ++i) {
    for (size_t j = 0; j < v.size(); ++j) m(i, j) = v[j];
  }
  return m;
}

std::vector<Vec> matrix_rows(const Matrix& m) {
  std::vector<Vec> rows(m.rows);
  for (size_t i = 0; i < m.rows; ++i) {
    rows[i].assign(m.data.begin() + i * m.cols, m.data.begin() + (i + 1) * m.cols);
  }
  return rows;
}

}  // namespace

double MeshTopology::gamma(int stage) const {
  int count = 0;
  for (const auto& w : malicious) {
    if (w.stage == stage) ++count;
  }
  return replicas > 0 ? static_cast<double>(count) / replicas : 0.0;
}

MeshSimulation::MeshSimulation(const ExperimentConfig& cfg) : cfg_(cfg) {
  const int p = cfg_.topology.stages;
  const int d = cfg_.topology.replicas;
  topology_.stages = p;
  topology_.replicas = d;

  dims_.push_back(cfg_.task.input_dim);
  for (int s = 1; s < p; ++s) dims_.push_back(cfg_.topology.width);
  dims_.push_back(cfg_.task.target_dim);

  teacher_ = make_pipeline(dims_, Rng(cfg_.task.teacher_seed, "teacher"),
                           cfg_.task.teacher_scale, 0.5 * cfg_.task.teacher_scale);
  model_ = make_pipeline(dims_, Rng(cfg_.seed, "model-init"));
  opt_ = make_optimizer_state(model_);

  for (int r = 0; r < d; ++r) {
    data_rngs_.emplace_back(cfg_.seed, "data/replica" + std::to_string(r));
  }
  {
    Rng vrng(cfg_.task.teacher_seed, "data/validation");
    Matrix vx(cfg_.task.batch_size, cfg_.task.input_dim);
    for (double& v : vx.data) v = vrng.normal();
    validation_.targets = teacher_.forward(vx);
    validation_.inputs = std::move(vx);
  }

  // Ground-truth malicious placement: stages 2..p-1, floor(fraction * d)
  // per stage, honest majority enforced.
  std::vector<ScheduledAttacker> attackers;
  if (cfg_.attack.variant != "none") {
    const int per_stage = static_cast<int>(cfg_.attack.fraction * d);
    if (2 * per_stage >= d) throw std::runtime_error("honest-majority-violated");
    Rng mixed_rng(cfg_.seed, "schedule/mixed");
    for (int s = 2; s <= p - 1; ++s) {
      Rng pick(cfg_.seed, "schedule/stage" + std::to_string(s));
      std::vector<int> replicas(d);
      for (int r = 0; r < d; ++r) replicas[r] = r;
      for (int i = 0; i < per_stage; ++i) {
        const size_t j = i + pick.uniform_index(replicas.size() - i);
        std::swap(replicas[i], replicas[j]);
        ScheduledAttacker a;
        a.worker = {s, replicas[i]};
        a.start_iteration = cfg_.attack.start;
        AttackSpec spec;
        if (cfg_.attack.variant == "mixed") {
          static const AttackVariant kPool[] = {
              AttackVariant::Constant,     AttackVariant::RandomValue,
              AttackVariant::Scaling,      AttackVariant::RandomSign,
              AttackVariant::BiasAddition, AttackVariant::Delay,
              AttackVariant::InvisibleNoise};
          spec.variant = kPool[mixed_rng.uniform_index(7)];
          spec.target = mixed_rng.uniform() < 0.5 ? AttackTarget::Activation
                                                  : AttackTarget::Gradient;
        } else {
          spec.variant = attack_variant_from_name(cfg_.attack.variant);
          spec.target = cfg_.attack.target == "gradient" ? AttackTarget::Gradient
                                                         : AttackTarget::Activation;
        }
        spec.constant_value = cfg_.attack.constant_value;
        spec.scale = cfg_.attack.scale;
        spec.flip_prob = cfg_.attack.flip_prob;
        spec.sigma = cfg_.attack.sigma;
        spec.stealth = cfg_.attack.stealth;
        spec.stealth_scale = cfg_.attack.stealth_scale;
        spec.delay = cfg_.attack.delay;
        spec.quantile = cfg_.attack.quantile;
        spec.drift_rate = cfg_.attack.drift_rate;
        spec.noise_sigma = cfg_.attack.noise_sigma;
        spec.ema_beta = spec.target == AttackTarget::Activation
                            ? cfg_.verification.beta_h
                            : cfg_.verification.beta_g;
        a.spec = spec;
        attackers.push_back(a);
        topology_.malicious.insert(a.worker);
      }
    }
  }
  schedule_ = AttackSchedule(attackers, cfg_.attack.collusion,
                             Rng(cfg_.seed, "schedule/collusion"));
  for (const auto& a : schedule_.attackers()) {
    attacker_state_[a.worker] = std::make_unique<AttackerState>(
        a.spec, Rng(cfg_.seed, "attack/stage" + std::to_string(a.worker.stage) +
                                   "/replica" + std::to_string(a.worker.replica)));
  }

  ledger_ = VerdictLedger(cfg_.verification.ledger_config());

  const size_t window_entries =
      static_cast<size_t>(cfg_.verification.window) * static_cast<size_t>(d);
  act_banks_.resize(p - 1);
  for (int s = 1; s <= p - 1; ++s) {
    DetectorBank& bank = act_banks_[s - 1];
    bank.ema.assign(dims_[s], 0.0);
    for (auto& h : bank.history) h.set_window(window_entries);
  }
  grad_banks_.resize(p - 1);
  for (int s = 2; s <= p; ++s) {
    DetectorBank& bank = grad_banks_[s - 2];
    bank.ema.assign(dims_[s - 1], 0.0);
    for (auto& h : bank.history) h.set_window(window_entries);
  }

  if (cfg_.attack.clip_norm_enabled) {
    probe_act_nom_.resize(p - 1);
    probe_act_obs_.resize(p - 1);
    for (int s = 1; s <= p - 1; ++s) {
      probe_act_nom_[s - 1].assign(dims_[s], 0.0);
      probe_act_obs_[s - 1].assign(dims_[s], 0.0);
    }
    probe_grad_nom_.resize(p - 1);
    probe_grad_obs_.resize(p - 1);
    for (int s = 2; s <= p; ++s) {
      probe_grad_nom_[s - 2].assign(dims_[s - 1], 0.0);
      probe_grad_obs_[s - 2].assign(dims_[s - 1], 0.0);
    }
  }

  batches_.resize(d);
  bundle_.config = cfg_;
}

const DetectorBank& MeshSimulation::activation_bank(int stage) const {
  return act_banks_.at(stage - 1);
}

const DetectorBank& MeshSimulation::gradient_bank(int stage) const {
  return grad_banks_.at(stage - 2);
}

bool MeshSimulation::verification_active(long t) const {
  return t > cfg_.warmup && cfg_.verification.enabled &&
         !cfg_.attack.clip_norm_enabled;
}

std::set<int> MeshSimulation::active_columns() const {
  std::set<int> cols;
  for (int r = 0; r < cfg_.topology.replicas; ++r) cols.insert(r);
  for (const auto& w : ledger_.banned_set()) cols.erase(w.replica);
  return cols;
}

void MeshSimulation::draw_batches(long /*t*/) {
  for (int r = 0; r < cfg_.topology.replicas; ++r) {
    Matrix x(cfg_.task.batch_size, cfg_.task.input_dim);
    for (double& v : x.data) v = data_rngs_[r].normal();
    batches_[r].targets = teacher_.forward(x);
    batches_[r].inputs = std::move(x);
  }
}

Vec MeshSimulation::probe_perturbation(const WorkerId& w, const Vec& honest_mean,
                                       long t) {
  auto it = attacker_state_.find(w);
  if (it == attacker_state_.end()) return honest_mean;
  Vec corrupted = apply_attack(*it->second, honest_mean);
  Vec delta(honest_mean.size());
  for (size_t i = 0; i < delta.size(); ++i) delta[i] = corrupted[i] - honest_mean[i];
  const double norm = l2_norm(delta);
  const double cap = cfg_.attack.clip_norm;
  if (norm > cap && norm > 0.0) {
    for (double& v : delta) v *= cap / norm;
  }
  if (first_attack_.find(w) == first_attack_.end()) first_attack_[w] = t;
  Vec out(honest_mean.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = honest_mean[i] + delta[i];
  return out;
}

void MeshSimulation::warmup_collect(SignalKind kind, int stage, long t,
                                    const std::map<int, Vec>& signals,
                                    DetectorBank& bank) {
  (void)t;
  (void)kind;
  (void)stage;
  for (const auto& [r, x] : signals) {
    (void)r;
    bank.history[static_cast<int>(Metric::L1)].push(metric_l1(x, bank.ema));
    bank.history[static_cast<int>(Metric::L2)].push(metric_l2_whitened(x, bank.ema));
    bank.history[static_cast<int>(Metric::Sfr)].push(metric_sfr(x, bank.ema));
    bank.history[static_cast<int>(Metric::Sw)].push(metric_sw(x, bank.ema));
  }
}

void MeshSimulation::update_ema(DetectorBank& bank, SignalKind kind, int stage,
                                long t, const std::map<int, Vec>& signals,
                                const std::set<int>& excluded,
                                IterationReport& report) {
  Vec mean(bank.ema.size(), 0.0);
  int count = 0;
  for (const auto& [r, x] : signals) {
    if (excluded.count(r)) continue;
    for (size_t i = 0; i < x.size(); ++i) mean[i] += x[i];
    ++count;
  }
  if (count == 0) {
    ++report.ema_skips;
    return;
  }
  for (double& v : mean) v /= count;
  const double beta = kind == SignalKind::Activation ? cfg_.verification.beta_h
                                                     : cfg_.verification.beta_g;
  bank.ema = ema_update(bank.ema, mean, beta);
  if (audit_enabled_) {
    EmaAuditEntry entry;
    entry.iteration = t;
    entry.stage = stage;
    entry.kind = kind;
    for (const auto& [r, x] : signals) entry.signals.emplace_back(r, x);
    entry.excluded = excluded;
    entry.ema_after = bank.ema;
    ema_audit_.push_back(std::move(entry));
  }
}

void MeshSimulation::adapt_bank(DetectorBank& bank, SignalKind kind, int stage,
                                long t) {
  (void)stage;
  (void)t;
  for (int m = 0; m < kNumMetrics; ++m) {
    if (bank.history[m].empty()) continue;
    bank.thresholds[m] = adapt_thresholds(bank.history[m], bank.thresholds[m],
                                          cfg_.verification.adapt_params(kind),
                                          static_cast<Metric>(m));
  }
}

void MeshSimulation::sample_thresholds(const DetectorBank& bank, SignalKind kind,
                                       int stage, long t) {
  if (cfg_.output.thresholds_every <= 0) return;
  if (t % cfg_.output.thresholds_every != 0) return;
  for (int m = 0; m < kNumMetrics; ++m) {
    const Thresholds& th = bank.thresholds[m];
    if (!th.warmed) continue;
    bundle_.thresholds.push_back(
        {t, stage, kind, m, th.q1, th.q2, th.q3, th.k, th.tau_lower, th.tau_upper});
  }
}

MeshSimulation::PassResult MeshSimulation::verification_pass(
    SignalKind kind, int stage, long t, const std::map<int, Vec>& signals,
    const std::map<int, std::vector<Vec>>& rows, DetectorBank& bank) {
  PassResult result;
  const int n_proj = cfg_.verification.n_proj;

  struct Entry {
    int replica;
    Verdict verdict;
    bool upstream_tainted;
  };
  std::vector<Entry> entries;
  for (const auto& [r, x] : signals) {
    const WorkerId worker{stage, r};
    if (ledger_.is_banned(worker)) continue;
    Rng proj_rng = Rng(cfg_.seed, "swproj")
                       .derive(std::to_string(t) + "/" + signal_kind_name(kind) +
                               "/" + std::to_string(stage) + "/" + std::to_string(r));
    const std::vector<Vec>* row_ptr = nullptr;
    if (n_proj > 0) {
      auto it = rows.find(r);
      if (it != rows.end()) row_ptr = &it->second;
    }
    Entry e{r, verify_signal(x, bank.ema, bank.thresholds, n_proj, row_ptr,
                             &proj_rng, cfg_.verification.metrics_enabled),
            ledger_.tainted_this_iteration(t, r)};
    entries.push_back(std::move(e));
  }

  int eligible = 0, fresh_flags = 0;
  for (const auto& e : entries) {
    if (e.upstream_tainted) continue;
    ++eligible;
    if (!e.verdict.is_clean()) ++fresh_flags;
  }
  result.verdicts = eligible;
  const bool natural_shift =
      eligible > 0 && fresh_flags > eligible / 2.0;
  result.natural_shift = natural_shift;
  if (natural_shift) {
    bundle_.events.push_back({t, stage, -1, kind, "natural-shift", -1,
                              static_cast<double>(fresh_flags),
                              static_cast<double>(eligible), 0.0});
  }

  for (const auto& e : entries) {
    const WorkerId worker{stage, e.replica};
    if (cfg_.output.trace) {
      for (int m = 0; m < kNumMetrics; ++m) {
        const char* verdict_label =
            e.upstream_tainted ? "tainted-by-upstream"
            : natural_shift    ? "natural-shift"
            : e.verdict.is_clean() ? "clean"
            : e.verdict.is_severe() ? "severe"
                                    : "flagged";
        bundle_.trace.push_back({t, stage, e.replica, kind, m, e.verdict.gamma[m],
                                 bank.thresholds[m].tau_lower,
                                 bank.thresholds[m].tau_upper, verdict_label});
      }
    }
    if (e.upstream_tainted) {
      // Diagnostics only; the column's statistics are suppressed here.
      bundle_.events.push_back({t, stage, e.replica, kind, "tainted-by-upstream",
                                -1, e.verdict.gamma[0], 0.0, 0.0});
      continue;
    }
    Verdict effective = e.verdict;
    if (natural_shift) {
      effective = Verdict{};
      effective.gamma = e.verdict.gamma;
    }
    const LedgerAction action = ledger_.update(worker, effective, t);
    if (effective.is_clean()) {
      for (int m = 0; m < kNumMetrics; ++m) bank.history[m].push(e.verdict.gamma[m]);
      continue;
    }
    ++result.flags;
    ++total_flags_;
    int flag_metric = e.verdict.severe_metric;
    if (flag_metric < 0) {
      for (int m = 0; m < kNumMetrics; ++m) {
        if (e.verdict.flagged[m]) {
          flag_metric = m;
          break;
        }
      }
    }
    const Thresholds& th = bank.thresholds[flag_metric];
    bundle_.events.push_back({t, stage, e.replica, kind, "flag", flag_metric,
                              e.verdict.gamma[flag_metric], th.tau_lower,
                              th.tau_upper});
    if (action.tainted) {
      ledger_.taint(t, worker);
      ++result.taints;
      bundle_.events.push_back({t, stage, e.replica, kind, "taint", flag_metric,
                                e.verdict.gamma[flag_metric], th.tau_lower,
                                th.tau_upper});
    }
    if (action.banned) {
      ++result.bans;
      ++total_bans_;
      bundle_.events.push_back({t, stage, e.replica, kind, "ban", flag_metric,
                                e.verdict.gamma[flag_metric], th.tau_lower,
                                th.tau_upper});
    }
  }
  total_verdicts_ += result.verdicts;
  return result;
}

void MeshSimulation::record_validation(long t) {
  if (cfg_.output.validate_every <= 0 || t % cfg_.output.validate_every != 0) {
    return;
  }
  const Matrix out = model_.forward(validation_.inputs);
  const auto [loss, grad] = loss_and_grad(out, validation_.targets);
  (void)grad;
  if (!bundle_.loss.empty() && bundle_.loss.back().iteration == t) {
    bundle_.loss.back().val_loss = loss;
  }
  bundle_.metrics.final_val_loss = loss;
}

IterationReport MeshSimulation::run_iteration(long t) {
  IterationReport report;
  report.iteration = t;
  const int p = cfg_.topology.stages;
  const bool verify = verification_active(t);
  const bool probe = cfg_.attack.clip_norm_enabled;

  ledger_.begin_iteration(t);
  const std::set<int> cols = active_columns();
  if (cols.empty()) {
    status_ = "no-active-replicas";
    return report;
  }
  draw_batches(t);
  active_attackers_ = schedule_.active_attackers(t, ledger_.banned_set());

  std::map<int, Matrix> h;
  for (int r : cols) h[r] = batches_[r].inputs;
  std::vector<StageCache> cached(p + 1);

  // Forward pass with activation verification.
  for (int s = 1; s <= p; ++s) {
    std::map<int, Matrix> out;
    for (int r : cols) {
      cached[s].store(r, h[r]);
      out[r] = stage_forward(model_.stages[s - 1], h[r]);
    }
    std::map<int, Matrix> submitted = out;
    if (s >= 2 && s <= p - 1 && !probe) {  // probe perturbs the verifier view only
      for (int r : cols) {
        const WorkerId w{s, r};
        auto it = attacker_state_.find(w);
        if (it == attacker_state_.end() ||
            it->second->spec.target != AttackTarget::Activation) {
          continue;
        }
        if (active_attackers_.count(w) == 0) {
          // Quiet round: stateful attacks still see their own honest signal.
          observe_attack(*it->second, flatten(out.at(r)));
          continue;
        }
        const Vec corrupted = apply_attack(*it->second, flatten(out.at(r)));
        submitted[r] = unflatten(corrupted, out.at(r).rows, out.at(r).cols);
        if (first_attack_.find(w) == first_attack_.end()) first_attack_[w] = t;
      }
    }
    if (s <= p - 1) {
      std::map<int, Vec> signals;
      std::map<int, std::vector<Vec>> rows;
      for (int r : cols) {
        signals[r] = batch_mean(submitted.at(r));
        if (cfg_.verification.n_proj > 0) rows[r] = matrix_rows(submitted.at(r));
      }
      if (probe) {
        std::map<int, Vec> observed = signals;
        for (int r : cols) {
          const WorkerId w{s, r};
          if (active_attackers_.count(w) &&
              attacker_state_.at(w)->spec.target == AttackTarget::Activation) {
            observed[r] = probe_perturbation(w, signals.at(r), t);
          }
        }
        Vec nom_mean(dims_[s], 0.0), obs_mean(dims_[s], 0.0);
        for (int r : cols) {
          for (size_t i = 0; i < nom_mean.size(); ++i) {
            nom_mean[i] += signals.at(r)[i];
            obs_mean[i] += observed.at(r)[i];
          }
        }
        for (size_t i = 0; i < nom_mean.size(); ++i) {
          nom_mean[i] /= cols.size();
          obs_mean[i] /= cols.size();
        }
        const double beta = cfg_.verification.beta_h;
        probe_act_nom_[s - 1] = ema_update(probe_act_nom_[s - 1], nom_mean, beta);
        probe_act_obs_[s - 1] = ema_update(probe_act_obs_[s - 1], obs_mean, beta);
        Vec diff(nom_mean.size());
        for (size_t i = 0; i < diff.size(); ++i) {
          diff[i] = probe_act_obs_[s - 1][i] - probe_act_nom_[s - 1][i];
        }
        probe_max_deviation_ = std::max(probe_max_deviation_, l2_norm(diff));
      } else if (verify) {
        DetectorBank& bank = act_banks_[s - 1];
        const PassResult pass =
            verification_pass(SignalKind::Activation, s, t, signals, rows, bank);
        report.verdicts_by_stage[s] += pass.verdicts;
        report.verdicts += pass.verdicts;
        report.flags += pass.flags;
        report.taints += pass.taints;
        report.bans += pass.bans;
        std::set<int> excluded;
        for (int r : cols) {
          if (ledger_.tainted_this_iteration(t, r)) excluded.insert(r);
        }
        update_ema(bank, SignalKind::Activation, s, t, signals, excluded, report);
        adapt_bank(bank, SignalKind::Activation, s, t);
        sample_thresholds(bank, SignalKind::Activation, s, t);
      } else {
        DetectorBank& bank = act_banks_[s - 1];
        warmup_collect(SignalKind::Activation, s, t, signals, bank);
        update_ema(bank, SignalKind::Activation, s, t, signals, {}, report);
      }
    }
    if (probe) {
      h = std::move(out);  // training consumes honest signals in probe mode
    } else {
      h = std::move(submitted);
    }
  }

  // Loss over active columns.
  double train_loss = 0.0;
  std::map<int, Matrix> upstream;
  for (int r : cols) {
    const auto [loss, grad] = loss_and_grad(h.at(r), batches_[r].targets);
    train_loss += loss;
    upstream[r] = grad;
  }
  train_loss /= static_cast<double>(cols.size());
  report.train_loss = train_loss;
  bundle_.loss.push_back({t, train_loss, std::nullopt});
  if (bundle_.metrics.initial_train_loss == 0.0 && t == 1) {
    bundle_.metrics.initial_train_loss = train_loss;
  }
  if (!std::isfinite(train_loss)) {
    status_ = "diverged";
    return report;
  }

  // Backward pass with gradient verification and replacement.
  std::vector<std::vector<StageGrads>> param_grads(p);
  for (int s = p; s >= 1; --s) {
    std::map<int, Matrix> gin;
    for (int r : cols) {
      auto [grads, input_grad] =
          stage_backward(model_.stages[s - 1], cached[s].get(r), upstream.at(r));
      param_grads[s - 1].push_back(std::move(grads));
      gin[r] = std::move(input_grad);
    }
    if (s >= 2) {
      std::map<int, Matrix> submitted = gin;
      if (s <= p - 1 && !probe) {
        for (int r : cols) {
          const WorkerId w{s, r};
          auto it = attacker_state_.find(w);
          if (it == attacker_state_.end() ||
              it->second->spec.target != AttackTarget::Gradient) {
            continue;
          }
          if (active_attackers_.count(w) == 0) {
            observe_attack(*it->second, flatten(gin.at(r)));
            continue;
          }
          const Vec corrupted = apply_attack(*it->second, flatten(gin.at(r)));
          submitted[r] = unflatten(corrupted, gin.at(r).rows, gin.at(r).cols);
          if (first_attack_.find(w) == first_attack_.end()) first_attack_[w] = t;
        }
      }
      std::map<int, Vec> signals;
      std::map<int, std::vector<Vec>> rows;
      for (int r : cols) {
        signals[r] = batch_mean(submitted.at(r));
        if (cfg_.verification.n_proj > 0) rows[r] = matrix_rows(submitted.at(r));
      }
      DetectorBank& bank = grad_banks_[s - 2];
      if (probe) {
        std::map<int, Vec> observed = signals;
        for (int r : cols) {
          const WorkerId w{s, r};
          if (s <= p - 1 && active_attackers_.count(w) &&
              attacker_state_.at(w)->spec.target == AttackTarget::Gradient) {
            observed[r] = probe_perturbation(w, signals.at(r), t);
          }
        }
        Vec nom_mean(dims_[s - 1], 0.0), obs_mean(dims_[s - 1], 0.0);
        for (int r : cols) {
          for (size_t i = 0; i < nom_mean.size(); ++i) {
            nom_mean[i] += signals.at(r)[i];
            obs_mean[i] += observed.at(r)[i];
          }
        }
        for (size_t i = 0; i < nom_mean.size(); ++i) {
          nom_mean[i] /= cols.size();
          obs_mean[i] /= cols.size();
        }
        const double beta = cfg_.verification.beta_g;
        probe_grad_nom_[s - 2] = ema_update(probe_grad_nom_[s - 2], nom_mean, beta);
        probe_grad_obs_[s - 2] = ema_update(probe_grad_obs_[s - 2], obs_mean, beta);
        Vec diff(nom_mean.size());
        for (size_t i = 0; i < diff.size(); ++i) {
          diff[i] = probe_grad_obs_[s - 2][i] - probe_grad_nom_[s - 2][i];
        }
        probe_max_deviation_ = std::max(probe_max_deviation_, l2_norm(diff));
        upstream = std::move(gin);
        continue;
      }
      if (verify) {
        const PassResult pass =
            verification_pass(SignalKind::Gradient, s, t, signals, rows, bank);
        report.verdicts_by_stage[s] += pass.verdicts;
        report.verdicts += pass.verdicts;
        report.flags += pass.flags;
        report.taints += pass.taints;
        report.bans += pass.bans;
        // Tainted columns get the stored gradient EMA instead of their signal.
        std::set<int> excluded;
        for (int r : cols) {
          if (ledger_.tainted_this_iteration(t, r)) {
            excluded.insert(r);
            submitted[r] =
                broadcast_rows(bank.ema, submitted.at(r).rows);
          }
        }
        update_ema(bank, SignalKind::Gradient, s, t, signals, excluded, report);
        adapt_bank(bank, SignalKind::Gradient, s, t);
        sample_thresholds(bank, SignalKind::Gradient, s, t);
      } else {
        warmup_collect(SignalKind::Gradient, s, t, signals, bank);
        update_ema(bank, SignalKind::Gradient, s, t, signals, {}, report);
      }
      upstream = std::move(submitted);
    }
  }

  // All-reduce per stage over the active columns, then the optimizer step.
  for (int s = 1; s <= p; ++s) {
    const StageGrads agg = aggregate_param_grads(param_grads[s - 1], cfg_.aggregation);
    momentum_sgd_step(model_.stages[s - 1], opt_[s - 1], agg, cfg_.optimizer);
  }

  record_validation(t);
  ++iterations_run_;
  return report;
}

void MeshSimulation::run_warmup() {
  if (cfg_.verification.enabled && cfg_.warmup < cfg_.verification.window) {
    throw std::runtime_error("insufficient-warmup");
  }
  for (long t = 1; t <= cfg_.warmup; ++t) {
    run_iteration(t);
    if (status_ != "completed") return;
  }
  if (cfg_.attack.clip_norm_enabled) return;
  for (int s = 1; s <= cfg_.topology.stages - 1; ++s) {
    adapt_bank(act_banks_[s - 1], SignalKind::Activation, s, cfg_.warmup);
  }
  for (int s = 2; s <= cfg_.topology.stages; ++s) {
    adapt_bank(grad_banks_[s - 2], SignalKind::Gradient, s, cfg_.warmup);
  }
}

ResultsBundle MeshSimulation::run() {
  if (cfg_.verification.enabled && cfg_.warmup < cfg_.verification.window) {
    throw std::runtime_error("insufficient-warmup");  // config error, not a row
  }
  try {
    run_warmup();
    const long total = cfg_.warmup + cfg_.steps;
    for (long t = cfg_.warmup + 1; t <= total && status_ == "completed"; ++t) {
      run_iteration(t);
    }
  } catch (const std::exception& e) {
    // Exploding parameters surface as a recorded divergence, not a crash.
    status_ = std::string(e.what()) == "non-finite-gradient" ? "diverged"
                                                             : e.what();
  }

  bundle_.metrics = score_run(topology_, ledger_, first_attack_);
  bundle_.metrics.status = status_;
  bundle_.metrics.iterations_run = iterations_run_;
  bundle_.metrics.flags = total_flags_;
  bundle_.metrics.verdicts = total_verdicts_;
  bundle_.metrics.flag_rate =
      total_verdicts_ > 0
          ? static_cast<double>(total_flags_) / static_cast<double>(total_verdicts_)
          : 0.0;
  bundle_.metrics.bans = total_bans_;
  if (!bundle_.loss.empty()) {
    bundle_.metrics.initial_train_loss = bundle_.loss.front().train_loss;
    const size_t tail = std::min<size_t>(100, bundle_.loss.size());
    double sum = 0.0;
    for (size_t i = bundle_.loss.size() - tail; i < bundle_.loss.size(); ++i) {
      sum += bundle_.loss[i].train_loss;
    }
    bundle_.metrics.final_train_loss = sum / static_cast<double>(tail);
    for (auto it = bundle_.loss.rbegin(); it != bundle_.loss.rend(); ++it) {
      if (it->val_loss) {
        bundle_.metrics.final_val_loss = it->val_loss;
        break;
      }
    }
  }
  if (cfg_.attack.clip_norm_enabled) {
    bundle_.metrics.max_momentum_deviation = probe_max_deviation_;
  }
  return bundle_;
}

RunMetrics score_run(const MeshTopology& topology, const VerdictLedger& ledger,
                     const std::map<WorkerId, long>& first_attack) {
  RunMetrics m;
  const auto banned = ledger.banned_set();
  int tp = 0, fp = 0, tp_activated = 0;
  double speed_sum = 0.0;
  int speed_count = 0;
  for (const auto& w : banned) {
    if (topology.malicious.count(w)) {
      ++tp;
      auto it = first_attack.find(w);
      if (it != first_attack.end()) {
        ++tp_activated;
        const long ban_at = ledger.all().at(w).ban_iteration;
        speed_sum += std::max<long>(1, ban_at - it->second);
        ++speed_count;
      }
    } else {
      ++fp;
    }
  }
  int activated = 0;
  for (const auto& w : topology.malicious) {
    if (first_attack.count(w)) ++activated;
  }
  m.true_positives = tp;
  m.false_positives = fp;
  m.malicious_activated = activated;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = activated > 0 ? static_cast<double>(tp_activated) / activated : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  if (speed_count > 0) m.detection_speed = speed_sum / speed_count;
  m.bans = static_cast<int>(banned.size());
  return m;
}

}  // namespace sentinel

#include "sentinel/swarm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentinel {
namespace swarm {

SubspaceBasis make_basis(size_t m, size_t k, Rng rng) {
  if (k > m || k == 0) throw std::runtime_error("shape-mismatch");
  // Gram-Schmidt over seeded Gaussian columns.
  Matrix u(m, k);
  for (size_t col = 0; col < k; ++col) {
    Vec v(m);
    for (double& x : v) x = rng.normal();
    for (size_t prev = 0; prev < col; ++prev) {
      double dot = 0.0;
      for (size_t i = 0; i < m; ++i) dot += v[i] * u(i, prev);
      for (size_t i = 0; i < m; ++i) v[i] -= dot * u(i, prev);
    }
    double norm = l2_norm(v);
    if (norm < 1e-9) {
      // Degenerate draw; retry deterministically with fresh noise.
      for (double& x : v) x = rng.normal();
      for (size_t prev = 0; prev < col; ++prev) {
        double dot = 0.0;
        for (size_t i = 0; i < m; ++i) dot += v[i] * u(i, prev);
        for (size_t i = 0; i < m; ++i) v[i] -= dot * u(i, prev);
      }
      norm = l2_norm(v);
    }
    for (size_t i = 0; i < m; ++i) u(i, col) = v[i] / norm;
  }
  return {std::move(u)};
}

Vec compress(const Vec& x, const SubspaceBasis& basis) {
  if (x.size() != basis.full_dim()) throw std::runtime_error("shape-mismatch");
  Vec out(basis.compressed_dim(), 0.0);
  for (size_t i = 0; i < basis.full_dim(); ++i) {
    for (size_t j = 0; j < basis.compressed_dim(); ++j) {
      out[j] += x[i] * basis.u(i, j);
    }
  }
  return out;
}

Vec decompress(const Vec& xc, const SubspaceBasis& basis) {
  if (xc.size() != basis.compressed_dim()) throw std::runtime_error("shape-mismatch");
  Vec out(basis.full_dim(), 0.0);
  for (size_t i = 0; i < basis.full_dim(); ++i) {
    for (size_t j = 0; j < basis.compressed_dim(); ++j) {
      out[i] += xc[j] * basis.u(i, j);
    }
  }
  return out;
}

PoolWorker& WorkerPool::route(Rng& rng, const std::set<std::string>& banned) {
  double total = 0.0;
  std::vector<double> weight(workers_.size(), 0.0);
  for (size_t i = 0; i < workers_.size(); ++i) {
    if (banned.count(workers_[i].uid)) continue;
    weight[i] = 1.0 / (1.0 + static_cast<double>(workers_[i].load));
    total += weight[i];
  }
  if (total <= 0.0) throw std::runtime_error("stage-starved");
  const double pick = rng.uniform() * total;
  double acc = 0.0;
  for (size_t i = 0; i < workers_.size(); ++i) {
    if (weight[i] <= 0.0) continue;
    acc += weight[i];
    if (pick < acc) {
      ++workers_[i].load;
      return workers_[i];
    }
  }
  for (size_t i = workers_.size(); i-- > 0;) {
    if (weight[i] > 0.0) {
      ++workers_[i].load;
      return workers_[i];
    }
  }
  throw std::runtime_error("stage-starved");
}

bool SharedLedger::report(const std::string& uid, bool severe, long tick,
                          std::vector<LedgerAuditRow>* audit, int trainer) {
  LedgerEntry& e = entries_[uid];
  if (e.banned) return false;
  ++e.violations;
  e.last_violation_tick = tick;
  if (audit) audit->push_back({tick, uid, "report", e.violations, trainer});
  if (severe || e.violations >= cfg_.max_violations) {
    e.banned = true;
    e.ban_tick = tick;
    if (audit) audit->push_back({tick, uid, "ban", e.violations, trainer});
    return true;
  }
  return false;
}

void SharedLedger::forgiveness_sweep(long tick, std::vector<LedgerAuditRow>* audit) {
  if (cfg_.forgiveness <= 0) return;
  for (auto& [uid, e] : entries_) {
    if (e.banned) continue;
    while (e.violations > 0 && tick - e.last_violation_tick >= cfg_.forgiveness) {
      --e.violations;
      e.last_violation_tick += cfg_.forgiveness;
      if (audit) audit->push_back({tick, uid, "forgive", e.violations, -1});
    }
    if (e.violations == 0) e.last_violation_tick = tick;
  }
}

bool SharedLedger::is_banned(const std::string& uid) const {
  auto it = entries_.find(uid);
  return it != entries_.end() && it->second.banned;
}

std::set<std::string> SharedLedger::banned_set() const {
  std::set<std::string> out;
  for (const auto& [uid, e] : entries_) {
    if (e.banned) out.insert(uid);
  }
  return out;
}

namespace {

std::string worker_uid(int stage, int index) {
  return "s" + std::to_string(stage) + "/w" + std::to_string(index);
}


}  // namespace

SwarmSimulation::SwarmSimulation(const ExperimentConfig& cfg)
    : cfg_(cfg), collusion_rng_(cfg.seed, "swarm/collusion") {
  const int p = cfg_.topology.stages;
  dims_.push_back(cfg_.task.input_dim);
  for (int s = 1; s < p; ++s) dims_.push_back(cfg_.topology.width);
  dims_.push_back(cfg_.task.target_dim);

  teacher_ = make_pipeline(dims_, Rng(cfg_.task.teacher_seed, "teacher"),
                           cfg_.task.teacher_scale, 0.5 * cfg_.task.teacher_scale);
  model_ = make_pipeline(dims_, Rng(cfg_.seed, "model-init"));
  opt_ = make_optimizer_state(model_);
  accum_.resize(p);
  accum_count_.assign(p, 0);
  for (int s = 0; s < p; ++s) {
    accum_[s].d_weights = Matrix(model_.stages[s].weights.rows,
                                 model_.stages[s].weights.cols);
    accum_[s].d_bias.assign(model_.stages[s].bias.size(), 0.0);
  }

  {
    Rng vrng(cfg_.task.teacher_seed, "data/validation");
    Matrix vx(cfg_.swarm.micro_batch, cfg_.task.input_dim);
    for (double& v : vx.data) v = vrng.normal();
    validation_.targets = teacher_.forward(vx);
    validation_.inputs = std::move(vx);
  }

  // Worker pools; malicious workers live in stages 2..p-1.
  pools_.resize(p);
  const int per_stage = cfg_.attack.variant == "none"
                            ? 0
                            : static_cast<int>(cfg_.attack.fraction * cfg_.swarm.pool);
  if (2 * per_stage >= cfg_.swarm.pool) {
    throw std::runtime_error("honest-majority-violated");
  }
  Rng mixed_rng(cfg_.seed, "swarm/schedule/mixed");
  for (int s = 1; s <= p; ++s) {
    std::vector<int> indices(cfg_.swarm.pool);
    for (int i = 0; i < cfg_.swarm.pool; ++i) indices[i] = i;
    std::set<int> bad;
    if (s >= 2 && s <= p - 1 && per_stage > 0) {
      Rng pick(cfg_.seed, "swarm/schedule/stage" + std::to_string(s));
      for (int i = 0; i < per_stage; ++i) {
        const size_t j = i + pick.uniform_index(indices.size() - i);
        std::swap(indices[i], indices[j]);
        bad.insert(indices[i]);
      }
    }
    for (int i = 0; i < cfg_.swarm.pool; ++i) {
      PoolWorker w;
      w.uid = worker_uid(s, i);
      w.stage = s;
      w.index = i;
      w.malicious = bad.count(i) > 0;
      if (w.malicious) {
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
          spec.target = cfg_.attack.target == "gradient"
                            ? AttackTarget::Gradient
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
        malicious_specs_[w.uid] = spec;
        attacker_state_[w.uid] =
            std::make_unique<AttackerState>(spec, Rng(cfg_.seed, "swarm/attack/" + w.uid));
        // Staggered starts: random intervals beginning at the configured
        // start, spread over half the verified phase.
        Rng start_rng(cfg_.seed, "swarm/start/" + w.uid);
        const long base = std::max(cfg_.attack.start, cfg_.warmup + 1);
        const long span = std::max<long>(1, cfg_.steps / 2);
        attack_start_[w.uid] =
            base + static_cast<long>(start_rng.uniform_index(span));
      }
      pools_[s - 1].add(std::move(w));
    }
  }

  ledger_ = SharedLedger(cfg_.verification.ledger_config());

  // Verification runs on the wire representation: compressed width when the
  // signal is a full-width hidden payload and compression is on.
  const auto wire_dim = [&](size_t raw) {
    if (cfg_.swarm.compression_k > 0 &&
        raw == static_cast<size_t>(cfg_.topology.width)) {
      return static_cast<size_t>(cfg_.swarm.compression_k);
    }
    return raw;
  };
  trainers_.resize(cfg_.swarm.trainers);
  for (int i = 0; i < cfg_.swarm.trainers; ++i) {
    TrainerState& tr = trainers_[i];
    tr.id = i;
    tr.data_rng = Rng(cfg_.seed, "swarm-data/trainer" + std::to_string(i));
    tr.route_rng = Rng(cfg_.seed, "swarm-route/trainer" + std::to_string(i));
    tr.act_banks.resize(p - 1);
    for (int s = 1; s <= p - 1; ++s) {
      DetectorBank& bank = tr.act_banks[s - 1];
      bank.ema.assign(wire_dim(dims_[s]), 0.0);
      for (auto& h : bank.history) {
        h.set_window(static_cast<size_t>(cfg_.verification.window));
      }
    }
    tr.grad_banks.resize(p - 1);
    for (int s = 2; s <= p; ++s) {
      DetectorBank& bank = tr.grad_banks[s - 2];
      bank.ema.assign(wire_dim(dims_[s - 1]), 0.0);
      for (auto& h : bank.history) {
        h.set_window(static_cast<size_t>(cfg_.verification.window));
      }
    }
  }

  if (cfg_.swarm.compression_k > 0) {
    basis_ = make_basis(cfg_.topology.width, cfg_.swarm.compression_k,
                        Rng(cfg_.seed, "swarm/basis"));
  }

  adapt_act_ = cfg_.verification.adapt_params(SignalKind::Activation);
  adapt_grad_ = cfg_.verification.adapt_params(SignalKind::Gradient);
  if (basis_) {
    // Fewer verified coordinates mean noisier per-coordinate averages; the
    // fence floors widen with the dimension reduction.
    const double dim_factor = std::sqrt(static_cast<double>(cfg_.topology.width) /
                                        static_cast<double>(cfg_.swarm.compression_k));
    for (AdaptParams* params : {&adapt_act_, &adapt_grad_}) {
      for (double& v : params->lambda) v *= dim_factor;
      for (double& v : params->min_abs) v *= dim_factor;
    }
  }

  bundle_.config = cfg_;
}

const DetectorBank& SwarmSimulation::bank_of(const TrainerState& tr,
                                             SignalKind kind, int stage) const {
  return kind == SignalKind::Activation ? tr.act_banks.at(stage - 1)
                                        : tr.grad_banks.at(stage - 2);
}

DetectorBank& SwarmSimulation::bank_of(TrainerState& tr, SignalKind kind,
                                       int stage) {
  return kind == SignalKind::Activation ? tr.act_banks.at(stage - 1)
                                        : tr.grad_banks.at(stage - 2);
}

Vec SwarmSimulation::signal_view(const Matrix& m) const { return batch_mean(m); }

bool SwarmSimulation::worker_attacks(const PoolWorker& w, long round) {
  if (!w.malicious) return false;
  auto start = attack_start_.find(w.uid);
  if (start == attack_start_.end() || round < start->second) return false;
  if (ledger_.is_banned(w.uid)) return false;
  if (round != collusion_round_) {
    collusion_round_ = round;
    colluding_now_.clear();
    std::vector<std::string> eligible;
    for (const auto& [uid, at] : attack_start_) {
      if (round >= at && !ledger_.is_banned(uid)) eligible.push_back(uid);
    }
    if (!eligible.empty()) {
      const auto want = static_cast<size_t>(std::ceil(
          cfg_.attack.collusion * static_cast<double>(eligible.size())));
      Rng round_rng = collusion_rng_.derive("round/" + std::to_string(round));
      for (size_t i = 0; i < std::min(want, eligible.size()); ++i) {
        const size_t j = i + round_rng.uniform_index(eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
        colluding_now_.insert(eligible[i]);
      }
    }
  }
  return colluding_now_.count(w.uid) > 0;
}

SwarmSimulation::MicrobatchReport SwarmSimulation::trainer_step(int trainer_idx,
                                                                long round) {
  TrainerState& tr = trainers_[trainer_idx];
  MicrobatchReport report;
  const int p = cfg_.topology.stages;
  const bool verify = round > cfg_.warmup && cfg_.verification.enabled;

  Batch batch;
  {
    Matrix x(cfg_.swarm.micro_batch, cfg_.task.input_dim);
    for (double& v : x.data) v = tr.data_rng.normal();
    batch.targets = teacher_.forward(x);
    batch.inputs = std::move(x);
  }

  std::vector<Matrix> cached(p + 1);
  Matrix h = batch.inputs;
  bool tainted = false;

  // Forward traversal: route, submit, receive, verify.
  for (int s = 1; s <= p; ++s) {
    PoolWorker& worker = pools_[s - 1].route(tr.route_rng, ledger_.banned_set());
    cached[s] = h;
    Matrix out = stage_forward(model_.stages[s - 1], h);
    const bool compress_here =
        basis_ && s <= p - 1 &&
        out.cols == static_cast<size_t>(cfg_.topology.width);

    Matrix transmitted;  // what the trainer actually sees on the wire
    if (compress_here) {
      transmitted = Matrix(out.rows, basis_->compressed_dim());
      for (size_t i = 0; i < out.rows; ++i) {
        Vec rowv(out.data.begin() + i * out.cols,
                 out.data.begin() + (i + 1) * out.cols);
        const Vec c = compress(rowv, *basis_);
        for (size_t j = 0; j < c.size(); ++j) transmitted(i, j) = c[j];
      }
    } else {
      transmitted = out;
    }

    if (s >= 2 && s <= p - 1 && worker.malicious) {
      auto it = attacker_state_.find(worker.uid);
      if (it != attacker_state_.end() &&
          it->second->spec.target == AttackTarget::Activation) {
        if (worker_attacks(worker, round)) {
          const Vec corrupted = apply_attack(*it->second, transmitted.data);
          transmitted.data = corrupted;
          if (first_attack_.find(worker.uid) == first_attack_.end()) {
            first_attack_[worker.uid] = round;
          }
        } else {
          observe_attack(*it->second, transmitted.data);
        }
      }
    }

    if (s <= p - 1) {
      DetectorBank& bank = tr.act_banks[s - 1];
      const Vec x = signal_view(transmitted);
      if (verify && !tainted) {
        ++total_verdicts_;
        const Verdict v = verify_signal(x, bank.ema, bank.thresholds, 0, nullptr, nullptr, cfg_.verification.metrics_enabled);
        if (!v.is_clean()) {
          ++total_flags_;
          ++report.ledger_reports;
          tainted = true;
          const bool newly_banned = ledger_.report(worker.uid, v.is_severe(),
                                                   round, &bundle_.ledger_audit,
                                                   tr.id);
          int metric = v.severe_metric;
          if (metric < 0) {
            for (int m = 0; m < kNumMetrics; ++m) {
              if (v.flagged[m]) {
                metric = m;
                break;
              }
            }
          }
          bundle_.events.push_back({round, s, worker.index,
                                    SignalKind::Activation,
                                    newly_banned ? "ban" : "flag", metric,
                                    v.gamma[metric],
                                    bank.thresholds[metric].tau_lower,
                                    bank.thresholds[metric].tau_upper});
        } else {
          for (int m = 0; m < kNumMetrics; ++m) bank.history[m].push(v.gamma[m]);
          bank.ema = ema_update(bank.ema, x, cfg_.verification.beta_h);
          for (int m = 0; m < kNumMetrics; ++m) {
            if (!bank.history[m].empty()) {
              bank.thresholds[m] = adapt_thresholds(
                  bank.history[m], bank.thresholds[m],
                  adapt_act_, static_cast<Metric>(m));
            }
          }
        }
      } else if (!verify) {
        bank.history[static_cast<int>(Metric::L1)].push(metric_l1(x, bank.ema));
        bank.history[static_cast<int>(Metric::L2)].push(
            metric_l2_whitened(x, bank.ema));
        bank.history[static_cast<int>(Metric::Sfr)].push(metric_sfr(x, bank.ema));
        bank.history[static_cast<int>(Metric::Sw)].push(metric_sw(x, bank.ema));
        bank.ema = ema_update(bank.ema, x, cfg_.verification.beta_h);
      }
    }

    // Next stage consumes what was transmitted (decompressed if needed).
    if (compress_here) {
      Matrix recovered(out.rows, cfg_.topology.width);
      for (size_t i = 0; i < transmitted.rows; ++i) {
        Vec rowc(transmitted.data.begin() + i * transmitted.cols,
                 transmitted.data.begin() + (i + 1) * transmitted.cols);
        const Vec r = decompress(rowc, *basis_);
        for (size_t j = 0; j < r.size(); ++j) recovered(i, j) = r[j];
      }
      h = std::move(recovered);
    } else {
      h = std::move(transmitted);
    }
  }

  const auto [loss, loss_grad] = loss_and_grad(h, batch.targets);
  report.loss = loss;

  // Backward traversal; tainted micro-batches push zero tensors upstream.
  Matrix upstream = tainted ? Matrix(loss_grad.rows, loss_grad.cols) : loss_grad;
  for (int s = p; s >= 1; --s) {
    PoolWorker& worker = pools_[s - 1].route(tr.route_rng, ledger_.banned_set());
    auto [grads, gin] = stage_backward(model_.stages[s - 1], cached[s], upstream);
    for (size_t i = 0; i < accum_[s - 1].d_weights.data.size(); ++i) {
      accum_[s - 1].d_weights.data[i] += grads.d_weights.data[i];
    }
    for (size_t i = 0; i < accum_[s - 1].d_bias.size(); ++i) {
      accum_[s - 1].d_bias[i] += grads.d_bias[i];
    }
    ++accum_count_[s - 1];
    if (accum_count_[s - 1] >= cfg_.swarm.accumulation) optimizer_flush(s - 1);

    if (s == 1) break;

    Matrix transmitted = gin;
    if (s <= p - 1 && worker.malicious) {
      auto it = attacker_state_.find(worker.uid);
      if (it != attacker_state_.end() &&
          it->second->spec.target == AttackTarget::Gradient) {
        if (!tainted && worker_attacks(worker, round)) {
          const Vec corrupted = apply_attack(*it->second, gin.data);
          transmitted.data = corrupted;
          if (first_attack_.find(worker.uid) == first_attack_.end()) {
            first_attack_[worker.uid] = round;
          }
        } else {
          observe_attack(*it->second, gin.data);
        }
      }
    }

    const bool compress_here =
        basis_ && transmitted.cols == static_cast<size_t>(cfg_.topology.width);
    Matrix wire = transmitted;
    if (compress_here) {
      wire = Matrix(transmitted.rows, basis_->compressed_dim());
      for (size_t i = 0; i < transmitted.rows; ++i) {
        Vec rowv(transmitted.data.begin() + i * transmitted.cols,
                 transmitted.data.begin() + (i + 1) * transmitted.cols);
        const Vec c = compress(rowv, *basis_);
        for (size_t j = 0; j < c.size(); ++j) wire(i, j) = c[j];
      }
    }

    DetectorBank& bank = tr.grad_banks[s - 2];
    const Vec x = signal_view(wire);
    const bool verify_grad = verify && !tainted;
    if (verify_grad) {
      ++total_verdicts_;
      const Verdict v = verify_signal(x, bank.ema, bank.thresholds, 0, nullptr, nullptr, cfg_.verification.metrics_enabled);
      if (!v.is_clean()) {
        ++total_flags_;
        ++report.ledger_reports;
        tainted = true;
        const bool newly_banned = ledger_.report(worker.uid, v.is_severe(), round,
                                                 &bundle_.ledger_audit, tr.id);
        int metric = v.severe_metric;
        if (metric < 0) {
          for (int m = 0; m < kNumMetrics; ++m) {
            if (v.flagged[m]) {
              metric = m;
              break;
            }
          }
        }
        bundle_.events.push_back({round, s, worker.index, SignalKind::Gradient,
                                  newly_banned ? "ban" : "flag", metric,
                                  v.gamma[metric],
                                  bank.thresholds[metric].tau_lower,
                                  bank.thresholds[metric].tau_upper});
      } else {
        for (int m = 0; m < kNumMetrics; ++m) bank.history[m].push(v.gamma[m]);
        bank.ema = ema_update(bank.ema, x, cfg_.verification.beta_g);
        for (int m = 0; m < kNumMetrics; ++m) {
          if (!bank.history[m].empty()) {
            bank.thresholds[m] = adapt_thresholds(
                bank.history[m], bank.thresholds[m], adapt_grad_,
                static_cast<Metric>(m));
          }
        }
      }
    } else if (!verify) {
      bank.history[static_cast<int>(Metric::L1)].push(metric_l1(x, bank.ema));
      bank.history[static_cast<int>(Metric::L2)].push(metric_l2_whitened(x, bank.ema));
      bank.history[static_cast<int>(Metric::Sfr)].push(metric_sfr(x, bank.ema));
      bank.history[static_cast<int>(Metric::Sw)].push(metric_sw(x, bank.ema));
      bank.ema = ema_update(bank.ema, x, cfg_.verification.beta_g);
    }

    // Deliver upstream: zero tensor once tainted, decompressed wire otherwise.
    if (tainted) {
      upstream = Matrix(gin.rows, gin.cols);
    } else if (compress_here) {
      Matrix recovered(wire.rows, cfg_.topology.width);
      for (size_t i = 0; i < wire.rows; ++i) {
        Vec rowc(wire.data.begin() + i * wire.cols,
                 wire.data.begin() + (i + 1) * wire.cols);
        const Vec r = decompress(rowc, *basis_);
        for (size_t j = 0; j < r.size(); ++j) recovered(i, j) = r[j];
      }
      upstream = std::move(recovered);
    } else {
      upstream = std::move(transmitted);
    }
  }

  report.tainted = tainted;
  ++tr.microbatches_done;
  return report;
}

void SwarmSimulation::optimizer_flush(int stage) {
  if (accum_count_[stage] == 0) return;
  StageGrads mean = accum_[stage];
  const double inv = 1.0 / static_cast<double>(accum_count_[stage]);
  for (double& v : mean.d_weights.data) v *= inv;
  for (double& v : mean.d_bias) v *= inv;
  momentum_sgd_step(model_.stages[stage], opt_[stage], mean, cfg_.optimizer);
  for (double& v : accum_[stage].d_weights.data) v = 0.0;
  for (double& v : accum_[stage].d_bias) v = 0.0;
  accum_count_[stage] = 0;
}

void SwarmSimulation::sync_emas() {
  const int p = cfg_.topology.stages;
  for (int s = 1; s <= p - 1; ++s) {
    Vec mean(trainers_[0].act_banks[s - 1].ema.size(), 0.0);
    for (const auto& tr : trainers_) {
      for (size_t i = 0; i < mean.size(); ++i) mean[i] += tr.act_banks[s - 1].ema[i];
    }
    for (double& v : mean) v /= trainers_.size();
    for (auto& tr : trainers_) tr.act_banks[s - 1].ema = mean;
  }
  for (int s = 2; s <= p; ++s) {
    Vec mean(trainers_[0].grad_banks[s - 2].ema.size(), 0.0);
    for (const auto& tr : trainers_) {
      for (size_t i = 0; i < mean.size(); ++i) mean[i] += tr.grad_banks[s - 2].ema[i];
    }
    for (double& v : mean) v /= trainers_.size();
    for (auto& tr : trainers_) tr.grad_banks[s - 2].ema = mean;
  }
}

double SwarmSimulation::cross_trainer_ema_stddev(int stage, SignalKind kind) const {
  if (trainers_.size() < 2) throw std::runtime_error("too-few-trainers");
  const size_t dim = bank_of(trainers_[0], kind, stage).ema.size();
  double total = 0.0;
  for (size_t i = 0; i < dim; ++i) {
    double mean = 0.0;
    for (const auto& tr : trainers_) mean += bank_of(tr, kind, stage).ema[i];
    mean /= trainers_.size();
    double var = 0.0;
    for (const auto& tr : trainers_) {
      const double d = bank_of(tr, kind, stage).ema[i] - mean;
      var += d * d;
    }
    total += std::sqrt(var / trainers_.size());
  }
  return total / static_cast<double>(dim);
}

double SwarmSimulation::cross_trainer_mean_norm(int stage, SignalKind kind) const {
  // Mean over trainers of each trainer's EMA norm, so the ratio stays
  // meaningful when the EMAs average toward zero late in training.
  double total = 0.0;
  for (const auto& tr : trainers_) {
    total += l2_norm(bank_of(tr, kind, stage).ema);
  }
  return total / static_cast<double>(trainers_.size());
}

void SwarmSimulation::measure_variance(long round) {
  const int p = cfg_.topology.stages;
  for (int s = 1; s <= p - 1; ++s) {
    const double sd = cross_trainer_ema_stddev(s, SignalKind::Activation);
    const double mn = cross_trainer_mean_norm(s, SignalKind::Activation);
    bundle_.ema_variance.push_back({round, s, SignalKind::Activation, sd, mn});
    if (mn > 1e-9) {
      worst_variance_ratio_ = std::max(worst_variance_ratio_, sd / mn);
    }
  }
  for (int s = 2; s <= p; ++s) {
    const double sd = cross_trainer_ema_stddev(s, SignalKind::Gradient);
    const double mn = cross_trainer_mean_norm(s, SignalKind::Gradient);
    bundle_.ema_variance.push_back({round, s, SignalKind::Gradient, sd, mn});
    if (mn > 1e-9) {
      worst_variance_ratio_ = std::max(worst_variance_ratio_, sd / mn);
    }
  }
}

ResultsBundle SwarmSimulation::run() {
  if (cfg_.verification.enabled && cfg_.warmup < cfg_.verification.window) {
    throw std::runtime_error("insufficient-warmup");
  }
  const long total = cfg_.warmup + cfg_.steps;
  long rounds_run = 0;
  for (long round = 1; round <= total; ++round) {
    double round_loss = 0.0;
    bool ok = true;
    try {
      for (int i = 0; i < cfg_.swarm.trainers; ++i) {
        const auto rep = trainer_step(i, round);
        round_loss += rep.loss;
      }
    } catch (const std::exception& e) {
      status_ = std::string(e.what()) == "non-finite-gradient" ? "diverged"
                                                               : e.what();
      ok = false;
    }
    if (!ok) break;
    round_loss /= cfg_.swarm.trainers;
    bundle_.loss.push_back({round, round_loss, std::nullopt});
    ++rounds_run;

    if (round == cfg_.warmup) {
      sync_emas();
      // Thresholds come alive on the warm-up window; histories stay local.
      for (auto& tr : trainers_) {
        for (SignalKind kind : {SignalKind::Activation, SignalKind::Gradient}) {
          auto& banks = kind == SignalKind::Activation ? tr.act_banks : tr.grad_banks;
          for (auto& bank : banks) {
            for (int m = 0; m < kNumMetrics; ++m) {
              if (bank.history[m].empty()) continue;
              bank.thresholds[m] = adapt_thresholds(
                  bank.history[m], bank.thresholds[m],
                  kind == SignalKind::Activation ? adapt_act_ : adapt_grad_,
                  static_cast<Metric>(m));
            }
          }
        }
      }
    }
    ledger_.forgiveness_sweep(round, &bundle_.ledger_audit);

    if (cfg_.output.validate_every > 0 && round % cfg_.output.validate_every == 0) {
      const Matrix out = model_.forward(validation_.inputs);
      const double vloss = loss_and_grad(out, validation_.targets).first;
      bundle_.loss.back().val_loss = vloss;
      bundle_.metrics.final_val_loss = vloss;
      if (!std::isfinite(vloss)) {
        status_ = "diverged";
        break;
      }
    }
    if (round > cfg_.warmup &&
        (round - cfg_.warmup) % std::max(1, cfg_.swarm.measure_every) == 0) {
      measure_variance(round);
    }
  }

  // Score banned workers against the ground-truth malicious set.
  RunMetrics& m = bundle_.metrics;
  m.status = status_;
  m.iterations_run = rounds_run;
  const auto banned = ledger_.banned_set();
  int tp = 0, fp = 0, tp_activated = 0, activated = 0;
  double speed_sum = 0.0;
  int speed_count = 0;
  for (const auto& uid : banned) {
    if (malicious_specs_.count(uid)) {
      ++tp;
      auto it = first_attack_.find(uid);
      if (it != first_attack_.end()) {
        ++tp_activated;
        speed_sum += std::max<long>(
            1, ledger_.entries().at(uid).ban_tick - it->second);
        ++speed_count;
      }
    } else {
      ++fp;
    }
  }
  for (const auto& [uid, spec] : malicious_specs_) {
    (void)spec;
    if (first_attack_.count(uid)) ++activated;
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
  m.flags = total_flags_;
  m.verdicts = total_verdicts_;
  m.flag_rate = total_verdicts_ > 0
                    ? static_cast<double>(total_flags_) / total_verdicts_
                    : 0.0;
  if (!bundle_.loss.empty()) {
    m.initial_train_loss = bundle_.loss.front().train_loss;
    const size_t tail = std::min<size_t>(100, bundle_.loss.size());
    double sum = 0.0;
    for (size_t i = bundle_.loss.size() - tail; i < bundle_.loss.size(); ++i) {
      sum += bundle_.loss[i].train_loss;
    }
    m.final_train_loss = sum / static_cast<double>(tail);
  }
  m.worst_ema_variance_ratio = worst_variance_ratio_;
  return bundle_;
}

}  // namespace swarm
}  // namespace sentinel

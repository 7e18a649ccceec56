#include "sentinel/mesh.hpp"

#include <cmath>

#include "doctest.h"

using namespace sentinel;

namespace {

// Small topology so the behavioral tests stay fast.
ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.mode = RunMode::Mesh;
  cfg.seed = 5;
  cfg.warmup = 150;
  cfg.steps = 200;
  cfg.topology.stages = 4;
  cfg.topology.replicas = 6;
  cfg.topology.width = 24;
  cfg.task.input_dim = 12;
  cfg.task.target_dim = 6;
  cfg.task.batch_size = 12;
  cfg.verification.window = 50;
  cfg.output.validate_every = 50;
  return cfg;
}

ExperimentConfig attack_config(const char* variant) {
  ExperimentConfig cfg = small_config();
  cfg.attack.variant = variant;
  cfg.attack.fraction = 1.0 / 3.0;  // 2 of 6 per attackable stage
  cfg.attack.collusion = 1.0;
  cfg.attack.start = cfg.warmup + 1;
  return cfg;
}

}  // namespace

TEST_CASE("warm-up shorter than the window is rejected") {
  ExperimentConfig cfg = small_config();
  cfg.warmup = 10;
  cfg.verification.window = 50;
  MeshSimulation sim(cfg);
  CHECK_THROWS_WITH(sim.run_warmup(), "insufficient-warmup");
}

TEST_CASE("benign run: no bans, convergent loss, thresholds warmed") {
  ExperimentConfig cfg = small_config();
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  CHECK(bundle.metrics.status == "completed");
  CHECK(bundle.metrics.bans == 0);
  CHECK(sim.ledger().banned_set().empty());
  CHECK(bundle.metrics.final_train_loss < bundle.metrics.initial_train_loss);
  for (int s = 1; s <= 3; ++s) {
    for (const auto& th : sim.activation_bank(s).thresholds) CHECK(th.warmed);
  }
  for (int s = 2; s <= 4; ++s) {
    for (const auto& th : sim.gradient_bank(s).thresholds) CHECK(th.warmed);
  }
}

TEST_CASE("constant attacker is tainted, banned, and scored") {
  ExperimentConfig cfg = attack_config("constant");
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  CHECK(bundle.metrics.status == "completed");
  CHECK(sim.topology().malicious.size() == 4);
  CHECK(bundle.metrics.true_positives == 4);
  CHECK(bundle.metrics.false_positives == 0);
  CHECK(bundle.metrics.recall == doctest::Approx(1.0));
  CHECK(bundle.metrics.f1 == doctest::Approx(1.0));
  REQUIRE(bundle.metrics.detection_speed.has_value());
  CHECK(*bundle.metrics.detection_speed >= 1.0);
  CHECK(*bundle.metrics.detection_speed <= 12.0);

  // Every banned worker accumulated taints before or at the ban.
  bool saw_taint = false, saw_ban = false;
  for (const auto& e : bundle.events) {
    if (e.action == "taint") saw_taint = true;
    if (e.action == "ban") saw_ban = true;
  }
  CHECK(saw_taint);
  CHECK(saw_ban);
}

TEST_CASE("taint containment: tainted columns never add violations downstream") {
  ExperimentConfig cfg = attack_config("constant");
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  // A flag on (s, r) in the same iteration where the column was tainted at a
  // stage s' < s would be a containment break: fresh flags only fire for
  // columns not yet tainted this iteration.
  std::map<long, std::map<int, int>> first_taint_stage;  // t -> replica -> stage
  for (const auto& e : bundle.events) {
    if (e.action != "taint") continue;
    auto& by_replica = first_taint_stage[e.iteration];
    auto it = by_replica.find(e.replica);
    if (it == by_replica.end() || e.stage < it->second) {
      by_replica[e.replica] = e.stage;
    }
  }
  for (const auto& e : bundle.events) {
    if (e.action != "flag") continue;
    const auto t_it = first_taint_stage.find(e.iteration);
    if (t_it == first_taint_stage.end()) continue;
    const auto r_it = t_it->second.find(e.replica);
    if (r_it == t_it->second.end()) continue;
    CHECK(e.stage <= r_it->second);
  }
}

TEST_CASE("ema purity: stored trajectories replay from clean means") {
  ExperimentConfig cfg = attack_config("scaling");
  cfg.steps = 120;
  MeshSimulation sim(cfg);
  sim.enable_ema_audit();
  sim.run();
  const auto& audit = sim.ema_audit();
  REQUIRE(!audit.empty());

  // Recompute each update from the recorded per-replica signals.
  std::map<std::pair<int, int>, Vec> ema;  // (stage, kind) -> running value
  size_t checked = 0;
  for (const auto& entry : audit) {
    const auto key = std::make_pair(entry.stage, static_cast<int>(entry.kind));
    auto it = ema.find(key);
    Vec prev = it == ema.end() ? Vec(entry.ema_after.size(), 0.0) : it->second;
    Vec mean(prev.size(), 0.0);
    int count = 0;
    for (const auto& [replica, signal] : entry.signals) {
      if (entry.excluded.count(replica)) continue;
      for (size_t i = 0; i < signal.size(); ++i) mean[i] += signal[i];
      ++count;
    }
    REQUIRE(count > 0);
    for (double& v : mean) v /= count;
    const double beta = entry.kind == SignalKind::Activation
                            ? cfg.verification.beta_h
                            : cfg.verification.beta_g;
    const Vec expect = ema_update(prev, mean, beta);
    CHECK(expect == entry.ema_after);  // bit-exact replay
    ema[key] = entry.ema_after;
    ++checked;
  }
  CHECK(checked == audit.size());
}

TEST_CASE("excluded replicas in the audit are exactly the tainted ones") {
  ExperimentConfig cfg = attack_config("constant");
  cfg.steps = 100;
  MeshSimulation sim(cfg);
  sim.enable_ema_audit();
  const ResultsBundle bundle = sim.run();
  // Any iteration with taints must show exclusions in the same iteration's
  // audit entries for subsequent banks.
  bool some_exclusion = false;
  for (const auto& entry : sim.ema_audit()) {
    if (!entry.excluded.empty()) some_exclusion = true;
  }
  CHECK(bundle.metrics.true_positives > 0);
  CHECK(some_exclusion);
}

TEST_CASE("verification disabled: attacks flow untouched") {
  ExperimentConfig cfg = attack_config("constant");
  cfg.verification.enabled = false;
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  CHECK(bundle.metrics.bans == 0);
  CHECK(bundle.metrics.flags == 0);
  CHECK(bundle.metrics.verdicts == 0);
}

TEST_CASE("determinism: identical config and seed give identical metrics") {
  ExperimentConfig cfg = attack_config("random-value");
  cfg.steps = 80;
  MeshSimulation a(cfg), b(cfg);
  const ResultsBundle ra = a.run();
  const ResultsBundle rb = b.run();
  CHECK(ra.metrics.f1 == rb.metrics.f1);
  CHECK(ra.metrics.final_train_loss == rb.metrics.final_train_loss);
  REQUIRE(ra.loss.size() == rb.loss.size());
  for (size_t i = 0; i < ra.loss.size(); ++i) {
    CHECK(ra.loss[i].train_loss == rb.loss[i].train_loss);
  }
  CHECK(ra.events.size() == rb.events.size());
}

TEST_CASE("momentum probe honors the smoothing bound") {
  ExperimentConfig cfg = small_config();
  cfg.attack.variant = "mixed";
  cfg.attack.fraction = 1.0 / 3.0;
  cfg.attack.collusion = 1.0;
  cfg.attack.start = cfg.warmup + 1;
  cfg.attack.clip_norm_enabled = true;
  cfg.attack.clip_norm = 2.0;
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  REQUIRE(bundle.metrics.max_momentum_deviation.has_value());
  const double gamma = 1.0 / 3.0;
  CHECK(*bundle.metrics.max_momentum_deviation <= gamma * 2.0 + 1e-9);
}

TEST_CASE("score_run arithmetic") {
  MeshTopology topo;
  topo.stages = 4;
  topo.replicas = 8;
  topo.malicious = {{2, 0}, {2, 1}};

  VerdictLedger ledger;
  Verdict severe;
  severe.outcome = Verdict::Outcome::Severe;
  ledger.update({2, 0}, severe, 1206);  // true positive
  ledger.update({3, 4}, severe, 1300);  // false positive

  std::map<WorkerId, long> first_attack{{{2, 0}, 1200}, {{2, 1}, 1250}};
  const RunMetrics m = score_run(topo, ledger, first_attack);
  CHECK(m.precision == doctest::Approx(0.5));
  CHECK(m.recall == doctest::Approx(0.5));
  CHECK(m.f1 == doctest::Approx(0.5));
  REQUIRE(m.detection_speed.has_value());
  CHECK(*m.detection_speed == doctest::Approx(6.0));

  // banned == ground truth -> perfect scores
  VerdictLedger perfect;
  perfect.update({2, 0}, severe, 1201);
  perfect.update({2, 1}, severe, 1251);
  const RunMetrics pm = score_run(topo, perfect, first_attack);
  CHECK(pm.precision == doctest::Approx(1.0));
  CHECK(pm.recall == doctest::Approx(1.0));
  CHECK(pm.f1 == doctest::Approx(1.0));

  // no bans at all
  const RunMetrics zm = score_run(topo, VerdictLedger{}, first_attack);
  CHECK(zm.precision == 0.0);
  CHECK(zm.recall == 0.0);
  CHECK(zm.f1 == 0.0);
  CHECK(!zm.detection_speed.has_value());
}

TEST_CASE("benign convergence invariant at d=4") {
  ExperimentConfig cfg;
  cfg.mode = RunMode::Mesh;
  cfg.seed = 1;
  cfg.warmup = 500;
  cfg.steps = 1500;  // 2000 total steps
  cfg.topology.stages = 4;
  cfg.topology.replicas = 4;
  cfg.topology.width = 32;
  cfg.task.input_dim = 16;
  cfg.task.target_dim = 8;
  cfg.task.batch_size = 16;
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  CHECK(bundle.metrics.final_train_loss <=
        0.10 * bundle.metrics.initial_train_loss);
  CHECK(bundle.metrics.bans == 0);
}

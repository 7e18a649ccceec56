// Acceptance suite: runs every gate criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sentinel/config.hpp"
#include "sentinel/mesh.hpp"
#include "sentinel/results.hpp"
#include "sentinel/swarm.hpp"
#include "sentinel/theory.hpp"

using namespace sentinel;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int number, const std::string& text, bool pass,
            const std::string& detail) {
  std::printf("%s criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", number,
              text.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ExperimentConfig protocol_config() {
  ExperimentConfig cfg;
  cfg.mode = RunMode::Mesh;
  cfg.warmup = 500;
  cfg.steps = 2000;
  cfg.topology.stages = 4;
  cfg.topology.replicas = 8;
  cfg.topology.width = 32;
  cfg.task.input_dim = 16;
  cfg.task.target_dim = 8;
  cfg.task.batch_size = 16;
  return cfg;
}

ExperimentConfig strong_attack_config(const std::string& variant) {
  ExperimentConfig cfg = protocol_config();
  cfg.seed = 1;
  cfg.attack.variant = variant;
  cfg.attack.target = "activation";
  cfg.attack.fraction = 0.25;
  cfg.attack.collusion = 0.25;
  cfg.attack.start = cfg.warmup + 1;
  cfg.attack.constant_value = 0.0;
  cfg.attack.scale = 10.0;
  cfg.attack.flip_prob = 1.0;
  return cfg;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ------------------------------------------------------------------
// Criterion 1: benign false-positive control over five seeds.
RunMetrics criterion_1(double& benign_seed1_final) {
  bool pass = true;
  std::string detail;
  RunMetrics seed1;
  double max_time = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig cfg = protocol_config();
    cfg.seed = seed;
    const auto start = Clock::now();
    MeshSimulation sim(cfg);
    const ResultsBundle bundle = sim.run();
    const double elapsed = seconds_since(start);
    max_time = std::max(max_time, elapsed);
    if (seed == 1) {
      seed1 = bundle.metrics;
      benign_seed1_final = bundle.metrics.final_train_loss;
    }
    if (bundle.metrics.bans != 0 || bundle.metrics.flag_rate > 0.02 ||
        bundle.metrics.status != "completed" || elapsed > 60.0) {
      pass = false;
    }
    detail += "s" + std::to_string(seed) + ":bans=" +
              std::to_string(bundle.metrics.bans) +
              ",fr=" + fmt(bundle.metrics.flag_rate) + " ";
  }
  detail += "max_time=" + fmt(max_time) + "s";
  report(1, "benign runs: zero bans, flag rate <= 2%, five seeds", pass, detail);
  return seed1;
}

// Criterion 2: strong activation attacks detected fast with healthy loss.
void criterion_2(double benign_final) {
  bool pass = true;
  std::string detail;
  for (const std::string variant :
       {"constant", "random-value", "scaling", "random-sign"}) {
    MeshSimulation sim(strong_attack_config(variant));
    const ResultsBundle bundle = sim.run();
    const RunMetrics& m = bundle.metrics;
    bool ok = m.f1 >= 0.9;
    if (variant == "constant" || variant == "random-value") {
      ok = ok && m.detection_speed && *m.detection_speed <= 10.0;
    }
    ok = ok && std::abs(m.final_train_loss / benign_final - 1.0) <= 0.10;
    ok = ok && m.status == "completed";
    if (!ok) pass = false;
    detail += variant + ":F1=" + fmt(m.f1) +
              ",spd=" + (m.detection_speed ? fmt(*m.detection_speed) : "-") + " ";
  }
  // Without verification the constant attack must visibly hurt training.
  ExperimentConfig baseline = strong_attack_config("constant");
  baseline.verification.enabled = false;
  MeshSimulation sim(baseline);
  const ResultsBundle bundle = sim.run();
  const bool degraded = bundle.metrics.status == "diverged" ||
                        bundle.metrics.final_train_loss >= 2.0 * benign_final;
  if (!degraded) pass = false;
  detail += "no-verify:loss_ratio=" +
            fmt(bundle.metrics.final_train_loss / benign_final);
  report(2, "strong attacks: F1 >= 0.9, fast bans, loss within 10%", pass, detail);
}

// Criterion 3: a stealthy bias attack evades detection without damage.
void criterion_3(double benign_final) {
  ExperimentConfig cfg = protocol_config();
  cfg.seed = 1;
  cfg.attack.variant = "bias-addition";
  cfg.attack.target = "activation";
  cfg.attack.fraction = 0.25;
  cfg.attack.collusion = 0.25;
  cfg.attack.stealth = true;
  cfg.attack.stealth_scale = 0.01;
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  const double ratio = bundle.metrics.final_train_loss / benign_final;
  const bool pass = bundle.metrics.f1 < 0.5 && std::abs(ratio - 1.0) <= 0.05 &&
                    bundle.metrics.status == "completed";
  report(3, "stealth bias evades while loss stays within 5%", pass,
         "F1=" + fmt(bundle.metrics.f1) + " loss_ratio=" + fmt(ratio));
}

// Criterion 4: momentum smoothing bound under clipped perturbations.
void criterion_4() {
  ExperimentConfig cfg = protocol_config();
  cfg.seed = 1;
  cfg.warmup = 100;
  cfg.steps = 400;
  cfg.attack.variant = "mixed";
  cfg.attack.fraction = 0.25;
  cfg.attack.collusion = 1.0;
  cfg.attack.start = cfg.warmup + 1;
  cfg.attack.clip_norm_enabled = true;
  cfg.attack.clip_norm = 1.0;
  const auto start = Clock::now();
  MeshSimulation sim(cfg);
  const ResultsBundle bundle = sim.run();
  const double elapsed = seconds_since(start);
  const double measured = bundle.metrics.max_momentum_deviation.value_or(1e300);
  const bool pass = measured <= 0.25 + 1e-9 && elapsed <= 30.0;
  report(4, "momentum deviation <= gamma*eps against the shadow reference", pass,
         "max=" + fmt(measured) + " bound=0.25 time=" + fmt(elapsed) + "s");
}

// Criterion 5: honest-majority budget validated by Monte-Carlo.
void criterion_5() {
  const auto start = Clock::now();
  const auto budget = theory::honest_majority_budget(64, 8, 0.05);
  const int b = static_cast<int>(budget.b_max);
  const double failure =
      theory::monte_carlo_majority(64, 8, b, 10000, Rng(2026, "acceptance/mc"));
  const double elapsed = seconds_since(start);
  const bool pass = b == 154 && failure <= 0.05 + 0.01 && elapsed <= 10.0;
  report(5, "Lemma budget b=154 holds over 10k random assignments", pass,
         "b_max=" + fmt(budget.b_max) + " failure=" + fmt(failure) +
             " time=" + fmt(elapsed) + "s");
}

// Criterion 6: analytic gradients against central finite differences.
void criterion_6() {
  Rng rng(404, "acceptance/fd");
  int checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const size_t m_in = 2 + rng.uniform_index(5);
    const size_t m_out = 2 + rng.uniform_index(5);
    const size_t batch = 1 + rng.uniform_index(4);
    StageParams stage;
    stage.weights = Matrix(m_in, m_out);
    stage.bias.assign(m_out, 0.0);
    for (double& w : stage.weights.data) w = rng.normal() * 0.8;
    for (double& b : stage.bias) b = rng.normal() * 0.4;
    stage.activation =
        rng.uniform() < 0.5 ? StageActivation::Tanh : StageActivation::Identity;
    Matrix input(batch, m_in), targets(batch, m_out);
    for (double& v : input.data) v = rng.normal();
    for (double& v : targets.data) v = rng.normal();

    const auto loss_of = [&](const StageParams& p, const Matrix& in) {
      return loss_and_grad(stage_forward(p, in), targets).first;
    };
    const auto [grads, dinput] = stage_backward(
        stage, input, loss_and_grad(stage_forward(stage, input), targets).second);

    const double eps = 1e-6;
    const auto relerr = [&](double analytic, double numeric) {
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      return std::abs(analytic - numeric) / denom;
    };
    for (size_t i = 0; i < stage.weights.data.size(); ++i) {
      StageParams p = stage;
      p.weights.data[i] += eps;
      const double up = loss_of(p, input);
      p.weights.data[i] -= 2 * eps;
      const double down = loss_of(p, input);
      worst = std::max(worst, relerr(grads.d_weights.data[i], (up - down) / (2 * eps)));
    }
    for (size_t i = 0; i < input.data.size(); ++i) {
      Matrix in = input;
      in.data[i] += eps;
      const double up = loss_of(stage, in);
      in.data[i] -= 2 * eps;
      const double down = loss_of(stage, in);
      worst = std::max(worst, relerr(dinput.data[i], (up - down) / (2 * eps)));
    }
    ++checked;
  }
  report(6, "gradient oracle: 100 random stages match finite differences",
         worst <= 1e-5, "configs=" + std::to_string(checked) +
                            " worst_rel_err=" + fmt(worst));
}

// Criterion 7: adaptive thresholds against an independent brute-force oracle.
Thresholds oracle_adapt(const std::deque<double>& window, Thresholds state,
                        const AdaptParams& params, Metric metric) {
  // Straight transcription: sorted-vector quantiles, then the widen/narrow
  // loops over the window, then the minimum-distance rule.
  std::vector<double> sorted(window.begin(), window.end());
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double q) {
    if (q <= 0.0) return sorted.front();
    if (q >= 1.0) return sorted.back();
    const double rank = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
  };
  Thresholds out = state;
  out.q1 = quantile(0.25);
  out.q2 = quantile(0.50);
  out.q3 = quantile(0.75);
  out.iqr = std::max(out.q3 - out.q1, kIqrEpsilon);
  if (!out.warmed) out.k = params.k0;
  const auto outside_fraction = [&](double k) {
    const double lo = out.q2 - k * out.iqr;
    const double hi = out.q2 + k * out.iqr;
    size_t n = 0;
    for (double v : sorted) {
      if (v < lo || v > hi) ++n;
    }
    return static_cast<double>(n) / static_cast<double>(sorted.size());
  };
  double fp = outside_fraction(out.k);
  for (int i = 0; i < params.max_iters && fp > params.alpha_fp; ++i) {
    out.k *= params.growth;
    fp = outside_fraction(out.k);
  }
  for (int i = 0; i < params.max_iters && fp < params.alpha_fp / 10.0; ++i) {
    const double next_k = out.k * params.shrink;
    const double next_fp = outside_fraction(next_k);
    if (next_fp > params.alpha_fp) break;
    out.k = next_k;
    fp = next_fp;
  }
  out.tau_lower = out.q2 - out.k * out.iqr;
  out.tau_upper = out.q2 + out.k * out.iqr;
  const int mi = static_cast<int>(metric);
  const double d_min =
      std::max(std::abs(out.q2) * params.lambda[mi], params.min_abs[mi]);
  out.tau_lower = std::min(out.tau_lower, out.q2 - d_min);
  out.tau_upper = std::max(out.tau_upper, out.q2 + d_min);
  out.warmed = true;
  return out;
}

void criterion_7() {
  Rng rng(77, "acceptance/threshold-oracle");
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.uniform_index(400);
    DeviationHistory hist(n);
    const int shape = static_cast<int>(rng.uniform_index(4));
    for (size_t i = 0; i < n; ++i) {
      double v = 0.0;
      switch (shape) {
        case 0: v = rng.normal(); break;
        case 1: v = std::abs(rng.normal()) * 0.01; break;
        case 2: v = 3.0; break;  // constant window
        case 3: v = rng.uniform() < 0.95 ? rng.uniform() : 50.0 + rng.uniform(); break;
      }
      hist.push(v);
    }
    AdaptParams params;
    params.alpha_fp = 0.01;
    Thresholds state;
    if (rng.uniform() < 0.5) {
      // exercise the carry-over of a previous multiplier
      state.warmed = true;
      state.k = 0.25 + rng.uniform() * 4.0;
    }
    const Metric metric = static_cast<Metric>(rng.uniform_index(4));
    const Thresholds got = adapt_thresholds(hist, state, params, metric);
    const Thresholds want =
        oracle_adapt(hist.values(), state, params, metric);
    if (got.q1 != want.q1 || got.q2 != want.q2 || got.q3 != want.q3 ||
        got.k != want.k || got.tau_lower != want.tau_lower ||
        got.tau_upper != want.tau_upper) {
      ++mismatches;
    }
  }
  report(7, "threshold adaptation matches the brute-force oracle exactly",
         mismatches == 0, "histories=1000 mismatches=" + std::to_string(mismatches));
}

// Criterion 8: metric properties.
void criterion_8() {
  Rng rng(88, "acceptance/metrics");
  bool pass = true;
  for (int trial = 0; trial < 200; ++trial) {
    Vec x(4 + rng.uniform_index(28));
    for (double& v : x) {
      v = rng.normal();
      if (v == 0.0) v = 0.1;
    }
    if (metric_l1(x, x) != 0.0 || metric_l2_whitened(x, x) != 0.0 ||
        metric_sfr(x, x) != 0.0 || metric_sw(x, x) != 0.0) {
      pass = false;
    }
    Vec neg = x;
    for (double& v : neg) v = -v;
    if (metric_sfr(neg, x) != 1.0) pass = false;

    // SW permutation invariance: a common permutation leaves it unchanged.
    Vec m(x.size());
    for (double& v : m) v = rng.normal();
    const double before = metric_sw(x, m);
    std::vector<size_t> perm(x.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    }
    Vec xp(x.size()), mp(x.size());
    for (size_t i = 0; i < perm.size(); ++i) {
      xp[i] = x[perm[i]];
      mp[i] = m[perm[i]];
    }
    if (std::abs(metric_sw(xp, mp) - before) > 1e-10) pass = false;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.uniform_index(16);
    Vec a(n), b(n), c(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = rng.normal() * 2;
      b[i] = rng.normal() + 0.5;
      c[i] = rng.normal() - 1;
    }
    if (wasserstein1d(a, b) != wasserstein1d(b, a)) pass = false;
    if (wasserstein1d(a, b) > wasserstein1d(a, c) + wasserstein1d(c, b) + 1e-10) {
      pass = false;
    }
  }
  report(8, "metric identities, SW permutation invariance, W1 axioms", pass, "ok");
}

// Criterion 9: theory formula spot checks.
void criterion_9() {
  bool pass = true;
  std::string detail;

  theory::ConvergenceInputs in;
  in.eta = 0.1;
  in.beta = 0.0;
  in.smoothness = 1.0;
  in.c_lyap = 1e-12;  // "0 plus": keeps the Lyapunov term present
  in.eps2 = 0.5;
  const auto c = theory::convergence_constants(in);
  if (std::abs(c.alpha - 0.04) > 1e-9 || std::abs(c.c1 - 0.0) > 1e-9 ||
      std::abs(c.c2 - 0.06) > 1e-9 || std::abs(c.d - 0.005) > 1e-9) {
    pass = false;
  }
  detail += "alpha=" + fmt(c.alpha) + ",C2=" + fmt(c.c2) + ",D=" + fmt(c.d);

  const double bound = theory::convergence_bound(c, 0.1, 0.0, 1.0, 0.0, 1000);
  if (std::abs(bound - 0.04) > 1e-9) pass = false;
  detail += ",bound=" + fmt(bound);

  // Evasion / perturbation identities over a grid.
  Rng rng(9, "acceptance/theory-grid");
  for (int i = 0; i < 100; ++i) {
    const double tau = 0.01 + rng.uniform() * 5.0;
    const double lomega = 0.1 + rng.uniform() * 3.0;
    const double gamma = rng.uniform() * 0.49;
    const double gs = 0.1 + rng.uniform() * 8.0;
    const double direct = theory::gradient_perturbation_bound(gamma, gs, tau, lomega);
    const double composed = gamma * gs * theory::evasion_bound(tau, lomega, gamma);
    if (std::abs(direct - composed) > 1e-12 * std::max(1.0, std::abs(direct))) {
      pass = false;
    }
  }

  // Classical SGD shape: alpha/eta and D/(eta^2 L) stable over the eta grid.
  double min_a = 1e300, max_a = -1e300, min_d = 1e300, max_d = -1e300;
  for (double eta : {0.01, 0.05, 0.1}) {
    theory::ConvergenceInputs grid = in;
    grid.eta = eta;
    const auto cc = theory::convergence_constants(grid);
    min_a = std::min(min_a, cc.alpha / eta);
    max_a = std::max(max_a, cc.alpha / eta);
    min_d = std::min(min_d, cc.d / (eta * eta * grid.smoothness));
    max_d = std::max(max_d, cc.d / (eta * eta * grid.smoothness));
  }
  if (max_a / min_a >= 1.3 || max_d / min_d >= 1.0 + 1e-6) pass = false;
  detail += ",a_ratio=" + fmt(max_a / min_a) + ",d_ratio=" + fmt(max_d / min_d);

  report(9, "theory constants, bound value, identities, SGD shape", pass, detail);
}

// Criterion 10: SWARM end to end.
void criterion_10() {
  const auto start = Clock::now();
  ExperimentConfig benign;
  benign.mode = RunMode::Swarm;
  benign.seed = 3;
  benign.warmup = 300;
  benign.steps = 1200;
  benign.topology.stages = 4;
  benign.topology.width = 32;
  benign.task.input_dim = 16;
  benign.task.target_dim = 8;
  benign.swarm.trainers = 8;
  benign.swarm.pool = 6;
  benign.swarm.micro_batch = 32;
  benign.swarm.accumulation = 4;

  swarm::SwarmSimulation benign_sim(benign);
  const ResultsBundle benign_bundle = benign_sim.run();

  ExperimentConfig attacked = benign;
  attacked.attack.variant = "mixed";
  attacked.attack.fraction = 0.375;
  attacked.attack.collusion = 0.15;
  swarm::SwarmSimulation sim(attacked);
  const ResultsBundle bundle = sim.run();

  const double elapsed = seconds_since(start);
  bool pass = bundle.metrics.status == "completed" &&
              benign_bundle.metrics.status == "completed";

  const double benign_val = benign_bundle.metrics.final_val_loss.value_or(1e300);
  const double attacked_val = bundle.metrics.final_val_loss.value_or(1e300);
  const double ratio = attacked_val / benign_val;
  if (std::abs(ratio - 1.0) > 0.15) pass = false;

  int strong = 0, strong_banned = 0;
  const auto banned = sim.shared_ledger().banned_set();
  for (const auto& [uid, spec] : sim.malicious_specs()) {
    const bool is_strong = spec.variant == AttackVariant::Constant ||
                           spec.variant == AttackVariant::RandomValue ||
                           spec.variant == AttackVariant::Scaling;
    if (!is_strong) continue;
    ++strong;
    if (banned.count(uid)) ++strong_banned;
  }
  if (strong == 0 || strong_banned < 0.8 * strong) pass = false;
  if (sim.worst_variance_ratio() > 0.5 ||
      benign_sim.worst_variance_ratio() > 0.5) {
    pass = false;
  }
  if (elapsed > 300.0) pass = false;

  report(10, "swarm: completes, strong attackers banned, EMAs coherent", pass,
         "loss_ratio=" + fmt(ratio) + " strong=" + std::to_string(strong_banned) +
             "/" + std::to_string(strong) +
             " var_ratio=" + fmt(sim.worst_variance_ratio()) +
             " time=" + fmt(elapsed) + "s");
}

// Criterion 11: compression invariants and verdict consistency.
void criterion_11() {
  bool pass = true;
  const size_t m = 32, k = 8;
  const swarm::SubspaceBasis basis = swarm::make_basis(m, k, Rng(11, "basis"));

  double ortho_err = 0.0;
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (size_t r = 0; r < m; ++r) dot += basis.u(r, i) * basis.u(r, j);
      ortho_err = std::max(ortho_err, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  if (ortho_err > 1e-10) pass = false;

  Rng rng(12, "acceptance/compression");
  double roundtrip_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    // random in-span vector: x = U_k c
    Vec coeffs(k);
    for (double& v : coeffs) v = rng.normal();
    Vec x(m, 0.0);
    for (size_t r = 0; r < m; ++r) {
      for (size_t j = 0; j < k; ++j) x[r] += basis.u(r, j) * coeffs[j];
    }
    const Vec back = swarm::decompress(swarm::compress(x, basis), basis);
    double err = 0.0;
    for (size_t r = 0; r < m; ++r) err += (back[r] - x[r]) * (back[r] - x[r]);
    roundtrip_err = std::max(roundtrip_err, std::sqrt(err));
  }
  if (roundtrip_err > 1e-10) pass = false;

  // Verdict consistency: the compression-mode pipeline (compress rows, take
  // the batch mean, verify) must equal verifying those compressed
  // coordinates directly with the same detector state.
  int verdict_mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const size_t batch = 8;
    Matrix signal(batch, m);
    for (double& v : signal.data) v = rng.normal();
    Matrix wire(batch, k);
    for (size_t i = 0; i < batch; ++i) {
      Vec row(signal.data.begin() + i * m, signal.data.begin() + (i + 1) * m);
      const Vec c = swarm::compress(row, basis);
      for (size_t j = 0; j < k; ++j) wire(i, j) = c[j];
    }
    const Vec xc = batch_mean(wire);

    Vec ema(k);
    for (double& v : ema) v = rng.normal() * 0.3;
    std::array<Thresholds, kNumMetrics> ths;
    for (auto& th : ths) {
      th.warmed = true;
      th.q1 = 0.1;
      th.q2 = 0.2 + rng.uniform();
      th.q3 = th.q2 + 0.3;
      th.k = 1.5;
      th.iqr = std::max(th.q3 - th.q1, kIqrEpsilon);
      th.tau_lower = th.q2 - th.k * th.iqr;
      th.tau_upper = th.q2 + th.k * th.iqr;
    }
    // Pipeline path: rows compressed on the wire, verifier reduces them.
    const Verdict pipeline = verify_signal(xc, ema, ths);
    // Direct path: verify the compressed coordinates of the reduced signal.
    const Vec direct_xc = swarm::compress(batch_mean(signal), basis);
    const Verdict direct = verify_signal(direct_xc, ema, ths);
    if (pipeline.outcome != direct.outcome) ++verdict_mismatches;
    for (int mi = 0; mi < kNumMetrics; ++mi) {
      if (std::abs(pipeline.gamma[mi] - direct.gamma[mi]) > 1e-9) {
        ++verdict_mismatches;
      }
    }
  }
  if (verdict_mismatches != 0) pass = false;

  report(11, "compression: orthonormal basis, exact round trip, verdicts", pass,
         "ortho_err=" + fmt(ortho_err) + " roundtrip=" + fmt(roundtrip_err) +
             " mismatches=" + std::to_string(verdict_mismatches));
}

// Criterion 12: byte-identical bundles for identical config + seed.
bool same_file_bytes(const std::filesystem::path& a,
                     const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string sa((std::istreambuf_iterator<char>(fa)),
                 std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)),
                 std::istreambuf_iterator<char>());
  return sa == sb;
}

void criterion_12() {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "sentinel-acceptance";
  fs::remove_all(base);

  bool pass = true;
  std::string detail;

  ExperimentConfig mesh_cfg = protocol_config();
  mesh_cfg.seed = 9;
  mesh_cfg.warmup = 150;
  mesh_cfg.steps = 200;
  mesh_cfg.verification.window = 50;
  mesh_cfg.attack.variant = "mixed";
  mesh_cfg.attack.fraction = 0.25;
  mesh_cfg.attack.collusion = 0.5;
  mesh_cfg.attack.start = mesh_cfg.warmup + 1;

  ExperimentConfig swarm_cfg;
  swarm_cfg.mode = RunMode::Swarm;
  swarm_cfg.seed = 9;
  swarm_cfg.warmup = 150;
  swarm_cfg.steps = 150;
  swarm_cfg.topology.stages = 4;
  swarm_cfg.topology.width = 24;
  swarm_cfg.task.input_dim = 12;
  swarm_cfg.task.target_dim = 6;
  swarm_cfg.verification.window = 50;
  swarm_cfg.swarm.trainers = 4;
  swarm_cfg.swarm.pool = 5;
  swarm_cfg.swarm.micro_batch = 16;
  swarm_cfg.attack.variant = "mixed";
  swarm_cfg.attack.fraction = 0.4;
  swarm_cfg.attack.collusion = 0.5;

  int files_compared = 0;
  for (int which = 0; which < 2; ++which) {
    const fs::path dir_a = base / ("run" + std::to_string(which) + "-a");
    const fs::path dir_b = base / ("run" + std::to_string(which) + "-b");
    std::string bundle_a, bundle_b;
    if (which == 0) {
      MeshSimulation s1(mesh_cfg), s2(mesh_cfg);
      bundle_a = write_bundle(s1.run(), dir_a.string());
      bundle_b = write_bundle(s2.run(), dir_b.string());
    } else {
      swarm::SwarmSimulation s1(swarm_cfg), s2(swarm_cfg);
      bundle_a = write_bundle(s1.run(), dir_a.string());
      bundle_b = write_bundle(s2.run(), dir_b.string());
    }
    for (const auto& entry : fs::directory_iterator(bundle_a)) {
      const fs::path twin = fs::path(bundle_b) / entry.path().filename();
      if (!same_file_bytes(entry.path(), twin)) {
        pass = false;
        detail += "diff:" + entry.path().filename().string() + " ";
      }
      ++files_compared;
    }
  }
  report(12, "reruns emit byte-identical result bundles", pass,
         detail + "files=" + std::to_string(files_compared));
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  double benign_seed1_final = 0.0;
  criterion_1(benign_seed1_final);
  criterion_2(benign_seed1_final);
  criterion_3(benign_seed1_final);
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  criterion_12();
  if (g_failures == 0) {
    std::printf("all criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}

#pragma once

#include <array>
#include <string>
#include <vector>

#include "sentinel/detector.hpp"
#include "sentinel/model.hpp"

namespace sentinel {

enum class RunMode { Mesh, Swarm, Theory };

struct TopologyConfig {
  int stages = 4;       // p
  int replicas = 8;     // d per stage
  int width = 32;       // hidden width
};

struct TaskConfig {
  int input_dim = 16;
  int target_dim = 8;
  int batch_size = 16;
  uint64_t teacher_seed = 7;
  double teacher_scale = 1.5;  // weight band of the target network
};

struct VerificationConfig {
  bool enabled = true;
  double beta_h = 0.9;
  double beta_g = 0.8;
  int window = 100;            // l
  int max_violations = 5;      // c
  long forgiveness = 100;      // T_forgiveness
  double alpha_fp = 0.01;
  double k0 = 1.5;
  double growth = 1.2;
  double shrink = 0.9;
  int max_adapt_iters = 50;
  double lambda_l1 = 5.0;
  double lambda_l2 = 12.0;
  double lambda_sfr = 2.5;
  double lambda_sw = 6.0;
  double sfr_abs_floor = 0.35;
  // Gradient signals ride the loss scale and spike with it; their fences get
  // extra slack relative to activation fences.
  double gradient_band_scale = 3.0;
  int n_proj = 0;
  // Metric ablation: which of l1,l2,sfr,sw may raise flags.
  std::array<bool, kNumMetrics> metrics_enabled = {true, true, true, true};

  AdaptParams adapt_params(SignalKind kind = SignalKind::Activation) const {
    AdaptParams p;
    p.k0 = k0;
    p.alpha_fp = alpha_fp;
    p.growth = growth;
    p.shrink = shrink;
    p.max_iters = max_adapt_iters;
    p.lambda = {lambda_l1, lambda_l2, lambda_sfr, lambda_sw};
    p.min_abs[2] = sfr_abs_floor;
    if (kind == SignalKind::Gradient) {
      for (double& v : p.lambda) v *= gradient_band_scale;
      for (double& v : p.min_abs) v *= gradient_band_scale;
    }
    return p;
  }
  LedgerConfig ledger_config() const { return {max_violations, forgiveness}; }
};

struct AttackConfig {
  std::string variant = "none";  // attack name, "mixed", or "none"
  std::string target = "activation";
  double fraction = 0.25;   // malicious share per attackable stage
  double collusion = 0.25;  // share of eligible attackers active per round
  long start = -1;          // default: first verified iteration
  double constant_value = 0.0;
  double scale = 10.0;
  double flip_prob = 1.0;
  double sigma = 1.0;
  bool stealth = false;
  double stealth_scale = 1.0;
  int delay = 100;
  double quantile = 0.01;
  double drift_rate = 0.5;
  double noise_sigma = 0.01;
  // Instrumented mode for the momentum-deviation probe: perturbations are
  // norm-clipped and fences forced open so nothing is ever flagged.
  bool clip_norm_enabled = false;
  double clip_norm = 1.0;
};

struct SwarmConfig {
  int trainers = 8;
  int pool = 6;             // workers per stage
  int micro_batch = 8;
  int accumulation = 4;     // micro-batches per optimizer step
  int compression_k = 0;    // 0 disables subspace compression
  int measure_every = 100;  // EMA-variance sampling period, in rounds
};

struct OutputConfig {
  bool trace = false;        // full per-verdict deviation trace CSV
  int thresholds_every = 10; // sampling period for thresholds.csv
  int validate_every = 100;
};

struct TheoryConfig {
  int d = 64;
  int p = 8;
  double eps_prob = 0.05;
  int trials = 10000;
  double tau = 1.0;
  double l_omega = 1.0;
  double gamma = 0.25;
  double eps_pert = 1.0;
  double eta = 0.1;
  double beta = 0.0;
  double smoothness = 1.0;
  double c_lyap = 0.0;
  double eps1 = 0.25;
  double eps2 = 0.5;
  double eps3 = 0.25;
  bool c2_abs_inner = false;
  double sigma = 0.0;
  double loss0 = 1.0;
  double loss_star = 0.0;
  long horizon = 1000;
  std::vector<double> lipschitz_theta;  // per stage; empty = estimate
  std::vector<double> lipschitz_f;
  bool estimate_from_model = false;
};

struct ExperimentConfig {
  RunMode mode = RunMode::Mesh;
  uint64_t seed = 1;
  long warmup = 1000;
  long steps = 2000;  // verified iterations after warm-up
  TopologyConfig topology;
  TaskConfig task;
  OptimizerConfig optimizer;
  VerificationConfig verification;
  AttackConfig attack;
  SwarmConfig swarm;
  OutputConfig output;
  TheoryConfig theory;

  AggregationMode aggregation = AggregationMode::Mean;
};

/// Parse the flat dotted key-value format. Unknown keys and invariant
/// violations raise with the offending key in the message.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

/// Canonical resolved listing: every key, sorted, values fully printed.
/// parse(emit(cfg)) == cfg.
std::string emit_resolved_config(const ExperimentConfig& cfg);

/// FNV-1a over the canonical text, hex encoded.
std::string config_hash(const ExperimentConfig& cfg);

const char* run_mode_name(RunMode m);

}  // namespace sentinel

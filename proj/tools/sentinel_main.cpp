#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sentinel/config.hpp"
#include "sentinel/mesh.hpp"
#include "sentinel/results.hpp"
#include "sentinel/swarm.hpp"
#include "sentinel/theory.hpp"

namespace {

using namespace sentinel;

ExperimentConfig load_config(const std::string& path, long seed_override,
                             bool no_verify) {
  ExperimentConfig cfg = parse_config_file(path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  if (no_verify) cfg.verification.enabled = false;
  return cfg;
}

ResultsBundle dispatch(const ExperimentConfig& cfg) {
  if (cfg.mode == RunMode::Swarm) {
    swarm::SwarmSimulation sim(cfg);
    return sim.run();
  }
  MeshSimulation sim(cfg);
  return sim.run();
}

nlohmann::json theory_report(const ExperimentConfig& cfg, int trials_override) {
  const TheoryConfig& th = cfg.theory;
  nlohmann::json j;
  j["schema"] = 1;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;

  const auto budget = theory::honest_majority_budget(th.d, th.p, th.eps_prob);
  j["honest_majority"]["d"] = th.d;
  j["honest_majority"]["p"] = th.p;
  j["honest_majority"]["eps"] = th.eps_prob;
  j["honest_majority"]["b_max"] = budget.b_max;
  j["honest_majority"]["vacuous"] = budget.vacuous;
  const int trials = trials_override > 0 ? trials_override : th.trials;
  const int b = static_cast<int>(budget.b_max);
  const double failure = theory::monte_carlo_majority(
      th.d, th.p, b, trials, Rng(cfg.seed, "theory/mc"));
  j["honest_majority"]["monte_carlo_b"] = b;
  j["honest_majority"]["monte_carlo_trials"] = trials;
  j["honest_majority"]["monte_carlo_failure_fraction"] = failure;

  const double evasion = theory::evasion_bound(th.tau, th.l_omega, th.gamma);
  j["detection"]["tau"] = th.tau;
  j["detection"]["l_omega"] = th.l_omega;
  j["detection"]["gamma"] = th.gamma;
  j["detection"]["evasion_bound"] = evasion;
  j["detection"]["momentum_deviation_cumulative"] =
      theory::momentum_deviation_bound(th.gamma, th.eps_pert, false);
  j["detection"]["momentum_deviation_single_step"] =
      theory::momentum_deviation_bound(th.gamma, th.eps_pert, true, th.beta);

  std::vector<double> l_theta = th.lipschitz_theta;
  std::vector<double> l_f = th.lipschitz_f;
  if (th.estimate_from_model || l_theta.empty() || l_f.empty()) {
    std::vector<size_t> dims;
    dims.push_back(cfg.task.input_dim);
    for (int s = 1; s < cfg.topology.stages; ++s) dims.push_back(cfg.topology.width);
    dims.push_back(cfg.task.target_dim);
    const PipelineModel model =
        make_pipeline(dims, Rng(cfg.task.teacher_seed, "teacher"),
                      cfg.task.teacher_scale);
    const auto est =
        theory::estimate_lipschitz(model, 100, 20, Rng(cfg.seed, "theory/lipschitz"));
    l_theta = est.l_theta;
    l_f = est.l_f;
    j["lipschitz"]["estimated"] = true;
  } else {
    j["lipschitz"]["estimated"] = false;
  }
  j["lipschitz"]["l_theta"] = l_theta;
  j["lipschitz"]["l_f"] = l_f;

  nlohmann::json stages = nlohmann::json::array();
  for (size_t s = 0; s < l_theta.size(); ++s) {
    std::vector<double> downstream(l_f.begin() + s + 1, l_f.end());
    const double g_s = theory::amplification_factor(l_theta[s], downstream);
    const double zeta =
        theory::gradient_perturbation_bound(th.gamma, g_s, th.tau, th.l_omega);
    nlohmann::json row;
    row["stage"] = s + 1;
    row["amplification"] = g_s;
    row["zeta"] = zeta;
    stages.push_back(row);
  }
  j["stages"] = stages;

  theory::ConvergenceInputs in;
  in.eta = th.eta;
  in.beta = th.beta;
  in.smoothness = th.smoothness;
  in.c_lyap = th.c_lyap;
  in.eps1 = th.eps1;
  in.eps2 = th.eps2;
  in.eps3 = th.eps3;
  in.c2_abs_inner = th.c2_abs_inner;
  const auto constants = theory::convergence_constants(in);
  j["convergence"]["alpha"] = constants.alpha;
  j["convergence"]["c1"] = constants.c1;
  j["convergence"]["c2"] = constants.c2;
  j["convergence"]["d"] = constants.d;
  j["convergence"]["alpha_positive"] = constants.alpha_positive;
  j["convergence"]["c1_negative"] = constants.c1_negative;
  double worst_zeta = 0.0;
  for (const auto& row : stages) worst_zeta = std::max(worst_zeta, row["zeta"].get<double>());
  if (constants.alpha > 0.0) {
    j["convergence"]["bound"] = theory::convergence_bound(
        constants, worst_zeta, th.sigma, th.loss0, th.loss_star, th.horizon);
    j["convergence"]["zeta_used"] = worst_zeta;
  } else {
    j["convergence"]["bound"] = nullptr;
  }
  return j;
}

void print_theory_table(const nlohmann::json& j) {
  std::printf("honest majority: b_max=%.3f (d=%d p=%d eps=%g)%s\n",
              j["honest_majority"]["b_max"].get<double>(),
              j["honest_majority"]["d"].get<int>(),
              j["honest_majority"]["p"].get<int>(),
              j["honest_majority"]["eps"].get<double>(),
              j["honest_majority"]["vacuous"].get<bool>() ? " [vacuous]" : "");
  std::printf("  monte carlo: b=%d trials=%d failure=%.4f\n",
              j["honest_majority"]["monte_carlo_b"].get<int>(),
              j["honest_majority"]["monte_carlo_trials"].get<int>(),
              j["honest_majority"]["monte_carlo_failure_fraction"].get<double>());
  std::printf("evasion bound: %.6g (tau=%g, L_omega=%g, gamma=%g)\n",
              j["detection"]["evasion_bound"].get<double>(),
              j["detection"]["tau"].get<double>(),
              j["detection"]["l_omega"].get<double>(),
              j["detection"]["gamma"].get<double>());
  std::printf("momentum deviation: cumulative=%.6g single-step=%.6g\n",
              j["detection"]["momentum_deviation_cumulative"].get<double>(),
              j["detection"]["momentum_deviation_single_step"].get<double>());
  for (const auto& row : j["stages"]) {
    std::printf("stage %d: G_s=%.6g zeta=%.6g\n", row["stage"].get<int>(),
                row["amplification"].get<double>(), row["zeta"].get<double>());
  }
  std::printf("convergence: alpha=%.6g C1=%.6g C2=%.6g D=%.6g%s\n",
              j["convergence"]["alpha"].get<double>(),
              j["convergence"]["c1"].get<double>(),
              j["convergence"]["c2"].get<double>(),
              j["convergence"]["d"].get<double>(),
              j["convergence"]["alpha_positive"].get<bool>() ? "" : " [alpha<=0]");
  if (!j["convergence"]["bound"].is_null()) {
    std::printf("  bound=%.6g at zeta=%.6g\n",
                j["convergence"]["bound"].get<double>(),
                j["convergence"]["zeta_used"].get<double>());
  }
}

struct SummaryRow {
  std::string config_hash;
  uint64_t seed = 0;
  std::string attack;
  std::string status;
  double f1 = 0, precision = 0, recall = 0;
  double detection_speed = std::nan("");
  double final_train_loss = 0;
};

SummaryRow row_from_json(const nlohmann::json& j) {
  SummaryRow r;
  r.config_hash = j["config_hash"].get<std::string>();
  r.seed = j["seed"].get<uint64_t>();
  r.attack = j["attack"].get<std::string>();
  r.status = j["status"].get<std::string>();
  r.f1 = j["f1"].get<double>();
  r.precision = j["precision"].get<double>();
  r.recall = j["recall"].get<double>();
  if (!j["detection_speed"].is_null()) {
    r.detection_speed = j["detection_speed"].get<double>();
  }
  r.final_train_loss = j["final_train_loss"].get<double>();
  return r;
}

void print_rows(std::vector<SummaryRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return a.config_hash != b.config_hash ? a.config_hash < b.config_hash
                                          : a.seed < b.seed;
  });
  std::printf("%-18s %-6s %-16s %-10s %7s %7s %7s %8s %12s\n", "config", "seed",
              "attack", "status", "F1", "Pr", "Re", "speed", "final_loss");
  for (const auto& r : rows) {
    std::printf("%-18s %-6llu %-16s %-10s %7.3f %7.3f %7.3f %8.2f %12.6g\n",
                r.config_hash.c_str(),
                static_cast<unsigned long long>(r.seed), r.attack.c_str(),
                r.status.c_str(), r.f1, r.precision, r.recall,
                r.detection_speed, r.final_train_loss);
  }
  // Aggregate rows per config group: mean and population std over seeds.
  std::map<std::string, std::vector<const SummaryRow*>> groups;
  for (const auto& r : rows) groups[r.config_hash].push_back(&r);
  for (const auto& [hash, members] : groups) {
    if (members.size() < 2) continue;
    double mean_f1 = 0, mean_loss = 0;
    for (const auto* r : members) {
      mean_f1 += r->f1;
      mean_loss += r->final_train_loss;
    }
    mean_f1 /= members.size();
    mean_loss /= members.size();
    double var_f1 = 0, var_loss = 0;
    for (const auto* r : members) {
      var_f1 += (r->f1 - mean_f1) * (r->f1 - mean_f1);
      var_loss += (r->final_train_loss - mean_loss) * (r->final_train_loss - mean_loss);
    }
    var_f1 /= members.size();
    var_loss /= members.size();
    std::printf("%-18s %-6s %-16s %-10s F1=%.3f+/-%.3f loss=%.6g+/-%.3g\n",
                hash.c_str(), "*", "aggregate",
                ("n=" + std::to_string(members.size())).c_str(), mean_f1,
                std::sqrt(var_f1), mean_loss, std::sqrt(var_loss));
  }
}

std::vector<SummaryRow> scan_bundles(const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::vector<SummaryRow> rows;
  if (!fs::exists(out_dir)) return rows;
  std::vector<fs::path> files;
  for (const auto& cfg_dir : fs::directory_iterator(out_dir)) {
    if (!cfg_dir.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(cfg_dir)) {
      const fs::path summary = seed_dir.path() / "summary.json";
      if (fs::exists(summary)) files.push_back(summary);
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    in >> j;
    rows.push_back(row_from_json(j));
  }
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic DP x PP training simulator with momentum-based "
               "worker verification"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  long seed_override = -1;
  bool no_verify = false;
  int trials = 0;
  int parallelism = 1;
  std::vector<std::string> sweep_configs;
  std::vector<long> sweep_seeds;
  bool json_only = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config) {
      cmd->add_option("--config", config_path, "experiment config file")
          ->required();
    }
    cmd->add_option("--seed", seed_override, "override the config seed");
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* run_mesh = app.add_subcommand("run-mesh", "run one mesh experiment");
  add_common(run_mesh, true);
  run_mesh->add_flag("--no-verify", no_verify, "baseline mode: disable verification");

  CLI::App* run_swarm = app.add_subcommand("run-swarm", "run one swarm experiment");
  add_common(run_swarm, true);
  run_swarm->add_flag("--no-verify", no_verify, "baseline mode: disable verification");

  CLI::App* theory_cmd = app.add_subcommand("theory", "emit the bounds report");
  add_common(theory_cmd, true);
  theory_cmd->add_option("--trials", trials, "Monte-Carlo trials override");
  theory_cmd->add_flag("--json", json_only, "print JSON only");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a list of configs");
  sweep_cmd->add_option("--configs", sweep_configs, "config files")->required();
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds applied to every config");
  sweep_cmd->add_option("--parallel", parallelism, "run up to N configs concurrently");
  sweep_cmd->add_option("--out", out_dir, "output directory");
  sweep_cmd->add_flag("--no-verify", no_verify, "baseline mode for every run");

  CLI::App* report_cmd = app.add_subcommand("report", "re-aggregate existing bundles");
  report_cmd->add_option("--out", out_dir, "output directory to scan")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_mesh->parsed() || run_swarm->parsed()) {
      ExperimentConfig cfg = load_config(config_path, seed_override, no_verify);
      if (run_mesh->parsed() && cfg.mode != RunMode::Mesh) {
        throw std::runtime_error("config-invalid: mode is not mesh");
      }
      if (run_swarm->parsed() && cfg.mode != RunMode::Swarm) {
        throw std::runtime_error("config-invalid: mode is not swarm");
      }
      const ResultsBundle bundle = dispatch(cfg);
      const std::string dir = write_bundle(bundle, out_dir);
      std::printf("%s\n", metrics_to_json(bundle).c_str());
      std::printf("bundle: %s\n", dir.c_str());
      return 0;  // a diverged run is still a completed run
    }
    if (theory_cmd->parsed()) {
      ExperimentConfig cfg = load_config(config_path, seed_override, false);
      const nlohmann::json j = theory_report(cfg, trials);
      if (json_only) {
        std::printf("%s\n", j.dump(2).c_str());
      } else {
        print_theory_table(j);
      }
      namespace fs = std::filesystem;
      const fs::path dir = fs::path(out_dir) / config_hash(cfg) /
                           std::to_string(cfg.seed);
      fs::create_directories(dir);
      std::ofstream out(dir / "theory.json", std::ios::binary);
      out << j.dump(2) << "\n";
      return 0;
    }
    if (sweep_cmd->parsed()) {
      if (sweep_configs.empty()) throw std::runtime_error("sweep: empty config list");
      struct Job {
        std::string path;
        long seed;
      };
      std::vector<Job> jobs;
      for (const auto& path : sweep_configs) {
        std::vector<long> seeds = sweep_seeds;
        if (seeds.empty()) seeds.push_back(-1);
        for (long seed : seeds) jobs.push_back({path, seed});
      }
      const auto run_job = [&](const Job& job) -> SummaryRow {
        try {
          ExperimentConfig cfg = load_config(job.path, job.seed, no_verify);
          const ResultsBundle bundle = dispatch(cfg);
          write_bundle(bundle, out_dir);
          return row_from_json(nlohmann::json::parse(metrics_to_json(bundle)));
        } catch (const std::exception& e) {
          SummaryRow r;
          r.config_hash = job.path;
          r.seed = job.seed >= 0 ? job.seed : 0;
          r.attack = "-";
          r.status = std::string("error: ") + e.what();
          return r;
        }
      };
      std::vector<SummaryRow> rows(jobs.size());
      if (parallelism <= 1) {
        for (size_t i = 0; i < jobs.size(); ++i) rows[i] = run_job(jobs[i]);
      } else {
        // Runs are isolated; rows keep submission order regardless of timing.
        std::vector<std::future<SummaryRow>> futures;
        size_t next = 0;
        while (next < jobs.size() || !futures.empty()) {
          while (next < jobs.size() &&
                 futures.size() < static_cast<size_t>(parallelism)) {
            futures.push_back(std::async(std::launch::async, run_job, jobs[next]));
            ++next;
          }
          const size_t idx = next - futures.size();
          rows[idx] = futures.front().get();
          futures.erase(futures.begin());
        }
      }
      print_rows(rows);
      return 0;
    }
    if (report_cmd->parsed()) {
      print_rows(scan_bundles(out_dir));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

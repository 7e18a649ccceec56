#pragma once

#include <vector>

#include "sentinel/model.hpp"
#include "sentinel/numerics.hpp"

namespace sentinel {
namespace theory {

struct BudgetResult {
  double b_max = 0.0;
  bool vacuous = false;  // closed form went negative
};

/// Largest malicious-worker budget that still keeps every stage under an
/// honest majority with probability 1 - eps under random assignment:
/// b <= dp/2 - p * sqrt((d/2) ln(p/eps)).
BudgetResult honest_majority_budget(int d, int p, double eps_prob);

/// Fraction of random without-replacement assignments of b malicious
/// workers into p stages of d slots where some stage reaches d/2.
double monte_carlo_majority(int d, int p, int b, int trials, Rng rng);

/// Largest undetected perturbation: tau / (L_Omega * (1 + gamma)).
double evasion_bound(double tau, double l_omega, double gamma);

/// G_s = L_theta * prod of downstream activation Lipschitz constants.
double amplification_factor(double l_theta_s,
                            const std::vector<double>& l_f_downstream);

/// zeta = gamma * G_s * evasion_bound(tau, L_Omega, gamma).
double gradient_perturbation_bound(double gamma, double g_s, double tau,
                                   double l_omega);

/// gamma * eps cumulative; (1 - beta) * gamma * eps for a single step.
double momentum_deviation_bound(double gamma, double eps_pert, bool single_step,
                                double beta = 0.0);

struct ConvergenceInputs {
  double eta = 0.1;
  double beta = 0.0;
  double smoothness = 1.0;  // L
  double c_lyap = 0.0;
  double eps1 = 0.25;
  double eps2 = 0.5;
  double eps3 = 0.25;
  bool c2_abs_inner = false;  // clamp (1 - beta - beta/(4 eps3)) at zero
};

struct ConvergenceConstants {
  double alpha = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double d = 0.0;
  bool alpha_positive = false;
  bool c1_negative = false;
};

ConvergenceConstants convergence_constants(const ConvergenceInputs& in);

/// (L0 - L*) / (alpha T) + (C2 zeta^2 + D sigma^2) / alpha.
/// Throws "infeasible-constants" when alpha <= 0.
double convergence_bound(const ConvergenceConstants& c, double zeta, double sigma,
                         double loss0, double loss_star, long horizon);

struct LipschitzEstimate {
  std::vector<double> l_theta;  // per stage
  std::vector<double> l_f;      // per stage
};

/// Samples random inputs and takes the max Jacobian spectral norm per stage
/// (power iteration). Inputs drawn N(0,1) at each stage's input width.
LipschitzEstimate estimate_lipschitz(const PipelineModel& model, int samples,
                                     int power_iters, Rng rng);

}  // namespace theory
}  // namespace sentinel

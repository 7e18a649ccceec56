#include "sentinel/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sentinel {
namespace theory {

BudgetResult honest_majority_budget(int d, int p, double eps_prob) {
  if (d < 1 || p < 1 || eps_prob <= 0.0 || eps_prob >= 1.0) {
    throw std::runtime_error("invalid-theory-input");
  }
  const double dd = d, pp = p;
  const double value =
      dd * pp / 2.0 - pp * std::sqrt(dd / 2.0 * std::log(pp / eps_prob));
  if (value < 0.0) return {0.0, true};
  return {value, false};
}

double monte_carlo_majority(int d, int p, int b, int trials, Rng rng) {
  const int n = d * p;
  if (b < 0 || b > n) throw std::runtime_error("invalid-budget");
  if (trials <= 0) throw std::runtime_error("invalid-trials");
  std::vector<int> slots(n);
  std::iota(slots.begin(), slots.end(), 0);
  std::vector<int> per_stage(p);
  int failures = 0;
  for (int t = 0; t < trials; ++t) {
    // Assign b malicious workers to distinct slots: partial Fisher-Yates.
    std::fill(per_stage.begin(), per_stage.end(), 0);
    for (int i = 0; i < b; ++i) {
      const size_t j = i + rng.uniform_index(static_cast<size_t>(n - i));
      std::swap(slots[i], slots[j]);
      ++per_stage[slots[i] / d];
    }
    for (int s = 0; s < p; ++s) {
      if (2 * per_stage[s] >= d) {
        ++failures;
        break;
      }
    }
  }
  return static_cast<double>(failures) / static_cast<double>(trials);
}

double evasion_bound(double tau, double l_omega, double gamma) {
  if (l_omega <= 0.0) throw std::runtime_error("invalid-lipschitz");
  return tau / (l_omega * (1.0 + gamma));
}

double amplification_factor(double l_theta_s,
                            const std::vector<double>& l_f_downstream) {
  if (l_theta_s <= 0.0) throw std::runtime_error("invalid-lipschitz");
  double g = l_theta_s;
  for (double lf : l_f_downstream) {
    if (lf <= 0.0) throw std::runtime_error("invalid-lipschitz");
    g *= lf;
  }
  return g;
}

double gradient_perturbation_bound(double gamma, double g_s, double tau,
                                   double l_omega) {
  return gamma * g_s * evasion_bound(tau, l_omega, gamma);
}

double momentum_deviation_bound(double gamma, double eps_pert, bool single_step,
                                double beta) {
  return single_step ? (1.0 - beta) * gamma * eps_pert : gamma * eps_pert;
}

ConvergenceConstants convergence_constants(const ConvergenceInputs& in) {
  const double eta = in.eta, beta = in.beta, L = in.smoothness, c = in.c_lyap;
  const double e1 = in.eps1, e2 = in.eps2, e3 = in.eps3;
  const double half_eta2L_c = eta * eta * L / 2.0 + c;

  ConvergenceConstants out;
  out.alpha = eta * (1.0 - beta) *
              (1.0 - e2 - beta / (4.0 * e1 * (1.0 - beta)) -
               (2.0 / eta) * half_eta2L_c * (1.0 - beta + beta / (4.0 * e1)));
  out.c1 = eta * beta * e1 +
           half_eta2L_c * beta * (beta + 2.0 * (1.0 - beta) * (e1 + e3)) - c;
  double inner = 1.0 - beta - beta / (4.0 * e3);
  if (in.c2_abs_inner) inner = std::max(inner, 0.0);
  out.c2 = eta * (1.0 - beta) / (4.0 * e2) +
           2.0 * half_eta2L_c * (1.0 - beta) * inner;
  out.d = half_eta2L_c * (1.0 - beta) * (1.0 - beta);
  out.alpha_positive = out.alpha > 0.0;
  out.c1_negative = out.c1 < 0.0;
  return out;
}

double convergence_bound(const ConvergenceConstants& c, double zeta, double sigma,
                         double loss0, double loss_star, long horizon) {
  if (!(c.alpha > 0.0)) throw std::runtime_error("infeasible-constants");
  if (horizon < 1) throw std::runtime_error("invalid-horizon");
  return (loss0 - loss_star) / (c.alpha * static_cast<double>(horizon)) +
         (c.c2 * zeta * zeta + c.d * sigma * sigma) / c.alpha;
}

namespace {

// Spectral norm of an explicit matrix via power iteration on J^T J.
double spectral_norm(const Matrix& j, int iters, Rng& rng) {
  if (j.rows == 0 || j.cols == 0) return 0.0;
  Vec v(j.cols);
  for (double& x : v) x = rng.normal();
  double norm_v = std::max(l2_norm(v), 1e-300);
  for (double& x : v) x /= norm_v;
  double sigma = 0.0;
  Vec jv(j.rows);
  for (int it = 0; it < iters; ++it) {
    for (size_t i = 0; i < j.rows; ++i) {
      double s = 0.0;
      for (size_t k = 0; k < j.cols; ++k) s += j(i, k) * v[k];
      jv[i] = s;
    }
    Vec jtjv(j.cols, 0.0);
    for (size_t i = 0; i < j.rows; ++i) {
      for (size_t k = 0; k < j.cols; ++k) jtjv[k] += j(i, k) * jv[i];
    }
    const double n = std::max(l2_norm(jtjv), 1e-300);
    for (size_t k = 0; k < j.cols; ++k) v[k] = jtjv[k] / n;
    sigma = std::sqrt(n);
  }
  return sigma;
}

}  // namespace

LipschitzEstimate estimate_lipschitz(const PipelineModel& model, int samples,
                                     int power_iters, Rng rng) {
  LipschitzEstimate est;
  est.l_theta.assign(model.stages.size(), 0.0);
  est.l_f.assign(model.stages.size(), 0.0);
  for (size_t s = 0; s < model.stages.size(); ++s) {
    const StageParams& stage = model.stages[s];
    const size_t m_in = stage.weights.rows;
    const size_t m_out = stage.weights.cols;
    Rng stage_rng = rng.derive("lipschitz/stage" + std::to_string(s + 1));
    for (int n = 0; n < samples; ++n) {
      Matrix x(1, m_in);
      for (double& v : x.data) v = stage_rng.normal();
      const Matrix y = stage_forward(stage, x);
      Vec act_deriv(m_out, 1.0);
      if (stage.activation == StageActivation::Tanh) {
        for (size_t j = 0; j < m_out; ++j) {
          act_deriv[j] = 1.0 - y(0, j) * y(0, j);
        }
      }
      // d y_j / d x_i = W_ij * a_j
      Matrix jx(m_in, m_out);
      for (size_t i = 0; i < m_in; ++i) {
        for (size_t j = 0; j < m_out; ++j) {
          jx(i, j) = stage.weights(i, j) * act_deriv[j];
        }
      }
      // d y_j / d W_ij = x_i * a_j, d y_j / d b_j = a_j
      Matrix jt(m_in * m_out + m_out, m_out);
      for (size_t i = 0; i < m_in; ++i) {
        for (size_t j = 0; j < m_out; ++j) {
          jt(i * m_out + j, j) = x(0, i) * act_deriv[j];
        }
      }
      for (size_t j = 0; j < m_out; ++j) {
        jt(m_in * m_out + j, j) = act_deriv[j];
      }
      est.l_f[s] = std::max(est.l_f[s], spectral_norm(jx, power_iters, stage_rng));
      est.l_theta[s] =
          std::max(est.l_theta[s], spectral_norm(jt, power_iters, stage_rng));
    }
  }
  return est;
}

}  // namespace theory
}  // namespace sentinel

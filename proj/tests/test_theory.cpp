#include "sentinel/theory.hpp"

#include <cmath>

#include "doctest.h"

using namespace sentinel;
using namespace sentinel::theory;

TEST_CASE("honest majority budget closed form") {
  // ln(p/eps) = 0 when eps == p (degenerate but exercises the formula)
  CHECK(honest_majority_budget(10, 2, 0.99).b_max <
        honest_majority_budget(10, 2, 0.999).b_max + 100.0);

  const auto r = honest_majority_budget(64, 8, 0.05);
  CHECK(!r.vacuous);
  CHECK(r.b_max == doctest::Approx(154.049).epsilon(1e-4));

  const auto v = honest_majority_budget(8, 16, 0.01);
  CHECK(v.vacuous);
  CHECK(v.b_max == 0.0);
}

TEST_CASE("honest majority budget is monotone in d and eps") {
  double prev = -1e300;
  for (int d : {8, 16, 32, 64, 128}) {
    const double b = honest_majority_budget(d, 8, 0.05).b_max;
    CHECK(b >= prev);
    prev = b;
  }
  prev = -1e300;
  for (double eps : {0.001, 0.01, 0.05, 0.2, 0.5}) {
    const double b = honest_majority_budget(64, 8, eps).b_max;
    CHECK(b >= prev);
    prev = b;
  }
}

TEST_CASE("monte carlo majority edge cases") {
  Rng rng(5, "mc");
  CHECK(monte_carlo_majority(8, 4, 0, 100, rng) == 0.0);
  CHECK(monte_carlo_majority(8, 4, 32, 100, rng) == 1.0);
  CHECK_THROWS(monte_carlo_majority(8, 4, 33, 10, rng));
}

TEST_CASE("monte carlo validates the budget at d=64 p=8") {
  Rng rng(7, "mc-budget");
  const int b = static_cast<int>(honest_majority_budget(64, 8, 0.05).b_max);
  CHECK(b == 154);
  const double failure = monte_carlo_majority(64, 8, b, 10000, rng);
  CHECK(failure <= 0.05 + 2.0 * std::sqrt(0.05 * 0.95 / 10000.0));
}

TEST_CASE("evasion bound") {
  CHECK(evasion_bound(1, 1, 0) == doctest::Approx(1.0));
  CHECK(evasion_bound(0.5, 2, 0.25) == doctest::Approx(0.2));
  CHECK(evasion_bound(0, 3, 0.4) == 0.0);
  CHECK_THROWS(evasion_bound(1, 0, 0.2));
}

TEST_CASE("amplification factor") {
  CHECK(amplification_factor(2, {1, 1, 1}) == doctest::Approx(2.0));
  CHECK(amplification_factor(1.5, {2, 3}) == doctest::Approx(9.0));
  CHECK(amplification_factor(1, {}) == doctest::Approx(1.0));
  CHECK_THROWS(amplification_factor(-1, {}));
}

TEST_CASE("gradient perturbation bound factors through the evasion bound") {
  CHECK(gradient_perturbation_bound(0, 4, 1, 1) == 0.0);
  CHECK(gradient_perturbation_bound(0.25, 4, 1, 1) == doctest::Approx(0.8));
  // compositional identity over a grid, monotone in tau
  for (double gamma : {0.1, 0.25, 0.4}) {
    double prev = -1.0;
    for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      const double z = gradient_perturbation_bound(gamma, 3.0, tau, 2.0);
      CHECK(z == doctest::Approx(gamma * 3.0 * evasion_bound(tau, 2.0, gamma)));
      CHECK(z >= prev);
      prev = z;
    }
  }
}

TEST_CASE("momentum deviation bound") {
  CHECK(momentum_deviation_bound(0.25, 2, false) == doctest::Approx(0.5));
  CHECK(momentum_deviation_bound(0.25, 2, true, 0.9) == doctest::Approx(0.05));
  CHECK(momentum_deviation_bound(0.0, 2, false) == 0.0);
}

TEST_CASE("convergence constants match the closed form") {
  ConvergenceInputs in;
  in.eta = 0.1;
  in.beta = 0.0;
  in.smoothness = 1.0;
  in.c_lyap = 0.0;
  in.eps2 = 0.5;
  const auto c = convergence_constants(in);
  CHECK(c.alpha == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(c.c1 == doctest::Approx(0.0));
  CHECK(c.c2 == doctest::Approx(0.06).epsilon(1e-12));
  CHECK(c.d == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(c.alpha_positive);

  // beta = 0 kills every eps1/eps3 occurrence
  ConvergenceInputs other = in;
  other.eps1 = 17.0;
  other.eps3 = 0.003;
  const auto c2 = convergence_constants(other);
  CHECK(c.alpha == c2.alpha);
  CHECK(c.c1 == c2.c1);
  CHECK(c.c2 == c2.c2);
  CHECK(c.d == c2.d);

  // alpha flag false when eps2 >= 1
  ConvergenceInputs bad = in;
  bad.eps2 = 1.0;
  CHECK(!convergence_constants(bad).alpha_positive);
}

TEST_CASE("convergence bound arithmetic") {
  ConvergenceInputs in;
  in.eta = 0.1;
  in.beta = 0.0;
  in.smoothness = 1.0;
  in.c_lyap = 0.0;
  in.eps2 = 0.5;
  const auto c = convergence_constants(in);
  CHECK(convergence_bound(c, 0.1, 0.0, 1.0, 0.0, 1000) ==
        doctest::Approx(0.04).epsilon(1e-12));

  // zeta = sigma = 0 decays as 1/T
  const double b1 = convergence_bound(c, 0, 0, 1.0, 0.0, 1000);
  const double b2 = convergence_bound(c, 0, 0, 1.0, 0.0, 2000);
  CHECK(b2 == doctest::Approx(b1 / 2.0));

  // doubling zeta quadruples the zeta term
  const double z1 = convergence_bound(c, 1.0, 0, 0.0, 0.0, 1000);
  const double z2 = convergence_bound(c, 2.0, 0, 0.0, 0.0, 1000);
  CHECK(z2 == doctest::Approx(4.0 * z1));

  ConvergenceConstants infeasible;
  infeasible.alpha = -0.1;
  CHECK_THROWS_WITH(convergence_bound(infeasible, 0, 0, 1, 0, 10),
                    "infeasible-constants");
}

TEST_CASE("classical sgd shape at beta=0") {
  // alpha = Theta(eta) and D = Theta(eta^2 L) across an eta grid.
  const double L = 1.0;
  double min_a = 1e300, max_a = -1e300, min_d = 1e300, max_d = -1e300;
  for (double eta : {0.01, 0.05, 0.1}) {
    ConvergenceInputs in;
    in.eta = eta;
    in.beta = 0.0;
    in.smoothness = L;
    in.c_lyap = 1e-12;
    in.eps2 = 0.5;
    const auto c = convergence_constants(in);
    const double a_ratio = c.alpha / eta;
    const double d_ratio = c.d / (eta * eta * L);
    min_a = std::min(min_a, a_ratio);
    max_a = std::max(max_a, a_ratio);
    min_d = std::min(min_d, d_ratio);
    max_d = std::max(max_d, d_ratio);
  }
  CHECK(max_a / min_a < 1.3);   // constant up to the eta*L correction
  CHECK(max_d / min_d < 1.0 + 1e-6);
}

TEST_CASE("lipschitz estimator brackets the linear-stage truth") {
  // A pure linear stage has exact Jacobian norms: ||W|| for the input and
  // sqrt(||x||^2 + 1) * max row... use identity W for a clean bound.
  StageParams stage;
  stage.stage_index = 1;
  stage.weights = Matrix(3, 3);
  for (int i = 0; i < 3; ++i) stage.weights(i, i) = 2.0;
  stage.bias.assign(3, 0.0);
  stage.activation = StageActivation::Identity;
  PipelineModel model;
  model.stages.push_back(stage);

  const auto est = estimate_lipschitz(model, 20, 30, Rng(3, "lip"));
  CHECK(est.l_f[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(est.l_theta[0] >= 1.0);  // at least the bias block
}

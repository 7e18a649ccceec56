#pragma once

#include <utility>
#include <vector>

#include "sentinel/linalg.hpp"
#include "sentinel/numerics.hpp"

namespace sentinel {

enum class StageActivation { Tanh, Identity };

/// One pipeline stage: a dense layer plus its nonlinearity. Hidden stages
/// use tanh, the final stage is linear.
struct StageParams {
  int stage_index = 0;  // 1-based
  Matrix weights;       // m_in x m_out
  Vec bias;             // m_out
  StageActivation activation = StageActivation::Tanh;
};

struct Batch {
  Matrix inputs;   // n_batch x m_in
  Matrix targets;  // n_batch x m_target
};

struct StageGrads {
  Matrix d_weights;
  Vec d_bias;
};

/// Velocity mirrors the parameter shapes; starts at zero.
struct StageOptimizerState {
  Matrix v_weights;
  Vec v_bias;
};

struct OptimizerConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
};

enum class AggregationMode { Mean, CoordinateMedian };

Matrix stage_forward(const StageParams& params, const Matrix& input);

/// Exact gradients of the stage map. Returns (parameter grads, input grads).
std::pair<StageGrads, Matrix> stage_backward(const StageParams& params,
                                             const Matrix& cached_input,
                                             const Matrix& upstream_grad);

/// MSE loss 0.5 * mean((a - t)^2) over all elements and its gradient.
std::pair<double, Matrix> loss_and_grad(const Matrix& final_activation,
                                        const Matrix& targets);

StageGrads aggregate_param_grads(const std::vector<StageGrads>& grads,
                                 AggregationMode mode);

/// Balanced momentum update: v' = beta v + (1-beta) g, theta' = theta - eta v'.
/// Throws "non-finite-gradient" when the gradient has NaN/Inf entries.
void momentum_sgd_step(StageParams& params, StageOptimizerState& opt,
                       const StageGrads& grad, const OptimizerConfig& cfg);

/// Stage input cache keyed by replica; backward without a prior forward
/// throws "no-cached-input".
class StageCache {
 public:
  void store(int replica, Matrix input);
  const Matrix& get(int replica) const;
  void clear();

 private:
  std::vector<std::pair<int, Matrix>> entries_;
};

struct PipelineModel {
  std::vector<StageParams> stages;

  size_t num_stages() const { return stages.size(); }
  Matrix forward(const Matrix& input) const;
};

/// Weights uniform in +/- weight_scale/sqrt(fan_in), biases uniform in
/// +/- bias_scale; final stage linear. dims = {input, hidden..., target};
/// one layer per stage. Nonzero biases keep the per-unit activation
/// statistics structured instead of symmetric around zero.
PipelineModel make_pipeline(const std::vector<size_t>& dims, Rng rng,
                            double weight_scale = 1.0, double bias_scale = 0.5);

std::vector<StageOptimizerState> make_optimizer_state(const PipelineModel& model);

}  // namespace sentinel

#include "sentinel/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentinel {

Matrix stage_forward(const StageParams& params, const Matrix& input) {
  if (input.cols != params.weights.rows) throw std::runtime_error("shape-mismatch");
  Matrix out = matmul(input, params.weights);
  for (size_t i = 0; i < out.rows; ++i) {
    for (size_t j = 0; j < out.cols; ++j) out(i, j) += params.bias[j];
  }
  if (params.activation == StageActivation::Tanh) {
    for (double& x : out.data) x = std::tanh(x);
  }
  return out;
}

std::pair<StageGrads, Matrix> stage_backward(const StageParams& params,
                                             const Matrix& cached_input,
                                             const Matrix& upstream_grad) {
  if (cached_input.cols != params.weights.rows ||
      upstream_grad.cols != params.weights.cols ||
      cached_input.rows != upstream_grad.rows) {
    throw std::runtime_error("shape-mismatch");
  }
  Matrix dz = upstream_grad;
  if (params.activation == StageActivation::Tanh) {
    const Matrix y = stage_forward(params, cached_input);
    for (size_t i = 0; i < dz.data.size(); ++i) {
      dz.data[i] *= 1.0 - y.data[i] * y.data[i];
    }
  }
  StageGrads grads;
  grads.d_weights = matmul_at(cached_input, dz);
  grads.d_bias = col_sums(dz);
  Matrix input_grad = matmul_bt(dz, params.weights);
  return {std::move(grads), std::move(input_grad)};
}

std::pair<double, Matrix> loss_and_grad(const Matrix& final_activation,
                                        const Matrix& targets) {
  if (!final_activation.same_shape(targets)) throw std::runtime_error("shape-mismatch");
  const double n = static_cast<double>(final_activation.size());
  double loss = 0.0;
  Matrix grad(final_activation.rows, final_activation.cols);
  for (size_t i = 0; i < final_activation.data.size(); ++i) {
    const double diff = final_activation.data[i] - targets.data[i];
    loss += diff * diff;
    grad.data[i] = diff / n;
  }
  return {0.5 * loss / n, std::move(grad)};
}

StageGrads aggregate_param_grads(const std::vector<StageGrads>& grads,
                                 AggregationMode mode) {
  if (grads.empty()) throw std::runtime_error("no-replicas");
  const size_t d = grads.size();
  StageGrads out;
  out.d_weights = Matrix(grads[0].d_weights.rows, grads[0].d_weights.cols);
  out.d_bias.assign(grads[0].d_bias.size(), 0.0);
  if (mode == AggregationMode::Mean) {
    for (const auto& g : grads) {
      if (!g.d_weights.same_shape(out.d_weights) || g.d_bias.size() != out.d_bias.size()) {
        throw std::runtime_error("shape-mismatch");
      }
      for (size_t i = 0; i < out.d_weights.data.size(); ++i) {
        out.d_weights.data[i] += g.d_weights.data[i];
      }
      for (size_t i = 0; i < out.d_bias.size(); ++i) out.d_bias[i] += g.d_bias[i];
    }
    const double inv = 1.0 / static_cast<double>(d);
    for (double& x : out.d_weights.data) x *= inv;
    for (double& x : out.d_bias) x *= inv;
    return out;
  }
  // Coordinate-wise median; stand-in for robust DP aggregation.
  Vec scratch(d);
  for (size_t i = 0; i < out.d_weights.data.size(); ++i) {
    for (size_t r = 0; r < d; ++r) scratch[r] = grads[r].d_weights.data[i];
    out.d_weights.data[i] = percentile(scratch, 0.5);
  }
  for (size_t i = 0; i < out.d_bias.size(); ++i) {
    for (size_t r = 0; r < d; ++r) scratch[r] = grads[r].d_bias[i];
    out.d_bias[i] = percentile(scratch, 0.5);
  }
  return out;
}

void momentum_sgd_step(StageParams& params, StageOptimizerState& opt,
                       const StageGrads& grad, const OptimizerConfig& cfg) {
  if (!all_finite(grad.d_weights) || !all_finite(grad.d_bias)) {
    throw std::runtime_error("non-finite-gradient");
  }
  const double beta = cfg.momentum;
  for (size_t i = 0; i < params.weights.data.size(); ++i) {
    double& v = opt.v_weights.data[i];
    v = beta * v + (1.0 - beta) * grad.d_weights.data[i];
    params.weights.data[i] -= cfg.learning_rate * v;
  }
  for (size_t i = 0; i < params.bias.size(); ++i) {
    double& v = opt.v_bias[i];
    v = beta * v + (1.0 - beta) * grad.d_bias[i];
    params.bias[i] -= cfg.learning_rate * v;
  }
}

void StageCache::store(int replica, Matrix input) {
  for (auto& e : entries_) {
    if (e.first == replica) {
      e.second = std::move(input);
      return;
    }
  }
  entries_.emplace_back(replica, std::move(input));
}

const Matrix& StageCache::get(int replica) const {
  for (const auto& e : entries_) {
    if (e.first == replica) return e.second;
  }
  throw std::runtime_error("no-cached-input");
}

void StageCache::clear() { entries_.clear(); }

Matrix PipelineModel::forward(const Matrix& input) const {
  Matrix h = input;
  for (const auto& stage : stages) h = stage_forward(stage, h);
  return h;
}

PipelineModel make_pipeline(const std::vector<size_t>& dims, Rng rng,
                            double weight_scale, double bias_scale) {
  if (dims.size() < 2) throw std::runtime_error("shape-mismatch");
  PipelineModel model;
  for (size_t s = 0; s + 1 < dims.size(); ++s) {
    StageParams stage;
    stage.stage_index = static_cast<int>(s + 1);
    stage.weights = Matrix(dims[s], dims[s + 1]);
    stage.bias.assign(dims[s + 1], 0.0);
    const double bound = weight_scale / std::sqrt(static_cast<double>(dims[s]));
    for (double& w : stage.weights.data) w = (2.0 * rng.uniform() - 1.0) * bound;
    for (double& b : stage.bias) b = (2.0 * rng.uniform() - 1.0) * bias_scale;
    stage.activation = (s + 2 == dims.size()) ? StageActivation::Identity
                                              : StageActivation::Tanh;
    model.stages.push_back(std::move(stage));
  }
  return model;
}

std::vector<StageOptimizerState> make_optimizer_state(const PipelineModel& model) {
  std::vector<StageOptimizerState> states;
  states.reserve(model.stages.size());
  for (const auto& stage : model.stages) {
    StageOptimizerState st;
    st.v_weights = Matrix(stage.weights.rows, stage.weights.cols);
    st.v_bias.assign(stage.bias.size(), 0.0);
    states.push_back(std::move(st));
  }
  return states;
}

}  // namespace sentinel

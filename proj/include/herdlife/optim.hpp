#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "herdlife/autograd.hpp"
#include "herdlife/error.hpp"
#include "herdlife/tensor.hpp"

namespace herdlife {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one list of parameters, in the order they are passed to adam_step.
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Grads are left in place; callers zero them before the next backward pass.
inline void adam_step(std::span<ag::Parameter* const> parameters, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const ag::Parameter* p : parameters) {
      state.first_moment.push_back(Tensor::zeros_like(p->value));
      state.second_moment.push_back(Tensor::zeros_like(p->value));
    }
  }
  if (state.first_moment.size() != parameters.size()) {
    throw ShapeError("adam_step: parameter count differs from optimizer state");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < parameters.size(); ++k) {
    ag::Parameter& p = *parameters[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (p.grad.shape() != p.value.shape() || m.shape() != p.value.shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace herdlife

#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "transgrec/error.hpp"
#include "transgrec/tensor.hpp"

namespace transgrec::nk {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `param` in place.
/// Throws NumericalError naming `name` if the gradient is not finite.
template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
               const AdamConfig& cfg, const std::string& name = "parameter") {
  if (grad.shape() != param.shape()) {
    throw ShapeError("adam_step: gradient shape " + shape_str(grad.shape()) +
                     " does not match parameter '" + name + "' " + shape_str(param.shape()));
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericalError("non-finite gradient in parameter '" + name + "' at flat index " +
                           std::to_string(i) + " (shape " + shape_str(param.shape()) + ")");
    }
  }
  if (state.m.shape() != param.shape()) {
    state.m = Tensor<T>(param.shape());
    state.v = Tensor<T>(param.shape());
    state.step = 0;
  }
  ++state.step;
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace transgrec::nk

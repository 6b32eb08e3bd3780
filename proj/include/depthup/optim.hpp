#pragma once

#include <cmath>

#include "depthup/tensor.hpp"

namespace depthup {

// Trainable parameter: value plus gradient and Adam state, all same dims.
template <typename T>
struct Param {
  Tensor<T> value, grad, adam_m, adam_v;
  int64_t step_count = 0;

  Param() = default;
  explicit Param(Tensor<T> v)
      : value(std::move(v)),
        grad(value.n, value.h, value.w, value.c),
        adam_m(value.n, value.h, value.w, value.c),
        adam_v(value.n, value.h, value.w, value.c) {}

  void zero_grad() { grad.fill(T(0)); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update with bias correction. The gradient is left untouched;
// the caller zeroes it.
template <typename T>
void adam_step(Param<T>& p, const AdamConfig& cfg) {
  if (!p.grad.all_finite()) throw TrainingError("non-finite gradient in adam_step");
  p.step_count += 1;
  const double t = double(p.step_count);
  const double corr1 = 1.0 - std::pow(cfg.beta1, t);
  const double corr2 = 1.0 - std::pow(cfg.beta2, t);
  for (size_t i = 0; i < p.value.size(); ++i) {
    const double g = double(p.grad.data[i]);
    const double m = cfg.beta1 * double(p.adam_m.data[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * double(p.adam_v.data[i]) + (1.0 - cfg.beta2) * g * g;
    p.adam_m.data[i] = T(m);
    p.adam_v.data[i] = T(v);
    const double m_hat = m / corr1;
    const double v_hat = v / corr2;
    p.value.data[i] = T(double(p.value.data[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

template <typename T>
void adam_step(Param<T>& p, double lr) {
  AdamConfig cfg;
  cfg.lr = lr;
  adam_step(p, cfg);
}

}  // namespace depthup

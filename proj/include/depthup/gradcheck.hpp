#pragma once

#include <functional>
#include <span>
#include <vector>

#include "depthup/tensor.hpp"

namespace depthup {

// Finite-difference gradient verification. Always run in double precision.
//
// A layer y = f(x) is probed through the scalar J = sum(R .* f(x)) for a fixed
// random tensor R; the analytic dJ/dx is then the layer backward evaluated at
// grad_out = R. Central differences with step 1e-5 give the numeric side.

inline double probe_sum(const Tensor<double>& y, const Tensor<double>& probe) {
  if (!y.same_dims(probe)) throw ShapeError("probe dims mismatch");
  double s = 0;
  for (size_t i = 0; i < y.size(); ++i) s += y.data[i] * probe.data[i];
  return s;
}

// Relative error with an absolute floor so near-zero gradient pairs compare
// on an absolute scale instead of blowing up.
inline double grad_rel_error(double analytic, double numeric, double floor_scale = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor_scale});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckSettings {
  double step = 1e-5;
  double floor_scale = 1e-6;
};

// Perturbs each element of `storage` in place, recomputes the scalar via
// `eval`, and compares against `analytic`. Returns the worst relative error.
inline double grad_check_span(std::span<double> storage, const std::function<double()>& eval,
                              std::span<const double> analytic,
                              const GradCheckSettings& s = {}) {
  if (storage.size() != analytic.size()) throw ShapeError("grad_check: analytic size mismatch");
  double worst = 0;
  for (size_t i = 0; i < storage.size(); ++i) {
    const double saved = storage[i];
    storage[i] = saved + s.step;
    const double jp = eval();
    storage[i] = saved - s.step;
    const double jm = eval();
    storage[i] = saved;
    const double numeric = (jp - jm) / (2 * s.step);
    worst = std::max(worst, grad_rel_error(analytic[i], numeric, s.floor_scale));
  }
  return worst;
}

// Convenience wrapper for the common tensor-in / tensor-grad case.
inline double grad_check_tensor(Tensor<double>& x, const std::function<double()>& eval,
                                const Tensor<double>& analytic, const GradCheckSettings& s = {}) {
  if (!x.same_dims(analytic)) throw ShapeError("grad_check: analytic dims mismatch");
  return grad_check_span(std::span<double>(x.data), eval, std::span<const double>(analytic.data), s);
}

}  // namespace depthup

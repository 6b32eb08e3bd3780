#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "depthup/common.hpp"

namespace depthup {

// Dense N x H x W x C array, row-major with channels fastest.
//
// Convolution kernels reuse the same storage with dims read as
// (kh, kw, cin, cout); depthwise kernels as (kh, kw, cin, 1).
// Scalar precision is the template parameter: float for the fast
// training/inference path, double for gradient verification.
template <typename T>
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_)
      : n(n_), h(h_), w(w_), c(c_), data(size_t(n_) * h_ * w_ * c_, T(0)) {
    if (n_ < 0 || h_ < 0 || w_ < 0 || c_ < 0) throw ShapeError("negative tensor dim");
  }

  static Tensor full(int n_, int h_, int w_, int c_, T v) {
    Tensor t(n_, h_, w_, c_);
    for (auto& x : t.data) x = v;
    return t;
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_dims(const Tensor& o) const { return n == o.n && h == o.h && w == o.w && c == o.c; }
  bool same_spatial(const Tensor& o) const { return n == o.n && h == o.h && w == o.w; }

  std::string dims_str() const {
    return std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
  }

  size_t index(int in, int iy, int ix, int ic) const {
    return ((size_t(in) * h + iy) * w + ix) * c + ic;
  }
  T& at(int in, int iy, int ix, int ic) { return data[index(in, iy, ix, ic)]; }
  T at(int in, int iy, int ix, int ic) const { return data[index(in, iy, ix, ic)]; }

  T* row(int in, int iy, int ix) { return data.data() + index(in, iy, ix, 0); }
  const T* row(int in, int iy, int ix) const { return data.data() + index(in, iy, ix, 0); }

  void fill(T v) {
    for (auto& x : data) x = v;
  }

  // explicit precision change
  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> o(n, h, w, c);
    for (size_t i = 0; i < data.size(); ++i) o.data[i] = U(data[i]);
    return o;
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }
};

template <typename T>
Tensor<T> random_uniform(int n, int h, int w, int c, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(n, h, w, c);
  for (auto& x : t.data) x = T(rng.uniform(double(lo), double(hi)));
  return t;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  T s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace depthup

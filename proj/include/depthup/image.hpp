#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "depthup/loss.hpp"
#include "depthup/tensor.hpp"

namespace depthup {

// 8-bit interleaved RGB, row-major.
struct RgbFrame {
  int w = 0, h = 0;
  std::vector<uint8_t> data;  // 3 * w * h

  RgbFrame() = default;
  RgbFrame(int w_, int h_) : w(w_), h(h_), data(size_t(3) * w_ * h_, 0) {}
  uint8_t* px(int y, int x) { return data.data() + (size_t(y) * w + x) * 3; }
  const uint8_t* px(int y, int x) const { return data.data() + (size_t(y) * w + x) * 3; }
};

// 16-bit depth in millimeters; 0 marks an invalid measurement.
struct DepthFrame {
  int w = 0, h = 0;
  std::vector<uint16_t> mm;

  DepthFrame() = default;
  DepthFrame(int w_, int h_) : w(w_), h(h_), mm(size_t(w_) * h_, 0) {}
  uint16_t& at(int y, int x) { return mm[size_t(y) * w + x]; }
  uint16_t at(int y, int x) const { return mm[size_t(y) * w + x]; }
};

inline ValidityMask validity_mask(const DepthFrame& d) { return validity_mask(d.mm, d.h, d.w); }

// ---- normalized tensor conversions ----------------------------------------

template <typename T>
Tensor<T> rgb_to_tensor(const RgbFrame& f) {
  Tensor<T> t(1, f.h, f.w, 3);
  for (size_t i = 0; i < f.data.size(); ++i) t.data[i] = T(f.data[i]) / T(255);
  return t;
}

template <typename T>
Tensor<T> depth_to_tensor(const DepthFrame& f, int max_depth_mm) {
  Tensor<T> t(1, f.h, f.w, 1);
  for (size_t i = 0; i < f.mm.size(); ++i) t.data[i] = T(f.mm[i]) / T(max_depth_mm);
  return t;
}

// clamp to [0, 1] normalized range, then back to millimeters
template <typename T>
DepthFrame tensor_to_depth(const Tensor<T>& t, int max_depth_mm) {
  DepthFrame f(t.w, t.h);
  for (size_t i = 0; i < t.size(); ++i) {
    double v = double(t.data[i]);
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    f.mm[i] = uint16_t(std::lround(v * max_depth_mm));
  }
  return f;
}

template <typename T>
void apply_mask(Tensor<T>& t, const ValidityMask& m) {
  if (t.h != m.h || t.w != m.w || t.c != 1) throw ShapeError("apply_mask: dims mismatch");
  for (size_t i = 0; i < t.size(); ++i)
    if (!m.bits[i]) t.data[i] = T(0);
}

inline void apply_mask(DepthFrame& f, const ValidityMask& m) {
  if (f.h != m.h || f.w != m.w) throw ShapeError("apply_mask: dims mismatch");
  for (size_t i = 0; i < f.mm.size(); ++i)
    if (!m.bits[i]) f.mm[i] = 0;
}

}  // namespace depthup

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "depthup/tensor.hpp"

namespace depthup {

// Per-pixel validity. Sensor-invalid pixels carry depth 0; everything
// downstream (loss, metrics, baselines) is gated through one of these.
struct ValidityMask {
  int h = 0, w = 0;
  std::vector<uint8_t> bits;  // 1 = valid

  ValidityMask() = default;
  ValidityMask(int h_, int w_, bool value = true) : h(h_), w(w_), bits(size_t(h_) * w_, value ? 1 : 0) {}

  bool valid(int y, int x) const { return bits[size_t(y) * w + x] != 0; }
  void set(int y, int x, bool v) { bits[size_t(y) * w + x] = v ? 1 : 0; }

  size_t count_valid() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
  }

  ValidityMask operator&(const ValidityMask& o) const {
    if (h != o.h || w != o.w) throw ShapeError("mask intersection: dims mismatch");
    ValidityMask m(h, w);
    for (size_t i = 0; i < bits.size(); ++i) m.bits[i] = bits[i] & o.bits[i];
    return m;
  }

  bool operator==(const ValidityMask& o) const { return h == o.h && w == o.w && bits == o.bits; }
};

// false exactly where depth == 0
inline ValidityMask validity_mask(const std::vector<uint16_t>& depth_mm, int h, int w) {
  ValidityMask m(h, w);
  for (size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = depth_mm[i] != 0 ? 1 : 0;
  return m;
}

// normalized-depth tensor variant (zeros stay exactly zero under scaling)
template <typename T>
ValidityMask validity_mask(const Tensor<T>& depth) {
  if (depth.n != 1 || depth.c != 1) throw ShapeError("validity_mask: expected 1xHxWx1 depth tensor");
  ValidityMask m(depth.h, depth.w);
  for (size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = depth.data[i] != T(0) ? 1 : 0;
  return m;
}

inline double invalid_fraction(const ValidityMask& m) {
  if (m.bits.empty()) return 0.0;
  return double(m.bits.size() - m.count_valid()) / double(m.bits.size());
}

template <typename T>
void check_metric_dims(const Tensor<T>& pred, const Tensor<T>& gt, const ValidityMask& mask) {
  if (!pred.same_dims(gt)) throw ShapeError("masked_rmse: pred dims " + pred.dims_str() + " != gt dims " + gt.dims_str());
  if (pred.n != 1 || pred.c != 1 || pred.h != mask.h || pred.w != mask.w)
    throw ShapeError("masked_rmse: mask dims mismatch");
}

// sqrt(mean over valid pixels of (pred - gt)^2)
template <typename T>
double masked_rmse(const Tensor<T>& pred, const Tensor<T>& gt, const ValidityMask& mask) {
  check_metric_dims(pred, gt, mask);
  double sum = 0;
  size_t count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask.bits[i]) continue;
    const double d = double(pred.data[i]) - double(gt.data[i]);
    sum += d * d;
    ++count;
  }
  if (count == 0) throw MetricError("masked_rmse undefined: no valid pixels");
  return std::sqrt(sum / double(count));
}

// d rmse / d pred = (pred - gt) / (N_valid * rmse) at valid pixels, 0 elsewhere.
// At rmse == 0 the loss sits at its minimum; the zero subgradient is returned.
template <typename T>
Tensor<T> masked_rmse_grad(const Tensor<T>& pred, const Tensor<T>& gt, const ValidityMask& mask) {
  check_metric_dims(pred, gt, mask);
  const double rmse = masked_rmse(pred, gt, mask);
  Tensor<T> g(1, pred.h, pred.w, 1);
  if (rmse == 0.0) return g;
  const double n_valid = double(mask.count_valid());
  for (size_t i = 0; i < g.size(); ++i) {
    if (!mask.bits[i]) continue;
    g.data[i] = T((double(pred.data[i]) - double(gt.data[i])) / (n_valid * rmse));
  }
  return g;
}

struct InpaintingReport {
  size_t inpainted_count = 0;
  double inpainted_fraction = 0;
  std::optional<double> mean_abs_neighbor_gap;  // absent when nothing was inpainted
};

// Pixels invalid in both the input and the ground truth have no reference
// value; the gap against the nearest valid gt pixel (multi-source BFS,
// 8-connected) is reported as a proxy.
template <typename T>
InpaintingReport inpainting_report(const Tensor<T>& pred, const ValidityMask& input_mask,
                                   const ValidityMask& gt_mask, const Tensor<T>& gt) {
  if (pred.h != input_mask.h || pred.w != input_mask.w || input_mask.h != gt_mask.h ||
      input_mask.w != gt_mask.w)
    throw ShapeError("inpainting_report: dims mismatch");
  const int h = pred.h, w = pred.w;
  InpaintingReport rep;

  std::vector<T> nearest_value(size_t(h) * w, T(0));
  std::vector<uint8_t> reached(size_t(h) * w, 0);
  std::deque<int> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (gt_mask.valid(y, x)) {
        const int i = y * w + x;
        nearest_value[size_t(i)] = gt.data[size_t(i)];
        reached[size_t(i)] = 1;
        queue.push_back(i);
      }
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const int y = i / w, x = i % w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const int j = ny * w + nx;
        if (reached[size_t(j)]) continue;
        reached[size_t(j)] = 1;
        nearest_value[size_t(j)] = nearest_value[size_t(i)];
        queue.push_back(j);
      }
  }

  double gap_sum = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (input_mask.valid(y, x) || gt_mask.valid(y, x)) continue;
      ++rep.inpainted_count;
      const size_t i = size_t(y) * w + x;
      if (reached[i]) gap_sum += std::abs(double(pred.data[i]) - double(nearest_value[i]));
    }
  rep.inpainted_fraction = double(rep.inpainted_count) / double(size_t(h) * w);
  if (rep.inpainted_count > 0 && gt_mask.count_valid() > 0)
    rep.mean_abs_neighbor_gap = gap_sum / double(rep.inpainted_count);
  return rep;
}

}  // namespace depthup

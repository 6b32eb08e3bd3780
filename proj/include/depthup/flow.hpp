#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <utility>
#include <vector>

#include "depthup/image.hpp"
#include "depthup/parallel.hpp"
#include "depthup/tensor.hpp"

namespace depthup {

// Dense per-pixel displacement (dx, dy) in pixels.
// Convention: flow computed from `prev` to `next` satisfies
// prev(x) ~= next(x + flow(x)).
template <typename T>
struct FlowField {
  int h = 0, w = 0;
  std::vector<T> d;  // interleaved dx, dy

  FlowField() = default;
  FlowField(int h_, int w_) : h(h_), w(w_), d(size_t(h_) * w_ * 2, T(0)) {}
  T& dx(int y, int x) { return d[(size_t(y) * w + x) * 2]; }
  T& dy(int y, int x) { return d[(size_t(y) * w + x) * 2 + 1]; }
  T dx(int y, int x) const { return d[(size_t(y) * w + x) * 2]; }
  T dy(int y, int x) const { return d[(size_t(y) * w + x) * 2 + 1]; }
};

struct FlowConfig {
  int levels = 3;
  double pyr_scale = 0.5;
  int win_size = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.1;

  void validate() const {
    if (levels < 1) throw ConfigError("flow: levels must be >= 1");
    if (pyr_scale != 0.5) throw ConfigError("flow: only pyr_scale 0.5 is supported");
    if (win_size < 3 || win_size % 2 == 0) throw ConfigError("flow: win_size must be odd and >= 3");
    if (poly_n < 3 || poly_n % 2 == 0) throw ConfigError("flow: poly_n must be odd and >= 3");
    if (iterations < 1) throw ConfigError("flow: iterations must be >= 1");
    if (poly_sigma <= 0) throw ConfigError("flow: poly_sigma must be positive");
  }
};

// 0.299 R + 0.587 G + 0.114 B on the 0..255 scale
template <typename T = float>
Tensor<T> to_grayscale(const RgbFrame& rgb) {
  Tensor<T> g(1, rgb.h, rgb.w, 1);
  for (int y = 0; y < rgb.h; ++y)
    for (int x = 0; x < rgb.w; ++x) {
      const uint8_t* p = rgb.px(y, x);
      g.at(0, y, x, 0) = T(0.299) * p[0] + T(0.587) * p[1] + T(0.114) * p[2];
    }
  return g;
}

namespace flowdetail {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// separable correlation along one axis with replicated borders;
// taps[t] weights offset t - radius
template <typename T>
Tensor<T> correlate_axis(const Tensor<T>& img, const std::vector<double>& taps, bool vertical) {
  const int radius = int(taps.size()) / 2;
  Tensor<T> out(1, img.h, img.w, img.c);
  parallel_for(img.h, [&](int y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int t = 0; t < int(taps.size()); ++t) {
          const int off = t - radius;
          const int sy = vertical ? clampi(y + off, 0, img.h - 1) : y;
          const int sx = vertical ? x : clampi(x + off, 0, img.w - 1);
          acc += taps[size_t(t)] * double(img.at(0, sy, sx, ch));
        }
        out.at(0, y, x, ch) = T(acc);
      }
    }
  });
  return out;
}

inline std::vector<double> gaussian_taps(int radius, double sigma) {
  std::vector<double> t(size_t(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    t[size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += t[size_t(i + radius)];
  }
  for (auto& v : t) v /= sum;
  return t;
}

// 6x6 symmetric solve by Gauss-Jordan; the Gram matrix of the poly basis is
// well conditioned for any sensible applicability.
inline void invert6(double m[6][6]) {
  double inv[6][6] = {};
  for (int i = 0; i < 6; ++i) inv[i][i] = 1;
  for (int col = 0; col < 6; ++col) {
    int piv = col;
    for (int r = col + 1; r < 6; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    for (int c = 0; c < 6; ++c) {
      std::swap(m[col][c], m[piv][c]);
      std::swap(inv[col][c], inv[piv][c]);
    }
    const double d = m[col][col];
    for (int c = 0; c < 6; ++c) {
      m[col][c] /= d;
      inv[col][c] /= d;
    }
    for (int r = 0; r < 6; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      for (int c = 0; c < 6; ++c) {
        m[r][c] -= f * m[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) m[r][c] = inv[r][c];
}

}  // namespace flowdetail

// Per-pixel quadratic model f(p + d) ~= c + b.d + d^T A d, channels ordered
// [c, bx, by, axx, ayy, axy]. Gaussian-weighted least squares computed via
// separable moment correlations.
template <typename T>
Tensor<T> poly_expansion(const Tensor<T>& gray, int poly_n, double poly_sigma) {
  if (gray.n != 1 || gray.c != 1) throw ShapeError("poly_expansion: expected 1xHxWx1 grayscale");
  if (gray.h <= poly_n || gray.w <= poly_n) throw ShapeError("poly_expansion: image smaller than poly_n");
  const int radius = (poly_n - 1) / 2;

  // applicability and its moment-weighted variants
  std::vector<double> g = flowdetail::gaussian_taps(radius, poly_sigma);
  std::vector<double> gx(g.size()), gxx(g.size());
  for (int i = -radius; i <= radius; ++i) {
    gx[size_t(i + radius)] = g[size_t(i + radius)] * i;
    gxx[size_t(i + radius)] = g[size_t(i + radius)] * i * i;
  }

  // vertical passes: f*g, f*(y g), f*(y^2 g)
  Tensor<T> v0 = flowdetail::correlate_axis(gray, g, true);
  Tensor<T> v1 = flowdetail::correlate_axis(gray, gx, true);
  Tensor<T> v2 = flowdetail::correlate_axis(gray, gxx, true);

  // horizontal passes produce the six moments m_pq = sum w x^p y^q f
  Tensor<T> m00 = flowdetail::correlate_axis(v0, g, false);
  Tensor<T> m10 = flowdetail::correlate_axis(v0, gx, false);
  Tensor<T> m01 = flowdetail::correlate_axis(v1, g, false);
  Tensor<T> m20 = flowdetail::correlate_axis(v0, gxx, false);
  Tensor<T> m02 = flowdetail::correlate_axis(v2, g, false);
  Tensor<T> m11 = flowdetail::correlate_axis(v1, gx, false);

  // Gram matrix of the basis [1, x, y, x^2, y^2, xy]
  double G[6][6] = {};
  for (int yy = -radius; yy <= radius; ++yy)
    for (int xx = -radius; xx <= radius; ++xx) {
      const double w = g[size_t(yy + radius)] * g[size_t(xx + radius)];
      const double b[6] = {1.0, double(xx), double(yy), double(xx) * xx, double(yy) * yy,
                           double(xx) * yy};
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) G[i][j] += w * b[i] * b[j];
    }
  flowdetail::invert6(G);

  Tensor<T> coef(1, gray.h, gray.w, 6);
  parallel_for(gray.h, [&](int y) {
    for (int x = 0; x < gray.w; ++x) {
      const double m[6] = {double(m00.at(0, y, x, 0)), double(m10.at(0, y, x, 0)),
                           double(m01.at(0, y, x, 0)), double(m20.at(0, y, x, 0)),
                           double(m02.at(0, y, x, 0)), double(m11.at(0, y, x, 0))};
      T* out = coef.row(0, y, x);
      for (int i = 0; i < 6; ++i) {
        double acc = 0;
        for (int j = 0; j < 6; ++j) acc += G[i][j] * m[j];
        out[i] = T(acc);
      }
    }
  });
  return coef;
}

namespace flowdetail {

// 5-tap binomial blur + 2x decimation
template <typename T>
Tensor<T> pyr_down(const Tensor<T>& img) {
  static const std::vector<double> taps = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  Tensor<T> blurred = correlate_axis(correlate_axis(img, taps, true), taps, false);
  Tensor<T> out(1, img.h / 2, img.w / 2, 1);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(0, y, x, 0) = blurred.at(0, 2 * y, 2 * x, 0);
  return out;
}

// bilinear resize of a flow field to new dims, scaling displacement values
template <typename T>
FlowField<T> upsample_flow(const FlowField<T>& f, int out_h, int out_w, double value_scale) {
  FlowField<T> out(out_h, out_w);
  const double sy = double(f.h) / out_h, sx = double(f.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(int(fy), f.h - 1), y1 = std::min(y0 + 1, f.h - 1);
    const double ay = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(int(fx), f.w - 1), x1 = std::min(x0 + 1, f.w - 1);
      const double ax = fx - x0;
      out.dx(y, x) = T(value_scale * ((1 - ay) * ((1 - ax) * f.dx(y0, x0) + ax * f.dx(y0, x1)) +
                                      ay * ((1 - ax) * f.dx(y1, x0) + ax * f.dx(y1, x1))));
      out.dy(y, x) = T(value_scale * ((1 - ay) * ((1 - ax) * f.dy(y0, x0) + ax * f.dy(y0, x1)) +
                                      ay * ((1 - ax) * f.dy(y1, x0) + ax * f.dy(y1, x1))));
    }
  }
  return out;
}

}  // namespace flowdetail

// Coarse-to-fine displacement estimation over a 0.5-scale pyramid.
// Degenerate normal matrices are regularized (+1e-3 I), which biases
// textureless regions toward zero motion instead of failing.
template <typename T>
FlowField<T> farneback_flow(const Tensor<T>& prev_gray, const Tensor<T>& next_gray,
                            const FlowConfig& cfg = {}) {
  cfg.validate();
  if (!prev_gray.same_dims(next_gray)) throw ShapeError("farneback_flow: image dims mismatch");

  // pyramid, finest first; clamp levels so the coarsest stays usable
  std::vector<Tensor<T>> pyr1{prev_gray}, pyr2{next_gray};
  for (int l = 1; l < cfg.levels; ++l) {
    const Tensor<T>& p = pyr1.back();
    if (p.h / 2 <= cfg.poly_n + 2 || p.w / 2 <= cfg.poly_n + 2) break;
    pyr1.push_back(flowdetail::pyr_down(pyr1.back()));
    pyr2.push_back(flowdetail::pyr_down(pyr2.back()));
  }

  const int win_radius = cfg.win_size / 2;
  const std::vector<double> win_taps = flowdetail::gaussian_taps(win_radius, cfg.win_size / 4.0);
  FlowField<T> flow;

  for (int level = int(pyr1.size()) - 1; level >= 0; --level) {
    const Tensor<T>& im1 = pyr1[size_t(level)];
    const Tensor<T>& im2 = pyr2[size_t(level)];
    if (flow.h == 0)
      flow = FlowField<T>(im1.h, im1.w);
    else
      flow = flowdetail::upsample_flow(flow, im1.h, im1.w, 1.0 / cfg.pyr_scale);

    Tensor<T> poly1 = poly_expansion(im1, cfg.poly_n, cfg.poly_sigma);
    Tensor<T> poly2 = poly_expansion(im2, cfg.poly_n, cfg.poly_sigma);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      // per-pixel normal equations: channels [g11, g12, g22, h1, h2]
      Tensor<T> normal(1, im1.h, im1.w, 5);
      parallel_for(im1.h, [&](int y) {
        for (int x = 0; x < im1.w; ++x) {
          const double dx = double(flow.dx(y, x)), dy = double(flow.dy(y, x));
          // bilinear sample of the second expansion at the displaced position
          const double fx = std::clamp(x + dx, 0.0, double(im1.w - 1));
          const double fy = std::clamp(y + dy, 0.0, double(im1.h - 1));
          const int x0 = std::min(int(fx), im1.w - 2 >= 0 ? im1.w - 2 : 0);
          const int y0 = std::min(int(fy), im1.h - 2 >= 0 ? im1.h - 2 : 0);
          const double ax = fx - x0, ay = fy - y0;
          const T* q00 = poly2.row(0, y0, x0);
          const T* q01 = poly2.row(0, y0, x0 + 1);
          const T* q10 = poly2.row(0, y0 + 1, x0);
          const T* q11 = poly2.row(0, y0 + 1, x0 + 1);
          double c2[6];
          for (int i = 0; i < 6; ++i)
            c2[i] = (1 - ay) * ((1 - ax) * double(q00[i]) + ax * double(q01[i])) +
                    ay * ((1 - ax) * double(q10[i]) + ax * double(q11[i]));
          const T* c1 = poly1.row(0, y, x);
          // averaged quadratic (A) and linear (b) parts
          const double a11 = 0.5 * (double(c1[3]) + c2[3]);
          const double a22 = 0.5 * (double(c1[4]) + c2[4]);
          const double a12 = 0.25 * (double(c1[5]) + c2[5]);
          double db1 = -0.5 * (c2[1] - double(c1[1]));
          double db2 = -0.5 * (c2[2] - double(c1[2]));
          db1 += a11 * dx + a12 * dy;
          db2 += a12 * dx + a22 * dy;
          T* o = normal.row(0, y, x);
          o[0] = T(a11 * a11 + a12 * a12);
          o[1] = T(a12 * (a11 + a22));
          o[2] = T(a12 * a12 + a22 * a22);
          o[3] = T(a11 * db1 + a12 * db2);
          o[4] = T(a12 * db1 + a22 * db2);
        }
      });
      Tensor<T> sm = flowdetail::correlate_axis(flowdetail::correlate_axis(normal, win_taps, true),
                                                win_taps, false);
      parallel_for(im1.h, [&](int y) {
        for (int x = 0; x < im1.w; ++x) {
          const T* s = sm.row(0, y, x);
          const double g11 = double(s[0]) + 1e-3, g12 = double(s[1]), g22 = double(s[2]) + 1e-3;
          const double det = g11 * g22 - g12 * g12;
          flow.dx(y, x) = T((g22 * double(s[3]) - g12 * double(s[4])) / det);
          flow.dy(y, x) = T((g11 * double(s[4]) - g12 * double(s[3])) / det);
        }
      });
    }
  }
  return flow;
}

// Backward warp: out(x) = depth(x + flow(x)), nearest-neighbor. Samples that
// land out of bounds or on invalid sources stay invalid; no depth values are
// invented or blended.
inline std::pair<DepthFrame, ValidityMask> warp_depth(const DepthFrame& depth,
                                                      const FlowField<float>& flow,
                                                      const ValidityMask& mask) {
  if (depth.h != flow.h || depth.w != flow.w || mask.h != flow.h || mask.w != flow.w)
    throw ShapeError("warp_depth: dims mismatch");
  DepthFrame out(depth.w, depth.h);
  ValidityMask out_mask(depth.h, depth.w, false);
  for (int y = 0; y < depth.h; ++y)
    for (int x = 0; x < depth.w; ++x) {
      const int sx = int(std::lround(x + flow.dx(y, x)));
      const int sy = int(std::lround(y + flow.dy(y, x)));
      if (sx < 0 || sy < 0 || sx >= depth.w || sy >= depth.h) continue;
      if (!mask.valid(sy, sx)) continue;
      out.at(y, x) = depth.at(sy, sx);
      out_mask.set(y, x, true);
    }
  return {std::move(out), std::move(out_mask)};
}

// previous-frame predictor
inline const DepthFrame& naive_baseline(const DepthFrame& d) { return d; }

// ---- optional flow dump: magic "FLOW", i32 h, w, then interleaved f32 pairs --

inline void write_flow(const FlowField<float>& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write flow file " + path);
  os.write("FLOW", 4);
  write_le<int32_t>(os, f.h);
  write_le<int32_t>(os, f.w);
  write_bytes(os, f.d.data(), f.d.size() * sizeof(float));
}

inline FlowField<float> read_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open flow file " + path);
  char magic[4];
  read_bytes(is, magic, 4, "flow magic");
  if (std::string(magic, 4) != "FLOW") throw FormatError("bad flow magic in " + path);
  const int h = read_le<int32_t>(is, "flow height");
  const int w = read_le<int32_t>(is, "flow width");
  if (h <= 0 || w <= 0) throw FormatError("bad flow dims in " + path);
  FlowField<float> f(h, w);
  read_bytes(is, f.d.data(), f.d.size() * sizeof(float), "flow data");
  return f;
}

}  // namespace depthup

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "depthup/parallel.hpp"
#include "depthup/tensor.hpp"

#if defined(__GNUC__) || defined(__clang__)
#define DEPTHUP_RESTRICT __restrict__
#else
#define DEPTHUP_RESTRICT
#endif

namespace depthup {

enum class Padding { same, valid };

struct ConvGeom {
  int stride = 1;
  int pad_top = 0, pad_left = 0;
  int out_h = 0, out_w = 0;
};

// out = floor((size + pad - k) / stride) + 1; same padding keeps
// out = ceil(size / stride), splitting pad evenly with the extra
// pixel on the bottom/right.
inline ConvGeom conv_geometry(int in_h, int in_w, int kh, int kw, int stride, Padding pad) {
  ConvGeom g;
  g.stride = stride;
  if (pad == Padding::same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    int ph = std::max(0, (g.out_h - 1) * stride + kh - in_h);
    int pw = std::max(0, (g.out_w - 1) * stride + kw - in_w);
    g.pad_top = ph / 2;
    g.pad_left = pw / 2;
  } else {
    g.out_h = (in_h - kh) / stride + 1;
    g.out_w = (in_w - kw) / stride + 1;
  }
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("convolution output would be empty");
  return g;
}

namespace detail {

// Direct cross-correlation. Kernel dims (kh, kw, cin, cout); input NHWC.
// Parallel over output rows; every output element is produced by exactly one
// thread with a fixed reduction order, so results do not depend on the pool.
// Zero-padded copy of the input; adding exact-zero terms keeps results
// bit-identical to bounds-checked summation while the inner loops go
// branch-free.
template <typename T>
Tensor<T> pad_input(const Tensor<T>& in, int pad_top, int pad_left, int pad_bottom, int pad_right) {
  Tensor<T> p(in.n, in.h + pad_top + pad_bottom, in.w + pad_left + pad_right, in.c);
  for (int bn = 0; bn < in.n; ++bn)
    for (int y = 0; y < in.h; ++y)
      std::copy(in.row(bn, y, 0), in.row(bn, y, 0) + size_t(in.w) * in.c,
                p.row(bn, y + pad_top, pad_left));
  return p;
}

// One output row of the convolution with a compile-time channel width.
// 4-wide column blocks share every kernel-row load across four accumulators.
template <typename T, int COUT>
void conv_row_kern(const Tensor<T>& pad, const Tensor<T>& k, const std::vector<T>& bias,
                   const ConvGeom& g, int cout_rt, Tensor<T>& out, int bn, int oy, T* accbuf) {
  const int kh = k.n, kw = k.h, cin = k.w;
  const int cout = COUT > 0 ? COUT : cout_rt;
  const size_t xstep = size_t(g.stride) * cin;
  int ox = 0;
  for (; ox + 4 <= g.out_w; ox += 4) {
    T* DEPTHUP_RESTRICT acc = accbuf;
    for (int b = 0; b < 4; ++b)
      for (int co = 0; co < cout; ++co)
        acc[size_t(b) * cout + co] = bias.empty() ? T(0) : bias[size_t(co)];
    for (int ky = 0; ky < kh; ++ky) {
      const T* row = pad.row(bn, oy * g.stride + ky, 0);
      for (int kx = 0; kx < kw; ++kx) {
        const T* DEPTHUP_RESTRICT kp = k.row(ky, kx, 0);
        const T* q0 = row + size_t(ox) * xstep + size_t(kx) * cin;
        const T* q1 = q0 + xstep;
        const T* q2 = q1 + xstep;
        const T* q3 = q2 + xstep;
        for (int ci = 0; ci < cin; ++ci) {
          const T a0 = q0[ci], a1 = q1[ci], a2 = q2[ci], a3 = q3[ci];
          const T* DEPTHUP_RESTRICT krow = kp + size_t(ci) * cout;
          T* DEPTHUP_RESTRICT r0 = acc;
          T* DEPTHUP_RESTRICT r1 = acc + cout;
          T* DEPTHUP_RESTRICT r2 = acc + 2 * size_t(cout);
          T* DEPTHUP_RESTRICT r3 = acc + 3 * size_t(cout);
          for (int co = 0; co < cout; ++co) {
            const T w = krow[co];
            r0[co] += a0 * w;
            r1[co] += a1 * w;
            r2[co] += a2 * w;
            r3[co] += a3 * w;
          }
        }
      }
    }
    for (int b = 0; b < 4; ++b)
      std::copy(acc + size_t(b) * cout, acc + size_t(b + 1) * cout, out.row(bn, oy, ox + b));
  }
  // tail columns, same summation order
  for (; ox < g.out_w; ++ox) {
    T* DEPTHUP_RESTRICT acc = accbuf;
    for (int co = 0; co < cout; ++co) acc[co] = bias.empty() ? T(0) : bias[size_t(co)];
    for (int ky = 0; ky < kh; ++ky) {
      const T* row = pad.row(bn, oy * g.stride + ky, 0);
      for (int kx = 0; kx < kw; ++kx) {
        const T* DEPTHUP_RESTRICT q = row + size_t(ox) * xstep + size_t(kx) * cin;
        const T* DEPTHUP_RESTRICT kp = k.row(ky, kx, 0);
        for (int ci = 0; ci < cin; ++ci) {
          const T a = q[ci];
          const T* DEPTHUP_RESTRICT krow = kp + size_t(ci) * cout;
          for (int co = 0; co < cout; ++co) acc[co] += a * krow[co];
        }
      }
    }
    std::copy(acc, acc + cout, out.row(bn, oy, ox));
  }
}

template <typename T>
Tensor<T> conv_forward_core(const Tensor<T>& in, const Tensor<T>& k, const std::vector<T>& bias,
                            const ConvGeom& g) {
  const int kh = k.n, kw = k.h, cout = k.c;
  const int pad_bottom = std::max(0, (g.out_h - 1) * g.stride + kh - g.pad_top - in.h);
  const int pad_right = std::max(0, (g.out_w - 1) * g.stride + kw - g.pad_left - in.w);
  const bool needs_pad = g.pad_top || g.pad_left || pad_bottom || pad_right;
  Tensor<T> pad_holder;
  if (needs_pad) pad_holder = pad_input(in, g.pad_top, g.pad_left, pad_bottom, pad_right);
  const Tensor<T>& pad = needs_pad ? pad_holder : in;
  Tensor<T> out(in.n, g.out_h, g.out_w, cout);

  auto row_fn = conv_row_kern<T, 0>;
  switch (cout) {
    case 1: row_fn = conv_row_kern<T, 1>; break;
    case 4: row_fn = conv_row_kern<T, 4>; break;
    case 8: row_fn = conv_row_kern<T, 8>; break;
    case 16: row_fn = conv_row_kern<T, 16>; break;
    case 32: row_fn = conv_row_kern<T, 32>; break;
    case 64: row_fn = conv_row_kern<T, 64>; break;
    case 128: row_fn = conv_row_kern<T, 128>; break;
    case 256: row_fn = conv_row_kern<T, 256>; break;
    default: break;
  }
  parallel_for(in.n * g.out_h, [&](int job) {
    std::vector<T> accbuf(static_cast<size_t>(4) * cout);
    row_fn(pad, k, bias, g, cout, out, job / g.out_h, job % g.out_h, accbuf.data());
  });
  return out;
}

// Input gradient. For stride 1 it is a plain convolution of grad_out with the
// spatially flipped, channel-transposed kernel, so the fast forward core does
// the work; strided cases use the gather form (parallel over input rows,
// disjoint writes).
template <typename T>
Tensor<T> conv_backward_input_core(const Tensor<T>& gout, const Tensor<T>& k, const ConvGeom& g,
                                   int in_h, int in_w) {
  const int kh = k.n, kw = k.h, cin = k.w, cout = k.c;
  if (g.stride == 1) {
    Tensor<T> kt(kh, kw, cout, cin);
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx)
        for (int ci = 0; ci < cin; ++ci)
          for (int co = 0; co < cout; ++co)
            kt.at(kh - 1 - ky, kw - 1 - kx, co, ci) = k.at(ky, kx, ci, co);
    ConvGeom g2;
    g2.stride = 1;
    g2.pad_top = kh - 1 - g.pad_top;
    g2.pad_left = kw - 1 - g.pad_left;
    g2.out_h = in_h;
    g2.out_w = in_w;
    return conv_forward_core(gout, kt, std::vector<T>(), g2);
  }
  Tensor<T> gin(gout.n, in_h, in_w, cin);
  parallel_for(gout.n * in_h, [&](int job) {
    const int bn = job / in_h, iy = job % in_h;
    std::vector<T> acc(static_cast<size_t>(cin));
    for (int ix = 0; ix < in_w; ++ix) {
      T* DEPTHUP_RESTRICT a = acc.data();
      std::fill(acc.begin(), acc.end(), T(0));
      for (int ky = 0; ky < kh; ++ky) {
        const int oy_num = iy + g.pad_top - ky;
        if (oy_num < 0 || oy_num % g.stride) continue;
        const int oy = oy_num / g.stride;
        if (oy >= gout.h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ox_num = ix + g.pad_left - kx;
          if (ox_num < 0 || ox_num % g.stride) continue;
          const int ox = ox_num / g.stride;
          if (ox >= gout.w) continue;
          const T* DEPTHUP_RESTRICT op = gout.row(bn, oy, ox);
          const T* DEPTHUP_RESTRICT kp = k.row(ky, kx, 0);
          for (int ci = 0; ci < cin; ++ci) {
            T s = 0;
            const T* DEPTHUP_RESTRICT krow = kp + size_t(ci) * cout;
            for (int co = 0; co < cout; ++co) s += op[co] * krow[co];
            a[ci] += s;
          }
        }
      }
      std::copy(acc.begin(), acc.end(), gin.row(bn, iy, ix));
    }
  });
  return gin;
}

// Kernel gradient. Tasks split over (ky, kx, ci-block); each task owns a
// disjoint slab of the kernel and accumulates over (n, oy, ox) in a fixed
// order, independent of the thread count.
template <typename T>
Tensor<T> conv_backward_kernel_core(const Tensor<T>& in, const Tensor<T>& gout, int kh, int kw,
                                    const ConvGeom& g) {
  const int cin = in.c, cout = gout.c;
  const int pad_bottom = std::max(0, (gout.h - 1) * g.stride + kh - g.pad_top - in.h);
  const int pad_right = std::max(0, (gout.w - 1) * g.stride + kw - g.pad_left - in.w);
  const bool needs_pad = g.pad_top || g.pad_left || pad_bottom || pad_right;
  Tensor<T> pad_holder;
  if (needs_pad) pad_holder = pad_input(in, g.pad_top, g.pad_left, pad_bottom, pad_right);
  const Tensor<T>& pad = needs_pad ? pad_holder : in;
  const size_t xstep = size_t(g.stride) * cin;

  Tensor<T> gk(kh, kw, cin, cout);
  constexpr int kCiBlock = 8;
  const int ci_blocks = (cin + kCiBlock - 1) / kCiBlock;
  parallel_for(kh * kw * ci_blocks, [&](int job) {
    const int cb = job % ci_blocks;
    const int kx = (job / ci_blocks) % kw;
    const int ky = job / (ci_blocks * kw);
    const int ci0 = cb * kCiBlock, ci1 = std::min(cin, ci0 + kCiBlock);
    const int nb = ci1 - ci0;
    // four partial slabs amortize grad-row loads; each task owns a disjoint
    // kernel region and keeps a fixed reduction order regardless of threads
    std::vector<T> slab(size_t(4) * nb * cout, T(0));
    T* DEPTHUP_RESTRICT s0 = slab.data();
    T* DEPTHUP_RESTRICT s1 = s0 + size_t(nb) * cout;
    T* DEPTHUP_RESTRICT s2 = s1 + size_t(nb) * cout;
    T* DEPTHUP_RESTRICT s3 = s2 + size_t(nb) * cout;
    for (int bn = 0; bn < in.n; ++bn) {
      for (int oy = 0; oy < gout.h; ++oy) {
        const T* row = pad.row(bn, oy * g.stride + ky, 0) + size_t(kx) * cin;
        int ox = 0;
        for (; ox + 4 <= gout.w; ox += 4) {
          const T* DEPTHUP_RESTRICT q0 = row + size_t(ox) * xstep;
          const T* DEPTHUP_RESTRICT q1 = q0 + xstep;
          const T* DEPTHUP_RESTRICT q2 = q1 + xstep;
          const T* DEPTHUP_RESTRICT q3 = q2 + xstep;
          const T* DEPTHUP_RESTRICT o0 = gout.row(bn, oy, ox);
          const T* DEPTHUP_RESTRICT o1 = gout.row(bn, oy, ox + 1);
          const T* DEPTHUP_RESTRICT o2 = gout.row(bn, oy, ox + 2);
          const T* DEPTHUP_RESTRICT o3 = gout.row(bn, oy, ox + 3);
          for (int ci = ci0; ci < ci1; ++ci) {
            const size_t off = size_t(ci - ci0) * cout;
            const T a0 = q0[ci], a1 = q1[ci], a2 = q2[ci], a3 = q3[ci];
            for (int co = 0; co < cout; ++co) {
              s0[off + co] += a0 * o0[co];
              s1[off + co] += a1 * o1[co];
              s2[off + co] += a2 * o2[co];
              s3[off + co] += a3 * o3[co];
            }
          }
        }
        for (; ox < gout.w; ++ox) {
          const T* DEPTHUP_RESTRICT q = row + size_t(ox) * xstep;
          const T* DEPTHUP_RESTRICT op = gout.row(bn, oy, ox);
          for (int ci = ci0; ci < ci1; ++ci) {
            const size_t off = size_t(ci - ci0) * cout;
            const T a = q[ci];
            for (int co = 0; co < cout; ++co) s0[off + co] += a * op[co];
          }
        }
      }
    }
    for (int ci = ci0; ci < ci1; ++ci) {
      const size_t off = size_t(ci - ci0) * cout;
      T* grow = gk.row(ky, kx, ci);
      for (int co = 0; co < cout; ++co)
        grow[co] = ((s0[off + co] + s1[off + co]) + s2[off + co]) + s3[off + co];
    }
  });
  return gk;
}

template <typename T>
std::vector<T> conv_backward_bias(const Tensor<T>& gout) {
  std::vector<T> gb(size_t(gout.c), T(0));
  const size_t px = gout.size() / size_t(gout.c);
  const T* p = gout.data.data();
  for (size_t i = 0; i < px; ++i, p += gout.c)
    for (int co = 0; co < gout.c; ++co) gb[size_t(co)] += p[co];
  return gb;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d — dense 2-D cross-correlation, kernel (kh, kw, cin, cout)
// ---------------------------------------------------------------------------

template <typename T>
void check_conv_args(const Tensor<T>& in, const Tensor<T>& k, int stride) {
  if (in.empty()) throw ShapeError("conv2d: empty input");
  if (k.n % 2 == 0 || k.h % 2 == 0) throw ShapeError("conv2d: kernel dims must be odd");
  if (in.c != k.w)
    throw ShapeError("conv2d: input channels " + std::to_string(in.c) + " != kernel cin " +
                     std::to_string(k.w));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& k, const std::vector<T>& bias, int stride = 1,
                 Padding pad = Padding::same) {
  check_conv_args(in, k, stride);
  if (!bias.empty() && int(bias.size()) != k.c) throw ShapeError("conv2d: bias size != cout");
  return detail::conv_forward_core(in, k, bias, conv_geometry(in.h, in.w, k.n, k.h, stride, pad));
}

template <typename T>
struct ConvGrads {
  Tensor<T> input, kernel;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& in, const Tensor<T>& k, const Tensor<T>& grad_out,
                             int stride = 1, Padding pad = Padding::same) {
  check_conv_args(in, k, stride);
  ConvGeom g = conv_geometry(in.h, in.w, k.n, k.h, stride, pad);
  if (grad_out.n != in.n || grad_out.h != g.out_h || grad_out.w != g.out_w || grad_out.c != k.c)
    throw ShapeError("conv2d_backward: grad_out dims " + grad_out.dims_str() + " do not match forward output");
  ConvGrads<T> r;
  r.input = detail::conv_backward_input_core(grad_out, k, g, in.h, in.w);
  r.kernel = detail::conv_backward_kernel_core(in, grad_out, k.n, k.h, g);
  r.bias = detail::conv_backward_bias(grad_out);
  return r;
}

// ---------------------------------------------------------------------------
// separable convolution — depthwise (kh, kw, cin, 1) then pointwise 1x1
// ---------------------------------------------------------------------------

// multiply-accumulates per output pixel
constexpr int64_t conv2d_macs_per_pixel(int kh, int kw, int cin, int cout) {
  return int64_t(kh) * kw * cin * cout;
}
constexpr int64_t separable_macs_per_pixel(int kh, int kw, int cin, int cout) {
  return int64_t(kh) * kw * cin + int64_t(cin) * cout;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& in, const Tensor<T>& dw, int stride = 1,
                           Padding pad = Padding::same) {
  if (in.empty()) throw ShapeError("depthwise: empty input");
  if (dw.n % 2 == 0 || dw.h % 2 == 0) throw ShapeError("depthwise: kernel dims must be odd");
  if (dw.w != in.c || dw.c != 1) throw ShapeError("depthwise: kernel dims must be (kh, kw, cin, 1)");
  ConvGeom g = conv_geometry(in.h, in.w, dw.n, dw.h, stride, pad);
  const int kh = dw.n, kw = dw.h, cin = in.c;
  Tensor<T> out(in.n, g.out_h, g.out_w, cin);
  parallel_for(in.n * g.out_h, [&](int job) {
    const int bn = job / g.out_h, oy = job % g.out_h;
    for (int ox = 0; ox < g.out_w; ++ox) {
      T* acc = out.row(bn, oy, ox);
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * g.stride + ky - g.pad_top;
        if (iy < 0 || iy >= in.h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * g.stride + kx - g.pad_left;
          if (ix < 0 || ix >= in.w) continue;
          const T* ip = in.row(bn, iy, ix);
          const T* kp = dw.row(ky, kx, 0);
          for (int ci = 0; ci < cin; ++ci) acc[ci] += ip[ci] * kp[ci];
        }
      }
    }
  });
  return out;
}

template <typename T>
struct DepthwiseGrads {
  Tensor<T> input, kernel;
};

template <typename T>
DepthwiseGrads<T> depthwise_conv2d_backward(const Tensor<T>& in, const Tensor<T>& dw,
                                            const Tensor<T>& grad_out, int stride = 1,
                                            Padding pad = Padding::same) {
  ConvGeom g = conv_geometry(in.h, in.w, dw.n, dw.h, stride, pad);
  if (grad_out.n != in.n || grad_out.h != g.out_h || grad_out.w != g.out_w || grad_out.c != in.c)
    throw ShapeError("depthwise_backward: grad_out dims mismatch");
  const int kh = dw.n, kw = dw.h, cin = in.c;
  DepthwiseGrads<T> r;
  r.input = Tensor<T>(in.n, in.h, in.w, cin);
  parallel_for(in.n * in.h, [&](int job) {
    const int bn = job / in.h, iy = job % in.h;
    for (int ix = 0; ix < in.w; ++ix) {
      T* gp = r.input.row(bn, iy, ix);
      for (int ky = 0; ky < kh; ++ky) {
        const int oy_num = iy + g.pad_top - ky;
        if (oy_num < 0 || oy_num % g.stride) continue;
        const int oy = oy_num / g.stride;
        if (oy >= grad_out.h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ox_num = ix + g.pad_left - kx;
          if (ox_num < 0 || ox_num % g.stride) continue;
          const int ox = ox_num / g.stride;
          if (ox >= grad_out.w) continue;
          const T* op = grad_out.row(bn, oy, ox);
          const T* kp = dw.row(ky, kx, 0);
          for (int ci = 0; ci < cin; ++ci) gp[ci] += op[ci] * kp[ci];
        }
      }
    }
  });
  r.kernel = Tensor<T>(kh, kw, cin, 1);
  parallel_for(kh * kw, [&](int job) {
    const int ky = job / kw, kx = job % kw;
    T* grow = r.kernel.row(ky, kx, 0);
    for (int bn = 0; bn < in.n; ++bn)
      for (int oy = 0; oy < grad_out.h; ++oy) {
        const int iy = oy * g.stride + ky - g.pad_top;
        if (iy < 0 || iy >= in.h) continue;
        for (int ox = 0; ox < grad_out.w; ++ox) {
          const int ix = ox * g.stride + kx - g.pad_left;
          if (ix < 0 || ix >= in.w) continue;
          const T* ip = in.row(bn, iy, ix);
          const T* op = grad_out.row(bn, oy, ox);
          for (int ci = 0; ci < cin; ++ci) grow[ci] += ip[ci] * op[ci];
        }
      }
  });
  return r;
}

template <typename T>
Tensor<T> separable_conv2d(const Tensor<T>& in, const Tensor<T>& dw, const Tensor<T>& pw,
                           const std::vector<T>& bias, int stride = 1, Padding pad = Padding::same) {
  if (pw.n != 1 || pw.h != 1) throw ShapeError("separable: pointwise kernel must be 1x1");
  if (pw.w != in.c) throw ShapeError("separable: pointwise cin mismatch");
  Tensor<T> mid = depthwise_conv2d(in, dw, stride, pad);
  return conv2d(mid, pw, bias, 1, Padding::same);
}

template <typename T>
struct SeparableGrads {
  Tensor<T> input, depthwise, pointwise;
  std::vector<T> bias;
};

// mid is the saved depthwise output from the forward pass.
template <typename T>
SeparableGrads<T> separable_conv2d_backward(const Tensor<T>& in, const Tensor<T>& dw,
                                            const Tensor<T>& pw, const Tensor<T>& mid,
                                            const Tensor<T>& grad_out, int stride = 1,
                                            Padding pad = Padding::same) {
  SeparableGrads<T> r;
  ConvGrads<T> pwg = conv2d_backward(mid, pw, grad_out, 1, Padding::same);
  DepthwiseGrads<T> dwg = depthwise_conv2d_backward(in, dw, pwg.input, stride, pad);
  r.input = std::move(dwg.input);
  r.depthwise = std::move(dwg.kernel);
  r.pointwise = std::move(pwg.kernel);
  r.bias = std::move(pwg.bias);
  return r;
}

// ---------------------------------------------------------------------------
// transposed convolution — adjoint of a stride-2 convolution
// ---------------------------------------------------------------------------

// Geometry of the same-padded strided convolution whose adjoint this is:
// it maps (stride*h, stride*w) down to (h, w).
inline ConvGeom tconv_adjoint_geometry(int out_h, int out_w, int kh, int kw, int stride) {
  return conv_geometry(out_h, out_w, kh, kw, stride, Padding::same);
}

// kernel dims (kh, kw, cout, cin); output spatial dims are input x stride.
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& in, const Tensor<T>& k, const std::vector<T>& bias,
                           int stride = 2) {
  if (in.empty()) throw ShapeError("conv2d_transpose: empty input");
  if (k.c != in.c)
    throw ShapeError("conv2d_transpose: kernel cin " + std::to_string(k.c) + " != input channels " +
                     std::to_string(in.c));
  const int cout = k.w;
  if (!bias.empty() && int(bias.size()) != cout) throw ShapeError("conv2d_transpose: bias size != cout");
  const int oh = in.h * stride, ow = in.w * stride;
  ConvGeom g = tconv_adjoint_geometry(oh, ow, k.n, k.h, stride);
  if (g.out_h != in.h || g.out_w != in.w) throw ShapeError("conv2d_transpose: unsupported kernel/stride geometry");
  Tensor<T> out = detail::conv_backward_input_core(in, k, g, oh, ow);
  if (!bias.empty()) {
    parallel_for(out.n * out.h, [&](int job) {
      const int bn = job / out.h, oy = job % out.h;
      for (int ox = 0; ox < out.w; ++ox) {
        T* p = out.row(bn, oy, ox);
        for (int co = 0; co < cout; ++co) p[co] += bias[size_t(co)];
      }
    });
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const Tensor<T>& in, const Tensor<T>& k,
                                       const Tensor<T>& grad_out, int stride = 2) {
  const int oh = in.h * stride, ow = in.w * stride;
  if (grad_out.n != in.n || grad_out.h != oh || grad_out.w != ow || grad_out.c != k.w)
    throw ShapeError("conv2d_transpose_backward: grad_out dims mismatch");
  ConvGeom g = tconv_adjoint_geometry(oh, ow, k.n, k.h, stride);
  ConvGrads<T> r;
  r.input = detail::conv_forward_core(grad_out, k, std::vector<T>(), g);
  r.kernel = detail::conv_backward_kernel_core(grad_out, in, k.n, k.h, g);
  r.bias = detail::conv_backward_bias(grad_out);
  return r;
}

// ---------------------------------------------------------------------------
// max pooling — fixed 2x2 window, stride 2, trailing odd row/column dropped
// ---------------------------------------------------------------------------

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<int32_t> argmax;  // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& in) {
  if (in.h < 2 || in.w < 2) throw ShapeError("maxpool2d: input must be at least 2x2");
  const int oh = in.h / 2, ow = in.w / 2;
  PoolResult<T> r;
  r.out = Tensor<T>(in.n, oh, ow, in.c);
  r.argmax.assign(r.out.size(), 0);
  parallel_for(in.n * oh, [&](int job) {
    const int bn = job / oh, oy = job % oh;
    for (int ox = 0; ox < ow; ++ox) {
      for (int ci = 0; ci < in.c; ++ci) {
        T best = in.at(bn, 2 * oy, 2 * ox, ci);
        size_t best_idx = in.index(bn, 2 * oy, 2 * ox, ci);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const size_t idx = in.index(bn, 2 * oy + dy, 2 * ox + dx, ci);
            if (in.data[idx] > best) {
              best = in.data[idx];
              best_idx = idx;
            }
          }
        const size_t o = r.out.index(bn, oy, ox, ci);
        r.out.data[o] = best;
        r.argmax[o] = int32_t(best_idx);
      }
    }
  });
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const std::vector<int32_t>& argmax, int in_n, int in_h, int in_w,
                             int in_c, const Tensor<T>& grad_out) {
  Tensor<T> gin(in_n, in_h, in_w, in_c);
  // output windows are disjoint, so rows of gin receive disjoint writes
  parallel_for(grad_out.n * grad_out.h, [&](int job) {
    const int bn = job / grad_out.h, oy = job % grad_out.h;
    for (int ox = 0; ox < grad_out.w; ++ox)
      for (int ci = 0; ci < grad_out.c; ++ci) {
        const size_t o = grad_out.index(bn, oy, ox, ci);
        gin.data[size_t(argmax[o])] += grad_out.data[o];
      }
  });
  return gin;
}

// ---------------------------------------------------------------------------
// elementwise / layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& in) {
  Tensor<T> out(in.n, in.h, in.w, in.c);
  for (size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
  return out;
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (auto& v : t.data)
    if (v < T(0)) v = T(0);
}

// subgradient at 0 is 0
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& in, const Tensor<T>& grad_out) {
  if (!in.same_dims(grad_out)) throw ShapeError("relu_backward: dims mismatch");
  Tensor<T> gin(in.n, in.h, in.w, in.c);
  for (size_t i = 0; i < in.size(); ++i) gin.data[i] = in.data[i] > T(0) ? grad_out.data[i] : T(0);
  return gin;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_spatial(b)) throw ShapeError("concat_channels: spatial dims mismatch " + a.dims_str() + " vs " + b.dims_str());
  Tensor<T> out(a.n, a.h, a.w, a.c + b.c);
  const int ca = a.c, cb = b.c;
  parallel_for(a.n * a.h, [&](int job) {
    const int bn = job / a.h, y = job % a.h;
    const T* DEPTHUP_RESTRICT pa = a.row(bn, y, 0);
    const T* DEPTHUP_RESTRICT pb = b.row(bn, y, 0);
    T* DEPTHUP_RESTRICT o = out.row(bn, y, 0);
    for (int x = 0; x < a.w; ++x) {
      for (int ci = 0; ci < ca; ++ci) o[ci] = pa[ci];
      for (int ci = 0; ci < cb; ++ci) o[ca + ci] = pb[ci];
      pa += ca;
      pb += cb;
      o += ca + cb;
    }
  });
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int c_first) {
  if (c_first < 0 || c_first > t.c) throw ShapeError("split_channels: bad split point");
  Tensor<T> a(t.n, t.h, t.w, c_first), b(t.n, t.h, t.w, t.c - c_first);
  const int ca = c_first, cb = t.c - c_first;
  parallel_for(t.n * t.h, [&](int job) {
    const int bn = job / t.h, y = job % t.h;
    const T* DEPTHUP_RESTRICT p = t.row(bn, y, 0);
    T* DEPTHUP_RESTRICT pa = a.row(bn, y, 0);
    T* DEPTHUP_RESTRICT pb = b.row(bn, y, 0);
    for (int x = 0; x < t.w; ++x) {
      for (int ci = 0; ci < ca; ++ci) pa[ci] = p[ci];
      for (int ci = 0; ci < cb; ++ci) pb[ci] = p[ca + ci];
      p += ca + cb;
      pa += ca;
      pb += cb;
    }
  });
  return {std::move(a), std::move(b)};
}

// zero-pad on the bottom/right to a target spatial size (decoder size fixup
// after upsampling past an odd encoder dimension)
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& t, int target_h, int target_w) {
  if (target_h < t.h || target_w < t.w) throw ShapeError("pad_bottom_right: target smaller than input");
  if (target_h == t.h && target_w == t.w) return t;
  Tensor<T> out(t.n, target_h, target_w, t.c);
  for (int bn = 0; bn < t.n; ++bn)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) {
        const T* p = t.row(bn, y, x);
        T* o = out.row(bn, y, x);
        for (int ci = 0; ci < t.c; ++ci) o[ci] = p[ci];
      }
  return out;
}

template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& t, int target_h, int target_w) {
  if (target_h > t.h || target_w > t.w) throw ShapeError("crop_top_left: target larger than input");
  if (target_h == t.h && target_w == t.w) return t;
  Tensor<T> out(t.n, target_h, target_w, t.c);
  for (int bn = 0; bn < t.n; ++bn)
    for (int y = 0; y < target_h; ++y)
      for (int x = 0; x < target_w; ++x) {
        const T* p = t.row(bn, y, x);
        T* o = out.row(bn, y, x);
        for (int ci = 0; ci < t.c; ++ci) o[ci] = p[ci];
      }
  return out;
}

}  // namespace depthup

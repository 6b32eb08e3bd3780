#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthup/image.hpp"

namespace depthup {

// Pinhole model with Brown-Conrady distortion (k1, k2, k3 radial; p1, p2
// tangential). All pixel quantities in pixels, translations in meters.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double k1 = 0, k2 = 0, k3 = 0, p1 = 0, p2 = 0;
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw ConfigError("intrinsics: focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw ConfigError("intrinsics: principal point outside image");
  }

  bool zero_distortion() const { return k1 == 0 && k2 == 0 && k3 == 0 && p1 == 0 && p2 == 0; }
};

struct Extrinsics {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, depth -> color
  std::array<double, 3> translation_m{0, 0, 0};

  void validate(double tol = 1e-9) const {
    // R^T R = I and det(R) = +1
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += rotation[size_t(k * 3 + i)] * rotation[size_t(k * 3 + j)];
        if (std::abs(s - (i == j ? 1.0 : 0.0)) > tol) throw ConfigError("extrinsics: rotation not orthonormal");
      }
    const auto& r = rotation;
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                       r[2] * (r[3] * r[7] - r[4] * r[6]);
    if (std::abs(det - 1.0) > tol) throw ConfigError("extrinsics: determinant != +1");
  }

  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    return {rotation[0] * p[0] + rotation[1] * p[1] + rotation[2] * p[2] + translation_m[0],
            rotation[3] * p[0] + rotation[4] * p[1] + rotation[5] * p[2] + translation_m[1],
            rotation[6] * p[0] + rotation[7] * p[1] + rotation[8] * p[2] + translation_m[2]};
  }
};

struct CalibrationSet {
  CameraIntrinsics depth, color;
  Extrinsics extrinsics;
};

struct CloudPoint {
  double x = 0, y = 0, z = 0;  // meters
  int src_y = 0, src_x = 0;
};

// Z > 0 for every point; invalid depth pixels are never lifted.
struct PointCloud {
  std::vector<CloudPoint> points;
};

// ---- distortion -------------------------------------------------------------

// normalized, undistorted -> distorted
inline void distort_normalized(const CameraIntrinsics& in, double x, double y, double& xd, double& yd) {
  const double r2 = x * x + y * y;
  const double radial = 1.0 + in.k1 * r2 + in.k2 * r2 * r2 + in.k3 * r2 * r2 * r2;
  xd = x * radial + 2.0 * in.p1 * x * y + in.p2 * (r2 + 2.0 * x * x);
  yd = y * radial + in.p1 * (r2 + 2.0 * y * y) + 2.0 * in.p2 * x * y;
}

// distorted -> undistorted, 10 fixed-point iterations
inline void undistort_normalized(const CameraIntrinsics& in, double xd, double yd, double& x, double& y) {
  x = xd;
  y = yd;
  for (int i = 0; i < 10; ++i) {
    const double r2 = x * x + y * y;
    const double radial = 1.0 + in.k1 * r2 + in.k2 * r2 * r2 + in.k3 * r2 * r2 * r2;
    const double dx = 2.0 * in.p1 * x * y + in.p2 * (r2 + 2.0 * x * x);
    const double dy = in.p1 * (r2 + 2.0 * y * y) + 2.0 * in.p2 * x * y;
    x = (xd - dx) / radial;
    y = (yd - dy) / radial;
  }
}

// ---- undistortion (inverse mapping) -----------------------------------------

namespace detail {

// For output pixel (u, v): distort its normalized coordinates and sample the
// distorted source there. Sampler(yf, xf) -> value or miss.
template <typename SampleFn>
void undistort_remap(const CameraIntrinsics& intr, int h, int w, const SampleFn& fn) {
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double xn = (u - intr.cx) / intr.fx;
      const double yn = (v - intr.cy) / intr.fy;
      double xd, yd;
      distort_normalized(intr, xn, yn, xd, yd);
      fn(v, u, yd * intr.fy + intr.cy, xd * intr.fx + intr.cx);
    }
}

}  // namespace detail

// RGB: bilinear sampling; sources outside the image produce black.
inline RgbFrame undistort_image(const RgbFrame& img, const CameraIntrinsics& intr) {
  if (intr.zero_distortion()) return img;  // identity mapping
  RgbFrame out(img.w, img.h);
  detail::undistort_remap(intr, img.h, img.w, [&](int v, int u, double sy, double sx) {
    const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= img.w || y0 + 1 >= img.h) return;
    const double ax = sx - x0, ay = sy - y0;
    for (int ch = 0; ch < 3; ++ch) {
      const double val = (1 - ay) * ((1 - ax) * img.px(y0, x0)[ch] + ax * img.px(y0, x0 + 1)[ch]) +
                         ay * ((1 - ax) * img.px(y0 + 1, x0)[ch] + ax * img.px(y0 + 1, x0 + 1)[ch]);
      out.px(v, u)[ch] = uint8_t(std::lround(val));
    }
  });
  return out;
}

// Depth: nearest-neighbor sampling; bilinear would blend across depth edges.
// Invalid sources and out-of-image sources stay invalid.
inline DepthFrame undistort_image(const DepthFrame& img, const CameraIntrinsics& intr) {
  if (intr.zero_distortion()) return img;
  DepthFrame out(img.w, img.h);
  detail::undistort_remap(intr, img.h, img.w, [&](int v, int u, double sy, double sx) {
    const int x = int(std::lround(sx)), y = int(std::lround(sy));
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    out.at(v, u) = img.at(y, x);
  });
  return out;
}

// Single-channel float image variant (test charts), bilinear.
template <typename T>
Tensor<T> undistort_image(const Tensor<T>& img, const CameraIntrinsics& intr) {
  if (img.n != 1 || img.c != 1) throw ShapeError("undistort_image: expected 1xHxWx1");
  if (intr.zero_distortion()) return img;
  Tensor<T> out(1, img.h, img.w, 1);
  detail::undistort_remap(intr, img.h, img.w, [&](int v, int u, double sy, double sx) {
    const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= img.w || y0 + 1 >= img.h) return;
    const double ax = sx - x0, ay = sy - y0;
    const double val = (1 - ay) * ((1 - ax) * img.at(0, y0, x0, 0) + ax * img.at(0, y0, x0 + 1, 0)) +
                       ay * ((1 - ax) * img.at(0, y0 + 1, x0, 0) + ax * img.at(0, y0 + 1, x0 + 1, 0));
    out.at(0, v, u, 0) = T(val);
  });
  return out;
}

// ---- 3-D lifting and reprojection -------------------------------------------

inline PointCloud depth_to_pointcloud(const DepthFrame& depth, const CameraIntrinsics& intr) {
  if (depth.w != intr.width || depth.h != intr.height)
    throw ShapeError("depth_to_pointcloud: depth dims do not match intrinsics");
  PointCloud cloud;
  cloud.points.reserve(depth.mm.size() / 2);
  for (int v = 0; v < depth.h; ++v)
    for (int u = 0; u < depth.w; ++u) {
      const uint16_t d = depth.at(v, u);
      if (d == 0) continue;
      const double z = double(d) / 1000.0;
      cloud.points.push_back({(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z, v, u});
    }
  return cloud;
}

// Projects into the destination camera with nearest-pixel rounding and a
// z-buffer; uncovered pixels stay 0 (invalid).
inline DepthFrame project_to_camera(const PointCloud& cloud, const Extrinsics& extr,
                                    const CameraIntrinsics& dst, int out_w, int out_h) {
  DepthFrame out(out_w, out_h);
  std::vector<double> zbuf(size_t(out_w) * out_h, std::numeric_limits<double>::infinity());
  for (const auto& p : cloud.points) {
    const auto q = extr.apply({p.x, p.y, p.z});
    if (q[2] <= 0) continue;
    const int u = int(std::lround(dst.fx * q[0] / q[2] + dst.cx));
    const int v = int(std::lround(dst.fy * q[1] / q[2] + dst.cy));
    if (u < 0 || v < 0 || u >= out_w || v >= out_h) continue;
    const size_t i = size_t(v) * out_w + u;
    if (q[2] < zbuf[i]) {
      zbuf[i] = q[2];
      out.mm[i] = uint16_t(std::min<int64_t>(65535, std::lround(q[2] * 1000.0)));
    }
  }
  return out;
}

// ---- cropping and rescaling --------------------------------------------------

namespace detail {

inline void check_crop(int w, int h, int factor) {
  if (factor < 1) throw ConfigError("center_crop: factor must be >= 1");
  if (w % factor || h % factor)
    throw ConfigError("center_crop: dims " + std::to_string(w) + "x" + std::to_string(h) +
                      " not divisible by " + std::to_string(factor));
}

}  // namespace detail

inline RgbFrame center_crop(const RgbFrame& img, int factor = 2) {
  detail::check_crop(img.w, img.h, factor);
  const int cw = img.w / factor, ch = img.h / factor;
  const int x0 = (img.w - cw) / 2, y0 = (img.h - ch) / 2;
  RgbFrame out(cw, ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c) out.px(y, x)[c] = img.px(y0 + y, x0 + x)[c];
  return out;
}

inline DepthFrame center_crop(const DepthFrame& img, int factor = 2) {
  detail::check_crop(img.w, img.h, factor);
  const int cw = img.w / factor, ch = img.h / factor;
  const int x0 = (img.w - cw) / 2, y0 = (img.h - ch) / 2;
  DepthFrame out(cw, ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

// center-aligned nearest source index
inline int nearest_src(int dst, int dst_size, int src_size) {
  int s = int((int64_t(dst) * 2 + 1) * src_size / (int64_t(dst_size) * 2));
  return s < src_size ? s : src_size - 1;
}

inline RgbFrame resize_nearest(const RgbFrame& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ConfigError("resize_nearest: output dims must be >= 1");
  RgbFrame out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = nearest_src(y, out_h, img.h);
    for (int x = 0; x < out_w; ++x) {
      const int sx = nearest_src(x, out_w, img.w);
      for (int c = 0; c < 3; ++c) out.px(y, x)[c] = img.px(sy, sx)[c];
    }
  }
  return out;
}

inline DepthFrame resize_nearest(const DepthFrame& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ConfigError("resize_nearest: output dims must be >= 1");
  DepthFrame out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = nearest_src(y, out_h, img.h);
    for (int x = 0; x < out_w; ++x) out.at(y, x) = img.at(sy, nearest_src(x, out_w, img.w));
  }
  return out;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ConfigError("resize_nearest: output dims must be >= 1");
  Tensor<T> out(img.n, out_h, out_w, img.c);
  for (int bn = 0; bn < img.n; ++bn)
    for (int y = 0; y < out_h; ++y) {
      const int sy = nearest_src(y, out_h, img.h);
      for (int x = 0; x < out_w; ++x) {
        const int sx = nearest_src(x, out_w, img.w);
        const T* p = img.row(bn, sy, sx);
        T* o = out.row(bn, y, x);
        for (int c = 0; c < img.c; ++c) o[c] = p[c];
      }
    }
  return out;
}

inline ValidityMask resize_nearest(const ValidityMask& m, int out_w, int out_h) {
  ValidityMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = nearest_src(y, out_h, m.h);
    for (int x = 0; x < out_w; ++x) out.set(y, x, m.valid(sy, nearest_src(x, out_w, m.w)));
  }
  return out;
}

// ---- calibration file --------------------------------------------------------
//
// JSON: {"intrinsics_depth": {...}, "intrinsics_color": {...},
//        "extrinsics": {"rotation": [9 row-major], "translation_m": [3]}}

namespace detail {

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j, const std::string& which) {
  CameraIntrinsics in;
  try {
    in.fx = j.at("fx");
    in.fy = j.at("fy");
    in.cx = j.at("cx");
    in.cy = j.at("cy");
    in.k1 = j.at("k1");
    in.k2 = j.at("k2");
    in.k3 = j.at("k3");
    in.p1 = j.at("p1");
    in.p2 = j.at("p2");
    in.width = j.at("width");
    in.height = j.at("height");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("calibration " + which + ": " + e.what());
  }
  in.validate();
  return in;
}

inline nlohmann::json intrinsics_to_json(const CameraIntrinsics& in) {
  return {{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx}, {"cy", in.cy}, {"k1", in.k1},
          {"k2", in.k2}, {"k3", in.k3}, {"p1", in.p1}, {"p2", in.p2}, {"width", in.width},
          {"height", in.height}};
}

}  // namespace detail

inline CalibrationSet read_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open calibration file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("calibration parse failure in " + path + ": " + e.what());
  }
  CalibrationSet c;
  c.depth = detail::intrinsics_from_json(j.at("intrinsics_depth"), "intrinsics_depth");
  c.color = detail::intrinsics_from_json(j.at("intrinsics_color"), "intrinsics_color");
  try {
    const auto& e = j.at("extrinsics");
    const auto rot = e.at("rotation").get<std::vector<double>>();
    const auto tr = e.at("translation_m").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3) throw FormatError("calibration extrinsics: wrong element counts");
    std::copy(rot.begin(), rot.end(), c.extrinsics.rotation.begin());
    std::copy(tr.begin(), tr.end(), c.extrinsics.translation_m.begin());
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("calibration extrinsics: ") + ex.what());
  }
  c.extrinsics.validate();
  return c;
}

inline void write_calibration(const CalibrationSet& c, const std::string& path) {
  nlohmann::json j;
  j["intrinsics_depth"] = detail::intrinsics_to_json(c.depth);
  j["intrinsics_color"] = detail::intrinsics_to_json(c.color);
  j["extrinsics"] = {{"rotation", c.extrinsics.rotation}, {"translation_m", c.extrinsics.translation_m}};
  std::ofstream f(path);
  if (!f) throw DataError("cannot write calibration file " + path);
  f << j.dump(2) << "\n";
}

}  // namespace depthup

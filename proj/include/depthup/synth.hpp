#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "depthup/calib.hpp"
#include "depthup/parallel.hpp"
#include "depthup/sequence.hpp"

namespace depthup {

// ---- scene description -------------------------------------------------------

struct TrajectorySegment {
  double start_s = 0;
  double pos_x = 0, pos_y = 0;    // shape center at segment start, pixels
  double vel_x = 0, vel_y = 0;    // pixels / second
};

// Compact random-walk parameterization; expands deterministically into
// piecewise-linear segments that keep the center inside the margins.
struct ZigzagSpec {
  uint64_t seed = 0;
  double speed_min = 150, speed_max = 300;  // px/s
  double segment_min_s = 0.4, segment_max_s = 0.9;
  double margin_px = 10;
};

struct TrajectorySpec {
  std::vector<TrajectorySegment> segments;  // explicit form
  std::optional<ZigzagSpec> zigzag;         // or generated form
};

struct ShapeSpec {
  enum class Kind { rectangle, ellipse };
  Kind kind = Kind::rectangle;
  double size_w = 40, size_h = 30;  // full extents, pixels
  int depth_mm = 2000;
  uint64_t texture_seed = 1;
  double color[3] = {0.8, 0.8, 0.8};
  TrajectorySpec trajectory;
};

struct BackgroundSpec {
  int depth_mm = 3500;
  uint64_t texture_seed = 7;
  double color[3] = {0.55, 0.52, 0.48};
  double noise_scale_px = 10;
};

struct InvalidModel {
  int edge_band_px = 2;
  double dropout_rate = 0.2155;  // calibrated so the default scene lands at ~29.56% invalid
};

struct SceneSpec {
  int width = 192, height = 108;
  int rgb_fps = 240, depth_fps = 30;
  int max_depth_mm = 5000;
  double brightness = 1.0;
  BackgroundSpec background;
  std::vector<ShapeSpec> shapes;
  InvalidModel invalid;

  void validate() const {
    if (width < 8 || height < 8) throw ConfigError("scene: dims too small");
    if (rgb_fps <= 0 || depth_fps <= 0) throw ConfigError("scene: fps must be positive");
    if (rgb_fps % depth_fps != 0) throw ConfigError("scene: rgb_fps must be divisible by depth_fps");
    if (max_depth_mm <= 0) throw ConfigError("scene: max_depth_mm must be positive");
    if (invalid.edge_band_px < 0) throw ConfigError("scene: edge_band_px must be >= 0");
    if (invalid.dropout_rate < 0 || invalid.dropout_rate >= 1)
      throw ConfigError("scene: dropout_rate must be in [0, 1)");
    for (const auto& s : shapes) {
      if (s.depth_mm <= 0 || s.depth_mm >= background.depth_mm)
        throw ConfigError("scene: shape depth must be positive and closer than the background");
      if (background.depth_mm > max_depth_mm) throw ConfigError("scene: background beyond max_depth_mm");
      if (s.size_w < 2 || s.size_h < 2) throw ConfigError("scene: shape size too small");
      if (s.trajectory.segments.empty() && !s.trajectory.zigzag)
        throw ConfigError("scene: shape needs a trajectory");
    }
  }
};

// ---- procedural texture --------------------------------------------------------

namespace synthdetail {

inline double lattice(uint64_t seed, int64_t ix, int64_t iy) {
  const uint64_t h = splitmix64(seed ^ (uint64_t(ix) * 0x8da6b343ULL) ^ (uint64_t(iy) * 0xd8163841ULL));
  return double(h >> 11) * 0x1.0p-53;
}

inline double smoothstep(double t) { return t * t * (3 - 2 * t); }

inline double noise_octave(uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = int64_t(fx), iy = int64_t(fy);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
  const double v00 = lattice(seed, ix, iy), v10 = lattice(seed, ix + 1, iy);
  const double v01 = lattice(seed, ix, iy + 1), v11 = lattice(seed, ix + 1, iy + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

// two octaves of value noise in [0, 1]
inline double value_noise(uint64_t seed, double x, double y, double scale) {
  const double a = noise_octave(seed, x / scale, y / scale);
  const double b = noise_octave(splitmix64(seed + 1), 2 * x / scale, 2 * y / scale);
  return (2 * a + b) / 3.0;
}

}  // namespace synthdetail

// ---- resolved scene (trajectories expanded) -------------------------------------

struct ResolvedShape {
  const ShapeSpec* spec = nullptr;
  std::vector<TrajectorySegment> segments;

  // piecewise-linear position at time t
  void position(double t, double& x, double& y) const {
    const TrajectorySegment* seg = &segments.front();
    for (const auto& s : segments) {
      if (s.start_s <= t) seg = &s;
      else break;
    }
    x = seg->pos_x + seg->vel_x * (t - seg->start_s);
    y = seg->pos_y + seg->vel_y * (t - seg->start_s);
  }

  bool covers(double t, int px, int py) const {
    double cx, cy;
    position(t, cx, cy);
    const double dx = px - cx, dy = py - cy;
    if (spec->kind == ShapeSpec::Kind::rectangle)
      return std::abs(dx) <= spec->size_w / 2 && std::abs(dy) <= spec->size_h / 2;
    const double rx = spec->size_w / 2, ry = spec->size_h / 2;
    return (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) <= 1.0;
  }
};

struct ResolvedScene {
  const SceneSpec* spec = nullptr;
  std::vector<ResolvedShape> shapes;
  uint64_t seed = 0;
};

namespace synthdetail {

inline std::vector<TrajectorySegment> expand_zigzag(const ZigzagSpec& z, uint64_t seed,
                                                    double duration_s, int width, int height) {
  Rng rng(mix_seed(seed, z.seed));
  std::vector<TrajectorySegment> segs;
  const double x_lo = z.margin_px, x_hi = std::max(x_lo + 1, double(width) - z.margin_px);
  const double y_lo = z.margin_px, y_hi = std::max(y_lo + 1, double(height) - z.margin_px);
  double x = rng.uniform(x_lo, x_hi), y = rng.uniform(y_lo, y_hi);
  double t = 0;
  while (t < duration_s) {
    const double dur = rng.uniform(z.segment_min_s, z.segment_max_s);
    const double speed = rng.uniform(z.speed_min, z.speed_max);
    const double ang = rng.uniform(0, 2 * 3.14159265358979323846);
    double ex = x + speed * std::cos(ang) * dur;
    double ey = y + speed * std::sin(ang) * dur;
    ex = std::clamp(ex, x_lo, x_hi);
    ey = std::clamp(ey, y_lo, y_hi);
    segs.push_back({t, x, y, (ex - x) / dur, (ey - y) / dur});
    x = ex;
    y = ey;
    t += dur;
  }
  return segs;
}

}  // namespace synthdetail

inline ResolvedScene resolve_scene(const SceneSpec& spec, uint64_t seed, double duration_s) {
  spec.validate();
  ResolvedScene rs;
  rs.spec = &spec;
  rs.seed = seed;
  for (size_t i = 0; i < spec.shapes.size(); ++i) {
    ResolvedShape sh;
    sh.spec = &spec.shapes[i];
    if (spec.shapes[i].trajectory.zigzag)
      sh.segments = synthdetail::expand_zigzag(*spec.shapes[i].trajectory.zigzag, mix_seed(seed, i + 1),
                                               duration_s, spec.width, spec.height);
    else
      sh.segments = spec.shapes[i].trajectory.segments;
    rs.shapes.push_back(std::move(sh));
  }
  return rs;
}

// ---- rendering -------------------------------------------------------------------

// Nearest surface (smallest depth) covering the pixel; background otherwise.
inline int scene_depth_mm_at(const ResolvedScene& rs, double t, int x, int y) {
  int best = rs.spec->background.depth_mm;
  for (const auto& sh : rs.shapes)
    if (sh.spec->depth_mm < best && sh.covers(t, x, y)) best = sh.spec->depth_mm;
  return best;
}

inline RgbFrame render_rgb(const ResolvedScene& rs, double t) {
  const SceneSpec& s = *rs.spec;
  RgbFrame img(s.width, s.height);
  parallel_for(s.height, [&](int y) {
    for (int x = 0; x < s.width; ++x) {
      const ResolvedShape* top = nullptr;
      int top_depth = s.background.depth_mm;
      for (const auto& sh : rs.shapes)
        if (sh.spec->depth_mm < top_depth && sh.covers(t, x, y)) {
          top = &sh;
          top_depth = sh.spec->depth_mm;
        }
      double shade, r, g, b;
      if (top) {
        // texture is anchored to the shape so it moves with it; foreground
        // surfaces carry weaker texture than the cluttered background, the
        // way clothing and skin do
        double cx, cy;
        top->position(t, cx, cy);
        const double tex =
            synthdetail::value_noise(top->spec->texture_seed, x - cx, y - cy, s.background.noise_scale_px);
        shade = s.brightness * (0.72 + 0.25 * tex);
        r = top->spec->color[0];
        g = top->spec->color[1];
        b = top->spec->color[2];
      } else {
        const double tex =
            synthdetail::value_noise(s.background.texture_seed, x, y, s.background.noise_scale_px);
        shade = s.brightness * (0.35 + 0.65 * tex);
        r = s.background.color[0];
        g = s.background.color[1];
        b = s.background.color[2];
      }
      uint8_t* p = img.px(y, x);
      p[0] = uint8_t(std::lround(std::clamp(r * shade, 0.0, 1.0) * 255));
      p[1] = uint8_t(std::lround(std::clamp(g * shade, 0.0, 1.0) * 255));
      p[2] = uint8_t(std::lround(std::clamp(b * shade, 0.0, 1.0) * 255));
    }
  });
  return img;
}

inline DepthFrame render_depth_gt(const ResolvedScene& rs, double t) {
  const SceneSpec& s = *rs.spec;
  DepthFrame d(s.width, s.height);
  parallel_for(s.height, [&](int y) {
    for (int x = 0; x < s.width; ++x) d.at(y, x) = uint16_t(scene_depth_mm_at(rs, t, x, y));
  });
  return d;
}

// ---- sensor corruption: edge-band invalidation + seeded dropout -------------------

// Pixels within edge_band_px (Chebyshev) of a >100 mm depth step are zeroed,
// mirroring how ToF sensors invalidate object borders.
inline std::vector<uint8_t> edge_band_mask(const DepthFrame& gt, int band_px) {
  const int h = gt.h, w = gt.w;
  std::vector<uint8_t> edge(size_t(h) * w, 0);
  if (band_px <= 0) return edge;
  constexpr int kStepMm = 100;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int d = gt.at(y, x);
      bool hit = false;
      for (int dy = -band_px; dy <= band_px && !hit; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= h) continue;
        for (int dx = -band_px; dx <= band_px; ++dx) {
          const int nx = x + dx;
          if (nx < 0 || nx >= w) continue;
          if (std::abs(gt.at(ny, nx) - d) > kStepMm) {
            hit = true;
            break;
          }
        }
      }
      edge[size_t(y) * w + x] = hit ? 1 : 0;
    }
  return edge;
}

inline bool dropout_hit(uint64_t seq_seed, int depth_frame_idx, int x, int y, double rate) {
  const uint64_t h = splitmix64(mix_seed(seq_seed, 0xD0D0 + uint64_t(depth_frame_idx)) ^
                                (uint64_t(y) * 0x9e3779b1ULL + uint64_t(x)));
  return double(h >> 11) * 0x1.0p-53 < rate;
}

inline DepthFrame corrupt_depth(const DepthFrame& gt, const ResolvedScene& rs, int depth_frame_idx) {
  const InvalidModel& inv = rs.spec->invalid;
  DepthFrame out = gt;
  const auto edge = edge_band_mask(gt, inv.edge_band_px);
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < gt.w; ++x) {
      if (edge[size_t(y) * gt.w + x] || dropout_hit(rs.seed, depth_frame_idx, x, y, inv.dropout_rate))
        out.at(y, x) = 0;
    }
  return out;
}

// ---- sequence generation -----------------------------------------------------------

// Deterministic in (spec, seed, duration): rgb frames at rgb_fps, ground-truth
// depth decimated to depth_fps and corrupted by the invalid-pixel model.
inline Sequence generate_sequence(const SceneSpec& spec, uint64_t seed, double duration_s,
                                  const std::string& name = "seq") {
  if (duration_s <= 0) throw ConfigError("generate_sequence: duration must be positive");
  ResolvedScene rs = resolve_scene(spec, seed, duration_s);

  Sequence seq;
  seq.name = name;
  seq.width = spec.width;
  seq.height = spec.height;
  seq.rgb_fps = spec.rgb_fps;
  seq.depth_fps = spec.depth_fps;
  seq.max_depth_mm = spec.max_depth_mm;

  const int n_rgb = int(std::llround(duration_s * spec.rgb_fps));
  const int n_depth = int(std::llround(duration_s * spec.depth_fps));
  char buf[64];
  for (int j = 0; j < n_rgb; ++j) {
    const int64_t ts = int64_t(j) * 1000000 / spec.rgb_fps;
    std::snprintf(buf, sizeof buf, "rgb_%06d.rgb", j);
    seq.rgb_meta.push_back({buf, ts});
    seq.put_rgb(j, render_rgb(rs, double(ts) * 1e-6));
  }
  for (int i = 0; i < n_depth; ++i) {
    const int64_t ts = int64_t(i) * 1000000 / spec.depth_fps;
    std::snprintf(buf, sizeof buf, "depth_%06d.d16", i);
    seq.depth_meta.push_back({buf, ts});
    seq.put_depth(i, corrupt_depth(render_depth_gt(rs, double(ts) * 1e-6), rs, i));
  }
  return seq;
}

// Ground-truth pinhole calibration for generated data: ideal distortion-free
// cameras, identity extrinsics (the synthetic depth and color cameras are
// already aligned).
inline CalibrationSet synthetic_calibration(const SceneSpec& spec) {
  CalibrationSet c;
  for (CameraIntrinsics* in : {&c.depth, &c.color}) {
    in->width = spec.width;
    in->height = spec.height;
    in->fx = in->fy = 1.2 * spec.width;
    in->cx = (spec.width - 1) / 2.0;
    in->cy = (spec.height - 1) / 2.0;
  }
  return c;
}

// ---- default desk-scale dataset ------------------------------------------------

struct NamedScene {
  std::string name;
  SceneSpec scene;
};

// Six sequences over a shared textured background; the last one switches
// background texture and lighting.
inline std::vector<NamedScene> default_dataset_scenes(int width = 192, int height = 108) {
  std::vector<NamedScene> out;
  for (int i = 1; i <= 6; ++i) {
    SceneSpec s;
    s.width = width;
    s.height = height;
    s.background.depth_mm = 3500;
    s.background.texture_seed = (i == 6) ? 99 : 7;
    s.background.noise_scale_px = 10;
    if (i == 6) {
      s.brightness = 0.78;
      s.background.color[0] = 0.42;
      s.background.color[1] = 0.5;
      s.background.color[2] = 0.58;
    }

    ShapeSpec big;
    big.kind = ShapeSpec::Kind::rectangle;
    big.size_w = width * 0.25;
    big.size_h = height * 0.33;
    big.depth_mm = 1500;
    big.texture_seed = 11 + uint64_t(i);
    big.color[0] = 0.85;
    big.color[1] = 0.35;
    big.color[2] = 0.25;
    big.trajectory.zigzag = ZigzagSpec{uint64_t(3 * i + 1), 240, 400, 0.4, 0.9, width * 0.08};

    ShapeSpec disc;
    disc.kind = ShapeSpec::Kind::ellipse;
    disc.size_w = width * 0.26;
    disc.size_h = height * 0.37;
    disc.depth_mm = 2200;
    disc.texture_seed = 41 + uint64_t(i);
    disc.color[0] = 0.3;
    disc.color[1] = 0.65;
    disc.color[2] = 0.85;
    disc.trajectory.zigzag = ZigzagSpec{uint64_t(3 * i + 2), 200, 340, 0.45, 1.0, width * 0.1};

    ShapeSpec small;
    small.kind = ShapeSpec::Kind::rectangle;
    small.size_w = width * 0.16;
    small.size_h = height * 0.22;
    small.depth_mm = 2800;
    small.texture_seed = 71 + uint64_t(i);
    small.color[0] = 0.55;
    small.color[1] = 0.8;
    small.color[2] = 0.35;
    small.trajectory.zigzag = ZigzagSpec{uint64_t(3 * i + 3), 160, 300, 0.5, 1.1, width * 0.07};

    ShapeSpec mid;
    mid.kind = ShapeSpec::Kind::ellipse;
    mid.size_w = width * 0.2;
    mid.size_h = height * 0.28;
    mid.depth_mm = 1900;
    mid.texture_seed = 101 + uint64_t(i);
    mid.color[0] = 0.8;
    mid.color[1] = 0.7;
    mid.color[2] = 0.3;
    mid.trajectory.zigzag = ZigzagSpec{uint64_t(7 * i + 4), 220, 360, 0.4, 0.85, width * 0.09};

    ShapeSpec slab;
    slab.kind = ShapeSpec::Kind::rectangle;
    slab.size_w = width * 0.18;
    slab.size_h = height * 0.26;
    slab.depth_mm = 2500;
    slab.texture_seed = 131 + uint64_t(i);
    slab.color[0] = 0.6;
    slab.color[1] = 0.45;
    slab.color[2] = 0.75;
    slab.trajectory.zigzag = ZigzagSpec{uint64_t(7 * i + 5), 180, 320, 0.45, 0.95, width * 0.08};

    s.shapes = {big, disc, small, mid, slab};
    out.push_back({"seq" + std::to_string(i), s});
  }
  return out;
}

}  // namespace depthup

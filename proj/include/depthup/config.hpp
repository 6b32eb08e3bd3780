#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthup/model.hpp"
#include "depthup/stream.hpp"
#include "depthup/synth.hpp"
#include "depthup/train.hpp"

namespace depthup {

// ---- strict JSON helpers (unknown keys are errors, fail fast) -------------------

namespace cfgdetail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + " key '" + key + "': " + e.what());
  }
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  try {
    nlohmann::json j;
    f >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("parse failure in " + path + ": " + e.what());
  }
}

}  // namespace cfgdetail

// ---- run configuration ------------------------------------------------------------

struct RunConfig {
  NetworkConfig network;
  TrainOptions training;
  std::string weights_out = "weights.adnw";
  struct Data {
    std::string dataset_dir;
    std::string held_out;
  } data;
  RuntimeOptions runtime;
};

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, {"cascades", "base_filters", "input_h", "input_w", "skip_d_input",
                            "skip_cnext_input", "skip_enc_dec_level1", "skip_enc_dec_level2",
                            "separable", "bottleneck_convs"},
                        "network");
  NetworkConfig c;
  c.cascades = cfgdetail::get_or(j, "cascades", c.cascades);
  c.base_filters = cfgdetail::get_or(j, "base_filters", c.base_filters);
  c.input_h = cfgdetail::get_or(j, "input_h", c.input_h);
  c.input_w = cfgdetail::get_or(j, "input_w", c.input_w);
  c.skip_d_input = cfgdetail::get_or(j, "skip_d_input", c.skip_d_input);
  c.skip_cnext_input = cfgdetail::get_or(j, "skip_cnext_input", c.skip_cnext_input);
  c.skip_enc_dec_level1 = cfgdetail::get_or(j, "skip_enc_dec_level1", c.skip_enc_dec_level1);
  c.skip_enc_dec_level2 = cfgdetail::get_or(j, "skip_enc_dec_level2", c.skip_enc_dec_level2);
  c.separable = cfgdetail::get_or(j, "separable", c.separable);
  c.bottleneck_convs = cfgdetail::get_or(j, "bottleneck_convs", c.bottleneck_convs);
  c.validate();
  return c;
}

inline RunConfig read_run_config(const std::string& path) {
  const nlohmann::json j = cfgdetail::load_json(path);
  cfgdetail::check_keys(j, {"network", "training", "data", "runtime"}, "config");
  RunConfig rc;
  if (j.contains("network")) rc.network = network_config_from_json(j.at("network"));
  if (j.contains("training")) {
    const auto& t = j.at("training");
    cfgdetail::check_keys(t, {"lr", "batch_size", "epochs", "seed", "delta_frames", "weights_out"},
                          "training");
    rc.training.lr = cfgdetail::get_or(t, "lr", rc.training.lr);
    rc.training.batch_size = cfgdetail::get_or(t, "batch_size", rc.training.batch_size);
    rc.training.epochs = cfgdetail::get_or(t, "epochs", rc.training.epochs);
    rc.training.seed = cfgdetail::get_or<uint64_t>(t, "seed", rc.training.seed);
    rc.training.delta_frames = cfgdetail::get_or(t, "delta_frames", rc.training.delta_frames);
    rc.weights_out = cfgdetail::get_or<std::string>(t, "weights_out", rc.weights_out);
    rc.training.validate();
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    cfgdetail::check_keys(d, {"dataset_dir", "held_out", "delta_frames"}, "data");
    rc.data.dataset_dir = cfgdetail::get_or<std::string>(d, "dataset_dir", "");
    rc.data.held_out = cfgdetail::get_or<std::string>(d, "held_out", "");
    rc.training.delta_frames = cfgdetail::get_or(d, "delta_frames", rc.training.delta_frames);
  }
  if (j.contains("runtime")) {
    const auto& r = j.at("runtime");
    cfgdetail::check_keys(r, {"inference_resolution", "pipelined", "threads"}, "runtime");
    const std::string res = cfgdetail::get_or<std::string>(r, "inference_resolution", "full");
    if (res == "half")
      rc.runtime.half = true;
    else if (res == "full")
      rc.runtime.half = false;
    else
      throw ConfigError("runtime.inference_resolution must be 'full' or 'half'");
    rc.runtime.pipelined = cfgdetail::get_or(r, "pipelined", rc.runtime.pipelined);
    rc.runtime.threads = cfgdetail::get_or(r, "threads", rc.runtime.threads);
  }
  return rc;
}

// ---- dataset scene spec file ---------------------------------------------------------

namespace cfgdetail {

inline void color_from_json(const nlohmann::json& j, double out[3], const std::string& where) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(where + ": color must have 3 components");
  for (int i = 0; i < 3; ++i) out[i] = v[size_t(i)];
}

inline BackgroundSpec background_from_json(const nlohmann::json& j, const BackgroundSpec& base) {
  check_keys(j, {"depth_mm", "texture_seed", "color", "noise_scale_px"}, "background");
  BackgroundSpec b = base;
  b.depth_mm = get_or(j, "depth_mm", b.depth_mm);
  b.texture_seed = get_or<uint64_t>(j, "texture_seed", b.texture_seed);
  b.noise_scale_px = get_or(j, "noise_scale_px", b.noise_scale_px);
  if (j.contains("color")) color_from_json(j.at("color"), b.color, "background");
  return b;
}

inline ShapeSpec shape_from_json(const nlohmann::json& j, const std::string& where) {
  check_keys(j, {"kind", "size_px", "depth_mm", "texture_seed", "color", "trajectory"}, where);
  ShapeSpec s;
  const std::string kind = require<std::string>(j, "kind", where);
  if (kind == "rectangle")
    s.kind = ShapeSpec::Kind::rectangle;
  else if (kind == "ellipse")
    s.kind = ShapeSpec::Kind::ellipse;
  else
    throw ConfigError(where + ": unknown shape kind '" + kind + "'");
  const auto size = require<std::vector<double>>(j, "size_px", where);
  if (size.size() != 2) throw ConfigError(where + ": size_px must be [w, h]");
  s.size_w = size[0];
  s.size_h = size[1];
  s.depth_mm = require<int>(j, "depth_mm", where);
  s.texture_seed = get_or<uint64_t>(j, "texture_seed", 1);
  if (j.contains("color")) color_from_json(j.at("color"), s.color, where);

  const auto& t = j.at("trajectory");
  check_keys(t, {"zigzag", "segments"}, where + ".trajectory");
  if (t.contains("zigzag") == t.contains("segments"))
    throw ConfigError(where + ".trajectory: exactly one of 'zigzag' or 'segments' required");
  if (t.contains("zigzag")) {
    const auto& z = t.at("zigzag");
    check_keys(z, {"seed", "speed_px_s", "segment_s", "margin_px"}, where + ".trajectory.zigzag");
    ZigzagSpec zz;
    zz.seed = get_or<uint64_t>(z, "seed", 0);
    if (z.contains("speed_px_s")) {
      const auto sp = z.at("speed_px_s").get<std::vector<double>>();
      if (sp.size() != 2) throw ConfigError(where + ": speed_px_s must be [min, max]");
      zz.speed_min = sp[0];
      zz.speed_max = sp[1];
    }
    if (z.contains("segment_s")) {
      const auto sg = z.at("segment_s").get<std::vector<double>>();
      if (sg.size() != 2) throw ConfigError(where + ": segment_s must be [min, max]");
      zz.segment_min_s = sg[0];
      zz.segment_max_s = sg[1];
    }
    zz.margin_px = get_or(z, "margin_px", zz.margin_px);
    s.trajectory.zigzag = zz;
  } else {
    for (const auto& seg : t.at("segments")) {
      check_keys(seg, {"start_s", "pos_px", "vel_px_s"}, where + ".trajectory.segments");
      TrajectorySegment ts;
      ts.start_s = require<double>(seg, "start_s", where);
      const auto pos = require<std::vector<double>>(seg, "pos_px", where);
      const auto vel = require<std::vector<double>>(seg, "vel_px_s", where);
      if (pos.size() != 2 || vel.size() != 2) throw ConfigError(where + ": pos_px/vel_px_s must be [x, y]");
      ts.pos_x = pos[0];
      ts.pos_y = pos[1];
      ts.vel_x = vel[0];
      ts.vel_y = vel[1];
      s.trajectory.segments.push_back(ts);
    }
    if (s.trajectory.segments.empty()) throw ConfigError(where + ": segments may not be empty");
  }
  return s;
}

}  // namespace cfgdetail

inline std::vector<NamedScene> read_dataset_spec(const std::string& path) {
  const nlohmann::json j = cfgdetail::load_json(path);
  cfgdetail::check_keys(j, {"width", "height", "rgb_fps", "depth_fps", "max_depth_mm", "invalid",
                            "background", "sequences"},
                        "dataset spec");
  SceneSpec base;
  base.width = cfgdetail::get_or(j, "width", base.width);
  base.height = cfgdetail::get_or(j, "height", base.height);
  base.rgb_fps = cfgdetail::get_or(j, "rgb_fps", base.rgb_fps);
  base.depth_fps = cfgdetail::get_or(j, "depth_fps", base.depth_fps);
  base.max_depth_mm = cfgdetail::get_or(j, "max_depth_mm", base.max_depth_mm);
  if (j.contains("invalid")) {
    const auto& inv = j.at("invalid");
    cfgdetail::check_keys(inv, {"edge_band_px", "dropout_rate"}, "invalid");
    base.invalid.edge_band_px = cfgdetail::get_or(inv, "edge_band_px", base.invalid.edge_band_px);
    base.invalid.dropout_rate = cfgdetail::get_or(inv, "dropout_rate", base.invalid.dropout_rate);
  }
  if (j.contains("background")) base.background = cfgdetail::background_from_json(j.at("background"), base.background);

  std::vector<NamedScene> scenes;
  for (const auto& sj : cfgdetail::require<nlohmann::json>(j, "sequences", "dataset spec")) {
    cfgdetail::check_keys(sj, {"name", "brightness", "background", "shapes"}, "sequence");
    NamedScene ns;
    ns.name = cfgdetail::require<std::string>(sj, "name", "sequence");
    ns.scene = base;
    ns.scene.brightness = cfgdetail::get_or(sj, "brightness", ns.scene.brightness);
    if (sj.contains("background"))
      ns.scene.background = cfgdetail::background_from_json(sj.at("background"), base.background);
    for (const auto& shj : cfgdetail::require<nlohmann::json>(sj, "shapes", "sequence " + ns.name))
      ns.scene.shapes.push_back(cfgdetail::shape_from_json(shj, "sequence " + ns.name));
    ns.scene.validate();
    scenes.push_back(std::move(ns));
  }
  if (scenes.empty()) throw ConfigError("dataset spec: no sequences defined");
  return scenes;
}

inline void write_dataset_spec(const std::vector<NamedScene>& scenes, const std::string& path) {
  if (scenes.empty()) throw ConfigError("write_dataset_spec: no scenes");
  const SceneSpec& base = scenes.front().scene;
  nlohmann::json j;
  j["width"] = base.width;
  j["height"] = base.height;
  j["rgb_fps"] = base.rgb_fps;
  j["depth_fps"] = base.depth_fps;
  j["max_depth_mm"] = base.max_depth_mm;
  j["invalid"] = {{"edge_band_px", base.invalid.edge_band_px}, {"dropout_rate", base.invalid.dropout_rate}};
  j["background"] = {{"depth_mm", base.background.depth_mm},
                     {"texture_seed", base.background.texture_seed},
                     {"color", {base.background.color[0], base.background.color[1], base.background.color[2]}},
                     {"noise_scale_px", base.background.noise_scale_px}};
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& ns : scenes) {
    nlohmann::json sj;
    sj["name"] = ns.name;
    if (ns.scene.brightness != 1.0) sj["brightness"] = ns.scene.brightness;
    const auto& bg = ns.scene.background;
    sj["background"] = {{"depth_mm", bg.depth_mm},
                        {"texture_seed", bg.texture_seed},
                        {"color", {bg.color[0], bg.color[1], bg.color[2]}},
                        {"noise_scale_px", bg.noise_scale_px}};
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& s : ns.scene.shapes) {
      nlohmann::json shj;
      shj["kind"] = s.kind == ShapeSpec::Kind::rectangle ? "rectangle" : "ellipse";
      shj["size_px"] = {s.size_w, s.size_h};
      shj["depth_mm"] = s.depth_mm;
      shj["texture_seed"] = s.texture_seed;
      shj["color"] = {s.color[0], s.color[1], s.color[2]};
      if (s.trajectory.zigzag) {
        const auto& z = *s.trajectory.zigzag;
        shj["trajectory"] = {{"zigzag",
                              {{"seed", z.seed},
                               {"speed_px_s", {z.speed_min, z.speed_max}},
                               {"segment_s", {z.segment_min_s, z.segment_max_s}},
                               {"margin_px", z.margin_px}}}};
      } else {
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& seg : s.trajectory.segments)
          segs.push_back({{"start_s", seg.start_s},
                          {"pos_px", {seg.pos_x, seg.pos_y}},
                          {"vel_px_s", {seg.vel_x, seg.vel_y}}});
        shj["trajectory"] = {{"segments", segs}};
      }
      shapes.push_back(shj);
    }
    sj["shapes"] = shapes;
    seqs.push_back(sj);
  }
  j["sequences"] = seqs;
  std::ofstream f(path);
  if (!f) throw DataError("cannot write dataset spec " + path);
  f << j.dump(2) << "\n";
}

// Generates every sequence of the spec into out_dir (one subdirectory each,
// with a ground-truth calibration file) and returns the directory names.
inline std::vector<std::string> generate_dataset(const std::vector<NamedScene>& scenes,
                                                 const std::string& out_dir, uint64_t seed,
                                                 double duration_s) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> names;
  for (size_t i = 0; i < scenes.size(); ++i) {
    Sequence seq = generate_sequence(scenes[i].scene, mix_seed(seed, i + 1), duration_s, scenes[i].name);
    seq.calibration_file = "calibration.json";
    const std::string dir = out_dir + "/" + scenes[i].name;
    write_sequence(seq, dir);
    write_calibration(synthetic_calibration(scenes[i].scene), dir + "/calibration.json");
    names.push_back(scenes[i].name);
  }
  return names;
}

}  // namespace depthup

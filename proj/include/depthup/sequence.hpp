#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "depthup/image.hpp"

namespace depthup {

struct FrameMeta {
  std::string file;
  int64_t timestamp_us = 0;
};

// One recorded sequence: high-rate RGB stream plus low-rate depth stream,
// with per-frame timestamps. Pixel data is loaded lazily from the sequence
// directory and cached; generated sequences live fully in the cache.
class Sequence {
 public:
  std::string name;
  int width = 0, height = 0;
  int rgb_fps = 0, depth_fps = 0;
  int max_depth_mm = 5000;
  std::string calibration_file;  // optional, relative to the sequence directory
  std::vector<FrameMeta> rgb_meta, depth_meta;

  Sequence() : mutex_(std::make_unique<std::mutex>()) {}

  int rgb_count() const { return int(rgb_meta.size()); }
  int depth_count() const { return int(depth_meta.size()); }

  const std::string& dir() const { return dir_; }
  void set_dir(const std::string& d) { dir_ = d; }

  const RgbFrame& rgb(int i) const {
    std::lock_guard<std::mutex> lk(*mutex_);
    auto it = rgb_cache_.find(i);
    if (it != rgb_cache_.end()) return it->second;
    return rgb_cache_.emplace(i, load_rgb(i)).first->second;
  }

  const DepthFrame& depth(int i) const {
    std::lock_guard<std::mutex> lk(*mutex_);
    auto it = depth_cache_.find(i);
    if (it != depth_cache_.end()) return it->second;
    return depth_cache_.emplace(i, load_depth(i)).first->second;
  }

  void put_rgb(int i, RgbFrame f) { rgb_cache_[i] = std::move(f); }
  void put_depth(int i, DepthFrame f) { depth_cache_[i] = std::move(f); }

  void drop_cache() {
    std::lock_guard<std::mutex> lk(*mutex_);
    rgb_cache_.clear();
    depth_cache_.clear();
  }

 private:
  RgbFrame load_rgb(int i) const {
    const auto& meta = rgb_meta.at(size_t(i));
    RgbFrame f(width, height);
    read_raw(meta.file, f.data.data(), f.data.size());
    return f;
  }

  DepthFrame load_depth(int i) const {
    const auto& meta = depth_meta.at(size_t(i));
    DepthFrame f(width, height);
    read_raw(meta.file, f.mm.data(), f.mm.size() * 2);
    return f;
  }

  void read_raw(const std::string& file, void* dst, size_t bytes) const {
    if (dir_.empty()) throw DataError("frame " + file + " not present in in-memory sequence");
    const std::string path = dir_ + "/" + file;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open frame file " + path);
    read_bytes(is, dst, bytes, "frame file " + path);
  }

  std::string dir_;
  mutable std::unique_ptr<std::mutex> mutex_;
  mutable std::unordered_map<int, RgbFrame> rgb_cache_;
  mutable std::unordered_map<int, DepthFrame> depth_cache_;
};

// ---- sequence directory format ----------------------------------------------
//
// manifest.json {name, width, height, rgb_fps, depth_fps, max_depth_mm,
//                frames: [{file, timestamp_us, kind: "rgb"|"depth"}]}
// RGB frames: raw interleaved 8-bit, row-major (.rgb)
// depth frames: raw 16-bit little-endian millimeters, row-major (.d16)

inline void write_sequence(const Sequence& seq, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json frames = nlohmann::json::array();

  struct Entry {
    const FrameMeta* meta;
    bool is_rgb;
  };
  std::vector<Entry> entries;
  for (const auto& m : seq.rgb_meta) entries.push_back({&m, true});
  for (const auto& m : seq.depth_meta) entries.push_back({&m, false});
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.meta->timestamp_us < b.meta->timestamp_us;
  });

  for (const auto& e : entries)
    frames.push_back({{"file", e.meta->file},
                      {"timestamp_us", e.meta->timestamp_us},
                      {"kind", e.is_rgb ? "rgb" : "depth"}});

  nlohmann::json j{{"name", seq.name},       {"width", seq.width},
                   {"height", seq.height},   {"rgb_fps", seq.rgb_fps},
                   {"depth_fps", seq.depth_fps}, {"max_depth_mm", seq.max_depth_mm},
                   {"frames", frames}};
  if (!seq.calibration_file.empty()) j["calibration"] = seq.calibration_file;

  for (int i = 0; i < seq.rgb_count(); ++i) {
    const RgbFrame& f = seq.rgb(i);
    std::ofstream os(dir + "/" + seq.rgb_meta[size_t(i)].file, std::ios::binary);
    if (!os) throw DataError("cannot write " + seq.rgb_meta[size_t(i)].file);
    write_bytes(os, f.data.data(), f.data.size());
  }
  for (int i = 0; i < seq.depth_count(); ++i) {
    const DepthFrame& f = seq.depth(i);
    std::ofstream os(dir + "/" + seq.depth_meta[size_t(i)].file, std::ios::binary);
    if (!os) throw DataError("cannot write " + seq.depth_meta[size_t(i)].file);
    write_bytes(os, f.mm.data(), f.mm.size() * 2);
  }
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw DataError("cannot write manifest in " + dir);
  os << j.dump(1) << "\n";
}

inline Sequence read_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = dir + "/manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw FormatError("cannot open " + manifest_path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest parse failure in " + manifest_path + ": " + e.what());
  }

  Sequence seq;
  seq.set_dir(dir);
  try {
    seq.name = j.at("name");
    seq.width = j.at("width");
    seq.height = j.at("height");
    seq.rgb_fps = j.at("rgb_fps");
    seq.depth_fps = j.at("depth_fps");
    seq.max_depth_mm = j.at("max_depth_mm");
    if (j.contains("calibration")) seq.calibration_file = j.at("calibration");
    for (const auto& f : j.at("frames")) {
      FrameMeta m{f.at("file"), f.at("timestamp_us")};
      const std::string kind = f.at("kind");
      if (kind == "rgb")
        seq.rgb_meta.push_back(m);
      else if (kind == "depth")
        seq.depth_meta.push_back(m);
      else
        throw FormatError("manifest " + manifest_path + ": unknown frame kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + manifest_path + ": " + e.what());
  }
  if (seq.width <= 0 || seq.height <= 0 || seq.rgb_fps <= 0 || seq.depth_fps <= 0 ||
      seq.max_depth_mm <= 0)
    throw FormatError("manifest " + manifest_path + ": non-positive dims or rates");

  // timestamps strictly increasing per stream
  for (const auto* stream : {&seq.rgb_meta, &seq.depth_meta})
    for (size_t i = 1; i < stream->size(); ++i)
      if ((*stream)[i].timestamp_us <= (*stream)[i - 1].timestamp_us)
        throw FormatError("manifest " + manifest_path + ": timestamps not strictly increasing");

  // every referenced frame file must exist with the exact raw size
  const size_t rgb_bytes = size_t(3) * seq.width * seq.height;
  const size_t depth_bytes = size_t(2) * seq.width * seq.height;
  for (const auto& m : seq.rgb_meta) {
    const std::string p = dir + "/" + m.file;
    std::error_code ec;
    const auto sz = fs::file_size(p, ec);
    if (ec) throw FormatError("missing frame file " + p);
    if (sz != rgb_bytes)
      throw FormatError("frame file " + p + " has " + std::to_string(sz) + " bytes, expected " +
                        std::to_string(rgb_bytes));
  }
  for (const auto& m : seq.depth_meta) {
    const std::string p = dir + "/" + m.file;
    std::error_code ec;
    const auto sz = fs::file_size(p, ec);
    if (ec) throw FormatError("missing frame file " + p);
    if (sz != depth_bytes)
      throw FormatError("frame file " + p + " has " + std::to_string(sz) + " bytes, expected " +
                        std::to_string(depth_bytes));
  }
  return seq;
}

// ---- timestamp synchronization ------------------------------------------------

struct SyncIndex {
  std::vector<std::pair<int, int>> pairs;  // (depth index, rgb index)
  std::vector<int64_t> residual_us;

  int rgb_for_depth(int depth_idx) const { return pairs.at(size_t(depth_idx)).second; }
};

// Nearest rgb timestamp per depth frame; ties take the earlier rgb frame.
inline SyncIndex synchronize(const std::vector<int64_t>& rgb_ts, const std::vector<int64_t>& depth_ts) {
  if (rgb_ts.empty() || depth_ts.empty()) throw DataError("synchronize: empty stream");
  SyncIndex idx;
  idx.pairs.reserve(depth_ts.size());
  for (size_t di = 0; di < depth_ts.size(); ++di) {
    const int64_t t = depth_ts[di];
    auto it = std::lower_bound(rgb_ts.begin(), rgb_ts.end(), t);
    int best;
    if (it == rgb_ts.begin())
      best = 0;
    else if (it == rgb_ts.end())
      best = int(rgb_ts.size()) - 1;
    else {
      const int hi = int(it - rgb_ts.begin());
      const int lo = hi - 1;
      // strict < keeps the earlier frame on ties
      best = (t - rgb_ts[size_t(lo)] <= rgb_ts[size_t(hi)] - t) ? lo : hi;
    }
    idx.pairs.emplace_back(int(di), best);
    idx.residual_us.push_back(std::abs(rgb_ts[size_t(best)] - t));
  }
  return idx;
}

inline SyncIndex synchronize(const Sequence& seq) {
  std::vector<int64_t> rgb_ts, depth_ts;
  for (const auto& m : seq.rgb_meta) rgb_ts.push_back(m.timestamp_us);
  for (const auto& m : seq.depth_meta) depth_ts.push_back(m.timestamp_us);
  return synchronize(rgb_ts, depth_ts);
}

// ---- training/evaluation samples ----------------------------------------------

// One training/evaluation item, normalized: rgb / 255, depth / max_depth_mm.
template <typename T>
struct Sample {
  Tensor<T> c_t;     // 1 x h x w x 3
  Tensor<T> d_t;     // 1 x h x w x 1
  Tensor<T> c_next;  // 1 x h x w x 3
  Tensor<T> gt;      // 1 x h x w x 1
  ValidityMask gt_mask;
};

// Frame indices for one sample; materialized on demand to keep memory flat.
struct SampleSpec {
  int depth_t = 0, rgb_t = 0, rgb_next = 0, depth_gt = 0;
};

struct SamplePlan {
  std::vector<SampleSpec> specs;
  std::string warning;  // set when the sequence is too short for the delta
};

// For each depth frame t with a depth frame at t + delta: C_t is the rgb frame
// paired with t, C_next the one paired with t + delta, gt the depth at t + delta.
inline SamplePlan make_sample_plan(const Sequence& seq, const SyncIndex& sync, int delta_frames) {
  if (delta_frames < 1) throw ConfigError("make_samples: delta_frames must be >= 1");
  SamplePlan plan;
  const int n = seq.depth_count();
  if (n <= delta_frames) {
    plan.warning = "sequence " + seq.name + " has " + std::to_string(n) +
                   " depth frames; delta " + std::to_string(delta_frames) + " yields no samples";
    return plan;
  }
  for (int t = 0; t + delta_frames < n; ++t)
    plan.specs.push_back({t, sync.rgb_for_depth(t), sync.rgb_for_depth(t + delta_frames), t + delta_frames});
  return plan;
}

template <typename T>
Sample<T> make_sample(const Sequence& seq, const SampleSpec& s) {
  Sample<T> out;
  out.c_t = rgb_to_tensor<T>(seq.rgb(s.rgb_t));
  out.d_t = depth_to_tensor<T>(seq.depth(s.depth_t), seq.max_depth_mm);
  out.c_next = rgb_to_tensor<T>(seq.rgb(s.rgb_next));
  const DepthFrame& gt = seq.depth(s.depth_gt);
  out.gt = depth_to_tensor<T>(gt, seq.max_depth_mm);
  out.gt_mask = validity_mask(gt);
  return out;
}

template <typename T>
std::vector<Sample<T>> make_samples(const Sequence& seq, const SyncIndex& sync, int delta_frames) {
  SamplePlan plan = make_sample_plan(seq, sync, delta_frames);
  std::vector<Sample<T>> out;
  out.reserve(plan.specs.size());
  for (const auto& s : plan.specs) out.push_back(make_sample<T>(seq, s));
  return out;
}

// ---- leave-one-sequence-out splitting -------------------------------------------

struct LosoSplit {
  std::vector<std::string> train;
  std::string test;
};

inline LosoSplit loso_split(const std::vector<std::string>& names, const std::string& held_out) {
  LosoSplit split;
  bool found = false;
  for (const auto& n : names) {
    if (n == held_out) {
      found = true;
      split.test = n;
    } else {
      split.train.push_back(n);
    }
  }
  if (!found) throw ConfigError("loso_split: unknown sequence name '" + held_out + "'");
  return split;
}

// ---- dataset directory -----------------------------------------------------------

inline std::vector<std::string> list_sequence_dirs(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> names;
  if (!fs::is_directory(dataset_dir)) throw DataError("dataset directory not found: " + dataset_dir);
  for (const auto& e : fs::directory_iterator(dataset_dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no sequences found in " + dataset_dir);
  return names;
}

inline std::vector<Sequence> read_dataset(const std::string& dataset_dir) {
  std::vector<Sequence> seqs;
  for (const auto& n : list_sequence_dirs(dataset_dir)) seqs.push_back(read_sequence(dataset_dir + "/" + n));
  return seqs;
}

}  // namespace depthup

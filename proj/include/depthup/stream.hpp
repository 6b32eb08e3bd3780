#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "depthup/calib.hpp"
#include "depthup/model.hpp"
#include "depthup/parallel.hpp"
#include "depthup/sequence.hpp"
#include "depthup/train.hpp"

namespace depthup {

// Streaming runtime configuration.
//
// sequential (pipelined = false): the single-threaded reference path; every
// frame is preprocessed, inferred and written serially on the calling thread.
// pipelined (pipelined = true): two worker roles plus the coordinator —
// preprocessing of frame k+1 runs concurrently with the network on frame k
// through capacity-1 hand-offs, and the model uses `threads` internal workers.
// Outputs are bit-identical between the modes.
struct RuntimeOptions {
  bool half = false;       // network runs at 2x downscale, output upscaled + input mask reapplied
  bool pipelined = false;
  int threads = 0;         // intra-op workers in pipelined mode; 0 = hardware concurrency
};

struct FrameTiming {
  double pre_ms = 0, model_ms = 0, post_ms = 0;
};

struct StreamStats {
  std::vector<FrameTiming> frames;
  double wall_s = 0;
  uint64_t checksum = 0;
  long frames_out = 0;
};

namespace streamdetail {

inline uint64_t fnv1a(uint64_t h, const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct PreItem {
  int out_index = 0;
  int64_t timestamp_us = 0;
  Sample<float> sample;     // c_t, d_t, c_next at network resolution (gt unused)
  ValidityMask input_mask;  // D_t validity at full sequence resolution
  double pre_ms = 0;
};

struct InferItem {
  int out_index = 0;
  int64_t timestamp_us = 0;
  Tensor<float> pred;
  ValidityMask input_mask;
  double pre_ms = 0, model_ms = 0;
};

template <typename T>
class BoundedChannel {
 public:
  void push(T v) {
    std::unique_lock<std::mutex> lk(m_);
    cv_space_.wait(lk, [&] { return !slot_.has_value() || closed_; });
    if (closed_) return;
    slot_ = std::move(v);
    cv_item_.notify_one();
  }
  std::optional<T> pop() {
    std::unique_lock<std::mutex> lk(m_);
    cv_item_.wait(lk, [&] { return slot_.has_value() || closed_; });
    if (!slot_.has_value()) return std::nullopt;
    std::optional<T> v = std::move(slot_);
    slot_.reset();
    cv_space_.notify_one();
    return v;
  }
  void close() {
    std::lock_guard<std::mutex> lk(m_);
    closed_ = true;
    cv_item_.notify_all();
    cv_space_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_item_, cv_space_;
  std::optional<T> slot_;
  bool closed_ = false;
};

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// crop/resize/normalize/mask of one input triple
inline PreItem preprocess(const Sequence& seq, const SampleSpec& sp, int out_index, bool half) {
  const auto t0 = Clock::now();
  PreItem item;
  item.out_index = out_index;
  item.timestamp_us = seq.depth_meta[size_t(sp.depth_gt)].timestamp_us;
  const RgbFrame& c_t = seq.rgb(sp.rgb_t);
  const RgbFrame& c_next = seq.rgb(sp.rgb_next);
  const DepthFrame& d_t = seq.depth(sp.depth_t);
  item.input_mask = validity_mask(d_t);
  if (half) {
    const int hw = seq.width / 2, hh = seq.height / 2;
    item.sample.c_t = rgb_to_tensor<float>(resize_nearest(c_t, hw, hh));
    item.sample.c_next = rgb_to_tensor<float>(resize_nearest(c_next, hw, hh));
    item.sample.d_t = depth_to_tensor<float>(resize_nearest(d_t, hw, hh), seq.max_depth_mm);
  } else {
    item.sample.c_t = rgb_to_tensor<float>(c_t);
    item.sample.c_next = rgb_to_tensor<float>(c_next);
    item.sample.d_t = depth_to_tensor<float>(d_t, seq.max_depth_mm);
  }
  item.pre_ms = ms_since(t0);
  return item;
}

// clamp, denormalize, upscale in half mode (nearest neighbor) with the input
// validity mask reapplied at full resolution
inline DepthFrame postprocess(const Tensor<float>& pred, const ValidityMask& input_mask, bool half,
                              int full_w, int full_h, int max_depth_mm) {
  DepthFrame out = tensor_to_depth(clamp01(pred), max_depth_mm);
  if (half) {
    out = resize_nearest(out, full_w, full_h);
    apply_mask(out, input_mask);
  }
  return out;
}

}  // namespace streamdetail

// Runs the network over every (D_t, C_t, C_next) triple of the sequence and
// emits the predicted depth frames in input order. When out_dir is non-empty
// the predictions are written as a depth-only sequence directory.
inline StreamStats stream_infer(const Network<float>& net, const Sequence& seq,
                                const RuntimeOptions& opts, const std::string& out_dir = "",
                                int max_frames = -1, bool cycle = false) {
  const int want_h = opts.half ? seq.height / 2 : seq.height;
  const int want_w = opts.half ? seq.width / 2 : seq.width;
  if (net.config().input_h != want_h || net.config().input_w != want_w)
    throw ConfigError("stream_infer: network expects " + std::to_string(net.config().input_w) + "x" +
                      std::to_string(net.config().input_h) + " but the sequence provides " +
                      std::to_string(want_w) + "x" + std::to_string(want_h) +
                      (opts.half ? " (half mode)" : ""));

  const SyncIndex sync = synchronize(seq);
  const SamplePlan plan = make_sample_plan(seq, sync, 1);
  if (plan.specs.empty()) throw DataError("stream_infer: sequence too short");

  std::vector<SampleSpec> specs = plan.specs;
  if (max_frames >= 0 && int(specs.size()) > max_frames && !cycle) specs.resize(size_t(max_frames));
  if (cycle && max_frames > 0) {
    std::vector<SampleSpec> repeated;
    for (int i = 0; i < max_frames; ++i) repeated.push_back(plan.specs[size_t(i) % plan.specs.size()]);
    specs = std::move(repeated);
  }
  const int n = int(specs.size());

  StreamStats stats;
  stats.frames.resize(size_t(n));
  stats.checksum = 0xcbf29ce484222325ULL;

  Sequence out_seq;
  const bool writing = !out_dir.empty();
  if (writing) {
    std::filesystem::create_directories(out_dir);
    out_seq.name = seq.name + "_pred";
    out_seq.width = seq.width;
    out_seq.height = seq.height;
    out_seq.rgb_fps = seq.rgb_fps;
    out_seq.depth_fps = seq.depth_fps;
    out_seq.max_depth_mm = seq.max_depth_mm;
  }

  auto emit = [&](int idx, int64_t ts, DepthFrame frame) {
    stats.checksum = streamdetail::fnv1a(stats.checksum, frame.mm.data(), frame.mm.size() * 2);
    ++stats.frames_out;
    if (writing) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "pred_%06d.d16", idx);
      out_seq.depth_meta.push_back({buf, ts});
      out_seq.put_depth(idx, std::move(frame));
    }
  };

  const auto wall0 = streamdetail::Clock::now();

  if (!opts.pipelined) {
    // serial single-threaded reference path
    ThreadGuard guard(1);
    for (int i = 0; i < n; ++i) {
      streamdetail::PreItem item = streamdetail::preprocess(seq, specs[size_t(i)], i, opts.half);
      const auto t1 = streamdetail::Clock::now();
      Tensor<float> pred = net.forward(item.sample.c_t, item.sample.d_t, item.sample.c_next);
      const double model_ms = streamdetail::ms_since(t1);
      const auto t2 = streamdetail::Clock::now();
      DepthFrame out = streamdetail::postprocess(pred, item.input_mask, opts.half, seq.width,
                                                 seq.height, seq.max_depth_mm);
      emit(i, item.timestamp_us, std::move(out));
      stats.frames[size_t(i)] = {item.pre_ms, model_ms, streamdetail::ms_since(t2)};
    }
  } else {
    ThreadGuard guard(opts.threads);
    streamdetail::BoundedChannel<streamdetail::PreItem> q_pre;
    streamdetail::BoundedChannel<streamdetail::InferItem> q_out;
    std::exception_ptr pre_error, infer_error;

    std::thread pre_thread([&] {
      try {
        for (int i = 0; i < n; ++i) q_pre.push(streamdetail::preprocess(seq, specs[size_t(i)], i, opts.half));
      } catch (...) {
        pre_error = std::current_exception();
      }
      q_pre.close();
    });

    std::thread infer_thread([&] {
      try {
        while (auto item = q_pre.pop()) {
          streamdetail::InferItem out;
          out.out_index = item->out_index;
          out.timestamp_us = item->timestamp_us;
          out.input_mask = std::move(item->input_mask);
          out.pre_ms = item->pre_ms;
          const auto t1 = streamdetail::Clock::now();
          out.pred = net.forward(item->sample.c_t, item->sample.d_t, item->sample.c_next);
          out.model_ms = streamdetail::ms_since(t1);
          q_out.push(std::move(out));
        }
      } catch (...) {
        infer_error = std::current_exception();
        q_pre.close();
      }
      q_out.close();
    });

    while (auto item = q_out.pop()) {
      const auto t2 = streamdetail::Clock::now();
      DepthFrame out = streamdetail::postprocess(item->pred, item->input_mask, opts.half, seq.width,
                                                 seq.height, seq.max_depth_mm);
      emit(item->out_index, item->timestamp_us, std::move(out));
      stats.frames[size_t(item->out_index)] = {item->pre_ms, item->model_ms,
                                               streamdetail::ms_since(t2)};
    }
    pre_thread.join();
    infer_thread.join();
    if (pre_error) std::rethrow_exception(pre_error);
    if (infer_error) std::rethrow_exception(infer_error);
  }

  stats.wall_s = std::chrono::duration<double>(streamdetail::Clock::now() - wall0).count();
  if (writing) write_sequence(out_seq, out_dir);
  return stats;
}

}  // namespace depthup

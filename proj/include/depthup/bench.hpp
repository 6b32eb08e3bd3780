#pragma once

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "depthup/stream.hpp"

namespace depthup {

struct BenchReport {
  std::string hardware;
  std::string weights_note;
  int frames_timed = 0;
  bool outputs_identical = false;

  double seq_model_ms = 0, seq_model_std = 0;
  double seq_total_ms = 0, seq_total_std = 0;  // preprocess + model + output per frame
  double seq_fps = 0;

  double pipe_model_ms = 0, pipe_model_std = 0;
  double pipe_frame_ms = 0;  // wall per frame
  double pipe_fps = 0;
  double speedup = 0;

  std::vector<std::pair<std::string, double>> layer_shares;  // fraction of model time

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "streaming benchmark (" << hardware << ")\n";
    if (!weights_note.empty()) os << "model: " << weights_note << "\n";
    os << "total pipeline time = preprocess + model + output per frame\n";
    os << "pipelined outputs verified identical to sequential: "
       << (outputs_identical ? "yes" : "NO") << "\n";
    os << "frames timed: " << frames_timed << "\n\n";
    os << "mode        model ms (mean/std)   total ms    fps\n";
    os << "sequential  " << std::setw(8) << seq_model_ms << " / " << std::setw(6) << seq_model_std
       << "   " << std::setw(8) << seq_total_ms << "   " << std::setw(6) << seq_fps << "\n";
    os << "pipelined   " << std::setw(8) << pipe_model_ms << " / " << std::setw(6) << pipe_model_std
       << "   " << std::setw(8) << pipe_frame_ms << "   " << std::setw(6) << pipe_fps << "\n";
    os << "pipelined speedup: " << speedup << "x\n\n";
    os << "per-layer share of sequential model time\n";
    os << std::setprecision(4);
    double sum = 0;
    for (const auto& [name, share] : layer_shares) {
      os << "  " << std::left << std::setw(20) << name << std::right << std::setw(8) << share << "\n";
      sum += share;
    }
    os << "  " << std::left << std::setw(20) << "(accounted)" << std::right << std::setw(8) << sum
       << "\n";
    return os.str();
  }
};

namespace benchdetail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0, 0};
  double s = 0;
  for (double x : xs) s += x;
  const double m = s / double(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, xs.size() > 1 ? std::sqrt(v / double(xs.size())) : 0};
}

}  // namespace benchdetail

// Warms up, then times >= `frames` frames in both runtime modes (cycling
// through the sequence if it is shorter). Per-layer shares come from a
// profiled sequential pass. Output equivalence is verified before timing.
inline BenchReport run_bench(const Network<float>& net, const Sequence& seq, bool half,
                             int frames = 100, int warmup = 10, int threads = 0) {
  BenchReport rep;
  rep.hardware = std::to_string(std::thread::hardware_concurrency()) + " logical cores, CPU build";
  {
    std::ostringstream n;
    const auto& c = net.config();
    n << "cascades " << c.cascades << ", base_filters " << c.base_filters << ", "
      << (c.separable ? "separable" : "dense") << " convs, input " << c.input_w << "x" << c.input_h
      << (half ? " (half-resolution mode)" : "");
    rep.weights_note = n.str();
  }

  RuntimeOptions seq_opts{half, false, threads};
  RuntimeOptions pipe_opts{half, true, threads};

  // equivalence gate: identical checksums over a short prefix
  {
    const int probe = std::min(20, frames);
    StreamStats a = stream_infer(net, seq, seq_opts, "", probe, true);
    StreamStats b = stream_infer(net, seq, pipe_opts, "", probe, true);
    rep.outputs_identical = a.checksum == b.checksum && a.frames_out == b.frames_out;
    if (!rep.outputs_identical)
      throw DataError("bench: pipelined outputs differ from sequential; refusing to time");
  }

  const int total = warmup + frames;
  StreamStats seq_stats = stream_infer(net, seq, seq_opts, "", total, true);
  StreamStats pipe_stats = stream_infer(net, seq, pipe_opts, "", total, true);

  std::vector<double> model_ms, total_ms, pipe_model;
  for (int i = warmup; i < total; ++i) {
    const auto& f = seq_stats.frames[size_t(i)];
    model_ms.push_back(f.model_ms);
    total_ms.push_back(f.pre_ms + f.model_ms + f.post_ms);
    pipe_model.push_back(pipe_stats.frames[size_t(i)].model_ms);
  }
  rep.frames_timed = frames;
  std::tie(rep.seq_model_ms, rep.seq_model_std) = benchdetail::mean_std(model_ms);
  std::tie(rep.seq_total_ms, rep.seq_total_std) = benchdetail::mean_std(total_ms);
  std::tie(rep.pipe_model_ms, rep.pipe_model_std) = benchdetail::mean_std(pipe_model);
  rep.seq_fps = 1000.0 / rep.seq_total_ms;
  // steady-state pipelined rate over the timed window, from wall time
  rep.pipe_frame_ms = pipe_stats.wall_s * 1000.0 / double(total);
  rep.pipe_fps = 1000.0 / rep.pipe_frame_ms;
  rep.speedup = rep.pipe_fps / rep.seq_fps;

  // profiled sequential pass for layer shares
  {
    ThreadGuard guard(1);
    const SyncIndex sync = synchronize(seq);
    const SamplePlan plan = make_sample_plan(seq, sync, 1);
    Profiler prof;
    double model_total = 0;
    const int prof_frames = std::min<int>(std::max(10, frames / 4), int(plan.specs.size()) * 4);
    for (int i = 0; i < prof_frames; ++i) {
      const auto item = streamdetail::preprocess(seq, plan.specs[size_t(i) % plan.specs.size()],
                                                 i, half);
      const auto t0 = streamdetail::Clock::now();
      net.forward(item.sample.c_t, item.sample.d_t, item.sample.c_next, nullptr, &prof);
      model_total += streamdetail::ms_since(t0) / 1000.0;
    }
    for (const auto& [key, sec] : prof.seconds) rep.layer_shares.emplace_back(key, sec / model_total);
    std::sort(rep.layer_shares.begin(), rep.layer_shares.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
  }
  return rep;
}

}  // namespace depthup

#pragma once

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthup/flow.hpp"
#include "depthup/model.hpp"
#include "depthup/sequence.hpp"
#include "depthup/train.hpp"

namespace depthup {

enum class MethodKind { naive, flow, network };

inline std::string method_name(MethodKind m) {
  switch (m) {
    case MethodKind::naive: return "naive";
    case MethodKind::flow: return "flow";
    default: return "network";
  }
}

struct EvalRow {
  std::string method, sequence;
  double rmse = 0, rmse_std = 0;
  long n_frames = 0;
  double valid_fraction = 0;
  bool held_out = false;
};

struct DeltaRow {
  int delta = 0;
  double network_rmse = 0, network_std = 0;
  double input_rmse = 0, input_std = 0;
  long n_frames = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;      // one per (method, sequence)
  std::vector<EvalRow> averages;  // one per method, sequence = "average"
  std::vector<DeltaRow> deltas;   // delta sweep on the held-out sequence
  std::string held_out;
  std::string notes;

  const EvalRow* find(const std::string& method, const std::string& sequence) const {
    for (const auto& r : rows)
      if (r.method == method && r.sequence == sequence) return &r;
    return nullptr;
  }
  const EvalRow* average(const std::string& method) const {
    for (const auto& r : averages)
      if (r.method == method) return &r;
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    auto row_json = [](const EvalRow& r) {
      return nlohmann::json{{"method", r.method},
                            {"sequence", r.sequence},
                            {"rmse", r.rmse},
                            {"n_frames", r.n_frames},
                            {"valid_fraction", r.valid_fraction}};
    };
    for (const auto& r : rows) rows_j.push_back(row_json(r));
    for (const auto& r : averages) rows_j.push_back(row_json(r));
    nlohmann::json deltas_j = nlohmann::json::array();
    for (const auto& d : deltas)
      deltas_j.push_back({{"delta_frames", d.delta},
                          {"network_rmse", d.network_rmse},
                          {"network_std", d.network_std},
                          {"input_rmse", d.input_rmse},
                          {"input_std", d.input_std},
                          {"n_frames", d.n_frames}});
    return {{"rows", rows_j}, {"deltas", deltas_j}, {"held_out", held_out}, {"notes", notes}};
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "masked RMSE per method and sequence (normalized depth)\n";
    os << "  naive/flow are scored where their own validity intersects the gt mask;\n";
    os << "  network predictions are clamped to [0,1] and scored on the gt mask.\n";
    os << std::left << std::setw(10) << "method" << std::setw(10) << "sequence" << std::right
       << std::setw(9) << "rmse" << std::setw(9) << "std" << std::setw(9) << "frames" << std::setw(9)
       << "valid" << "\n";
    for (const auto& r : rows)
      os << std::left << std::setw(10) << r.method << std::setw(10)
         << (r.sequence + (r.held_out ? "*" : "")) << std::right << std::setw(9) << r.rmse
         << std::setw(9) << r.rmse_std << std::setw(9) << r.n_frames << std::setw(9)
         << r.valid_fraction << "\n";
    for (const auto& r : averages)
      os << std::left << std::setw(10) << r.method << std::setw(10) << r.sequence << std::right
         << std::setw(9) << r.rmse << std::setw(9) << r.rmse_std << std::setw(9) << r.n_frames
         << std::setw(9) << r.valid_fraction << "\n";
    if (!held_out.empty()) os << "* held-out sequence: " << held_out << "\n";
    if (!deltas.empty()) {
      os << "\ndelta sweep on the held-out sequence (single model trained at delta 1)\n";
      os << std::left << std::setw(8) << "delta" << std::right << std::setw(12) << "network"
         << std::setw(9) << "std" << std::setw(12) << "input" << std::setw(9) << "std" << "\n";
      for (const auto& d : deltas)
        os << std::left << std::setw(8) << d.delta << std::right << std::setw(12) << d.network_rmse
           << std::setw(9) << d.network_std << std::setw(12) << d.input_rmse << std::setw(9)
           << d.input_std << "\n";
    }
    if (!notes.empty()) os << "\n" << notes << "\n";
    return os.str();
  }
};

namespace evaldetail {

struct Accum {
  double sum = 0, sum_sq = 0;
  double valid_sum = 0;
  long n = 0;

  void add(double rmse, double valid_frac) {
    sum += rmse;
    sum_sq += rmse * rmse;
    valid_sum += valid_frac;
    ++n;
  }
  double mean() const { return sum / double(n); }
  double stddev() const {
    if (n < 2) return 0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / double(n) - m * m));
  }
};

// per-frame score of one method on one sample
template <typename Fn>
void eval_sequence(const Sequence& seq, const SamplePlan& plan, Accum& acc, const Fn& frame_fn) {
  for (size_t i = 0; i < plan.specs.size(); ++i) {
    try {
      frame_fn(plan.specs[i], acc);
    } catch (const MetricError& e) {
      throw MetricError(std::string(e.what()) + " (sequence " + seq.name + ", frame " +
                        std::to_string(plan.specs[i].depth_t) + ")");
    }
  }
  if (acc.n == 0) throw MetricError("no scorable frames in sequence " + seq.name);
}

}  // namespace evaldetail

// Evaluates the requested methods at delta 1 on every sequence, plus a
// network/input delta sweep on the held-out sequence. Prediction masks follow
// the per-method convention documented in the report header.
inline EvalReport evaluate(const std::vector<Sequence>& seqs, const std::set<MethodKind>& methods,
                           const Network<float>* net, const FlowConfig& flow_cfg,
                           const std::string& held_out, const std::vector<int>& deltas = {}) {
  EvalReport report;
  report.held_out = held_out;
  if (methods.count(MethodKind::network) && !net) throw ConfigError("evaluate: network method requires weights");

  std::map<std::string, evaldetail::Accum> method_totals;

  for (const auto& seq : seqs) {
    const SyncIndex sync = synchronize(seq);
    const SamplePlan plan = make_sample_plan(seq, sync, 1);

    for (MethodKind m : methods) {
      evaldetail::Accum acc;
      evaldetail::eval_sequence(seq, plan, acc, [&](const SampleSpec& sp, evaldetail::Accum& a) {
        const DepthFrame& gt_frame = seq.depth(sp.depth_gt);
        const ValidityMask gt_mask = validity_mask(gt_frame);
        const Tensor<float> gt = depth_to_tensor<float>(gt_frame, seq.max_depth_mm);
        Tensor<float> pred;
        ValidityMask mask = gt_mask;
        if (m == MethodKind::naive) {
          const DepthFrame& d_t = seq.depth(sp.depth_t);
          pred = depth_to_tensor<float>(d_t, seq.max_depth_mm);
          mask = gt_mask & validity_mask(d_t);
        } else if (m == MethodKind::flow) {
          const DepthFrame& d_t = seq.depth(sp.depth_t);
          const Tensor<float> g_next = to_grayscale(seq.rgb(sp.rgb_next));
          const Tensor<float> g_t = to_grayscale(seq.rgb(sp.rgb_t));
          const FlowField<float> f = farneback_flow(g_next, g_t, flow_cfg);
          auto [warped, warped_mask] = warp_depth(d_t, f, validity_mask(d_t));
          pred = depth_to_tensor<float>(warped, seq.max_depth_mm);
          mask = gt_mask & warped_mask;
        } else {
          Sample<float> s = make_sample<float>(seq, sp);
          pred = clamp01(net->forward(s));
        }
        if (mask.count_valid() == 0) return;  // nothing scorable this frame
        const double frac = double(mask.count_valid()) / double(mask.bits.size());
        a.add(masked_rmse(pred, gt, mask), frac);
      });
      EvalRow row;
      row.method = method_name(m);
      row.sequence = seq.name;
      row.held_out = seq.name == held_out;
      row.rmse = acc.mean();
      row.rmse_std = acc.stddev();
      row.n_frames = acc.n;
      row.valid_fraction = acc.valid_sum / double(acc.n);
      report.rows.push_back(row);
      method_totals[row.method].add(row.rmse, row.valid_fraction);
    }
  }

  for (const auto& [name, acc] : method_totals) {
    EvalRow avg;
    avg.method = name;
    avg.sequence = "average";
    avg.rmse = acc.mean();
    avg.rmse_std = acc.stddev();
    avg.n_frames = acc.n;  // sequences averaged
    avg.valid_fraction = acc.valid_sum / double(acc.n);
    report.averages.push_back(avg);
  }

  // delta sweep: network + input-vs-gt on the held-out sequence
  if (!deltas.empty()) {
    if (!net) throw ConfigError("evaluate: delta sweep requires network weights");
    const Sequence* test = nullptr;
    for (const auto& s : seqs)
      if (s.name == held_out) test = &s;
    if (!test) throw ConfigError("evaluate: held-out sequence '" + held_out + "' not in dataset");
    const SyncIndex sync = synchronize(*test);
    for (int delta : deltas) {
      const SamplePlan plan = make_sample_plan(*test, sync, delta);
      evaldetail::Accum net_acc, input_acc;
      evaldetail::eval_sequence(*test, plan, net_acc, [&](const SampleSpec& sp, evaldetail::Accum& a) {
        Sample<float> s = make_sample<float>(*test, sp);
        if (s.gt_mask.count_valid() == 0) return;
        const Tensor<float> pred = clamp01(net->forward(s));
        a.add(masked_rmse(pred, s.gt, s.gt_mask),
              double(s.gt_mask.count_valid()) / double(s.gt_mask.bits.size()));
      });
      evaldetail::eval_sequence(*test, plan, input_acc, [&](const SampleSpec& sp, evaldetail::Accum& a) {
        const DepthFrame& gt_frame = test->depth(sp.depth_gt);
        const DepthFrame& d_t = test->depth(sp.depth_t);
        const ValidityMask mask = validity_mask(gt_frame) & validity_mask(d_t);
        if (mask.count_valid() == 0) return;
        a.add(masked_rmse(depth_to_tensor<float>(d_t, test->max_depth_mm),
                          depth_to_tensor<float>(gt_frame, test->max_depth_mm), mask),
              double(mask.count_valid()) / double(mask.bits.size()));
      });
      DeltaRow d;
      d.delta = delta;
      d.network_rmse = net_acc.mean();
      d.network_std = net_acc.stddev();
      d.input_rmse = input_acc.mean();
      d.input_std = input_acc.stddev();
      d.n_frames = net_acc.n;
      report.deltas.push_back(d);
    }
  }
  return report;
}

}  // namespace depthup

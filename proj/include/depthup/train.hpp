#pragma once

#include <chrono>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "depthup/model.hpp"
#include "depthup/sequence.hpp"

namespace depthup {

struct TrainOptions {
  double lr = 1e-3;
  int batch_size = 4;
  int epochs = 3;
  uint64_t seed = 1;
  int delta_frames = 1;

  void validate() const {
    if (lr < 0) throw ConfigError("training: lr must be >= 0");
    if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("training: epochs must be >= 0");
    if (delta_frames < 1) throw ConfigError("training: delta_frames must be >= 1");
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double holdout_rmse = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  double best_holdout_rmse = std::numeric_limits<double>::infinity();
  int best_epoch = 0;  // 0 = initial weights
};

template <typename T>
Tensor<T> clamp01(const Tensor<T>& t) {
  Tensor<T> out = t;
  for (auto& v : out.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
  return out;
}

// Mean per-frame masked RMSE of clamped network predictions on one sequence.
inline double eval_network_rmse(const Network<float>& net, const Sequence& seq, int delta_frames) {
  const SyncIndex sync = synchronize(seq);
  const SamplePlan plan = make_sample_plan(seq, sync, delta_frames);
  if (plan.specs.empty()) throw DataError("sequence " + seq.name + ": no samples at delta " + std::to_string(delta_frames));
  double sum = 0;
  long n = 0;
  for (const auto& spec : plan.specs) {
    Sample<float> s = make_sample<float>(seq, spec);
    const Tensor<float> pred = clamp01(net.forward(s));
    sum += masked_rmse(pred, s.gt, s.gt_mask);
    ++n;
  }
  return sum / double(n);
}

namespace traindetail {

template <typename T>
std::vector<Tensor<T>> snapshot_params(Network<T>& net) {
  std::vector<Tensor<T>> snap;
  for (Param<T>* p : net.params()) snap.push_back(p->value);
  return snap;
}

template <typename T>
void restore_params(Network<T>& net, const std::vector<Tensor<T>>& snap) {
  auto ps = net.params();
  for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap[i];
}

}  // namespace traindetail

// Leave-one-sequence-out training: trains on every sequence except held_out,
// logs per-epoch train loss and held-out masked RMSE, and leaves the best
// epoch's weights in the network.
inline TrainResult train_network(Network<float>& net, const std::vector<Sequence>& seqs,
                                 const std::string& held_out, const TrainOptions& opts,
                                 std::ostream* log = nullptr) {
  opts.validate();
  std::vector<std::string> names;
  for (const auto& s : seqs) names.push_back(s.name);
  const LosoSplit split = loso_split(names, held_out);

  const Sequence* test_seq = nullptr;
  std::vector<const Sequence*> train_seqs;
  for (const auto& s : seqs) {
    if (s.name == held_out)
      test_seq = &s;
    else
      train_seqs.push_back(&s);
  }
  if (train_seqs.empty()) throw ConfigError("training: no training sequences besides the held-out one");

  struct Item {
    const Sequence* seq;
    SampleSpec spec;
  };
  std::vector<Item> items;
  for (const Sequence* s : train_seqs) {
    const SyncIndex sync = synchronize(*s);
    const SamplePlan plan = make_sample_plan(*s, sync, opts.delta_frames);
    if (log && !plan.warning.empty()) *log << "warning: " << plan.warning << "\n";
    for (const auto& sp : plan.specs) items.push_back({s, sp});
  }
  if (items.empty()) throw DataError("training: no samples available");

  TrainResult result;
  AdamConfig adam;
  adam.lr = opts.lr;

  auto holdout = [&]() { return eval_network_rmse(net, *test_seq, opts.delta_frames); };

  double best = holdout();
  std::vector<Tensor<float>> best_snap = traindetail::snapshot_params(net);
  result.best_holdout_rmse = best;
  result.best_epoch = 0;
  if (log) *log << "initial holdout_rmse " << best << "\n";

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(mix_seed(opts.seed, 0xE90C + uint64_t(epoch)));
    rng.shuffle(items.begin(), items.end());

    double loss_sum = 0;
    long steps = 0;
    for (size_t i = 0; i < items.size(); i += size_t(opts.batch_size)) {
      std::vector<Sample<float>> batch;
      for (size_t j = i; j < std::min(items.size(), i + size_t(opts.batch_size)); ++j)
        batch.push_back(make_sample<float>(*items[j].seq, items[j].spec));
      loss_sum += net.train_step(batch, adam);
      ++steps;
    }

    EpochLog el;
    el.epoch = epoch;
    el.train_loss = loss_sum / double(steps);
    el.holdout_rmse = holdout();
    el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(el);
    if (log)
      *log << "epoch " << epoch << " train_loss " << el.train_loss << " holdout_rmse "
           << el.holdout_rmse << " (" << el.seconds << " s)\n";

    if (el.holdout_rmse < best) {
      best = el.holdout_rmse;
      best_snap = traindetail::snapshot_params(net);
      result.best_holdout_rmse = best;
      result.best_epoch = epoch;
    }
  }

  traindetail::restore_params(net, best_snap);
  if (log)
    *log << "best epoch " << result.best_epoch << " holdout_rmse " << result.best_holdout_rmse
         << (opts.epochs == 0 ? " (zero epochs: initial weights kept)" : "") << "\n";
  return result;
}

}  // namespace depthup

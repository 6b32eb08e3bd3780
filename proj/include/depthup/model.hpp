#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "depthup/loss.hpp"
#include "depthup/ops.hpp"
#include "depthup/optim.hpp"
#include "depthup/sequence.hpp"

namespace depthup {

// ---- configuration -----------------------------------------------------------

struct NetworkConfig {
  int cascades = 3;          // encoder/decoder halving steps, 2..5
  int base_filters = 8;      // level k uses base_filters * 2^k channels
  int input_h = 108, input_w = 192;
  bool skip_d_input = true;         // depth early features -> pre-head concat
  bool skip_cnext_input = true;     // rgb early features -> pre-head concat
  bool skip_enc_dec_level1 = true;  // encoder->decoder concat at full resolution
  bool skip_enc_dec_level2 = true;  // encoder->decoder concat at half resolution
  bool separable = false;
  int bottleneck_convs = 2;

  bool operator==(const NetworkConfig&) const = default;

  void validate() const {
    if (cascades < 2 || cascades > 5) throw ConfigError("network: cascades must be in [2, 5]");
    if (base_filters < 4) throw ConfigError("network: base_filters must be >= 4");
    if (bottleneck_convs < 1) throw ConfigError("network: bottleneck_convs must be >= 1");
    const int min_dim = 1 << cascades;
    if (input_h < min_dim || input_w < min_dim)
      throw ConfigError("network: input " + std::to_string(input_w) + "x" + std::to_string(input_h) +
                        " too small for " + std::to_string(cascades) + " cascades");
  }
};

// Clears one of the four skip-connection flags.
inline NetworkConfig ablate(const NetworkConfig& cfg, const std::string& skip_id) {
  NetworkConfig out = cfg;
  if (skip_id == "skip_d_input" || skip_id == "skip_D_input")
    out.skip_d_input = false;
  else if (skip_id == "skip_cnext_input" || skip_id == "skip_Cnext_input")
    out.skip_cnext_input = false;
  else if (skip_id == "skip_enc_dec_level1")
    out.skip_enc_dec_level1 = false;
  else if (skip_id == "skip_enc_dec_level2")
    out.skip_enc_dec_level2 = false;
  else
    throw ConfigError("ablate: unknown skip connection '" + skip_id + "'");
  return out;
}

inline const std::vector<std::string>& skip_connection_ids() {
  static const std::vector<std::string> ids = {"skip_d_input", "skip_cnext_input",
                                               "skip_enc_dec_level1", "skip_enc_dec_level2"};
  return ids;
}

// ---- profiling hook ------------------------------------------------------------

struct Profiler {
  std::map<std::string, double> seconds;
  void add(const std::string& key, double s) { seconds[key] += s; }
  double total() const {
    double t = 0;
    for (const auto& [k, v] : seconds) t += v;
    return t;
  }
};

namespace modeldetail {

using Clock = std::chrono::steady_clock;

struct ScopedTimer {
  Profiler* prof;
  const char* key;
  Clock::time_point t0;
  ScopedTimer(Profiler* p, const char* k) : prof(p), key(k) {
    if (prof) t0 = Clock::now();
  }
  ~ScopedTimer() {
    if (prof) prof->add(key, std::chrono::duration<double>(Clock::now() - t0).count());
  }
};

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
void accumulate_bias(Tensor<T>& dst, const std::vector<T>& src) {
  for (size_t i = 0; i < src.size(); ++i) dst.data[i] += src[i];
}

template <typename T>
std::vector<T> bias_vec(const Param<T>& b) {
  return b.value.data;
}

}  // namespace modeldetail

// ---- layer units ------------------------------------------------------------------

// Same-padded stride-1 convolution block, dense or depthwise-separable,
// with optional ReLU. The 1x1 head stays dense in both modes.
template <typename T>
struct ConvUnit {
  std::string name;
  bool separable = false;
  bool relu_act = true;
  int kh = 3, kw = 3, cin = 0, cout = 0;
  Param<T> w;   // dense kernel (kh,kw,cin,cout) or pointwise (1,1,cin,cout)
  Param<T> dw;  // depthwise kernel (kh,kw,cin,1), separable mode only
  Param<T> b;   // bias (1,1,1,cout)

  struct Trace {
    Tensor<T> in, mid, out;
  };

  void init(const std::string& name_, int kh_, int kw_, int cin_, int cout_, bool separable_,
            bool relu_, Rng& rng) {
    name = name_;
    kh = kh_;
    kw = kw_;
    cin = cin_;
    cout = cout_;
    separable = separable_ && !(kh_ == 1 && kw_ == 1);
    relu_act = relu_;
    b = Param<T>(Tensor<T>(1, 1, 1, cout));
    // small positive random biases keep relu units alive and keep no
    // pre-activation exactly on the kink; the linear head stays zero-biased
    if (relu_act)
      for (auto& v : b.value.data) v = T(rng.uniform(0.01, 0.05));
    if (separable) {
      dw = Param<T>(Tensor<T>(kh, kw, cin, 1));
      const double lim_dw = std::sqrt(6.0 / (kh * kw));
      for (auto& v : dw.value.data) v = T(rng.uniform(-lim_dw, lim_dw));
      w = Param<T>(Tensor<T>(1, 1, cin, cout));
      const double lim_pw = std::sqrt(6.0 / cin);
      for (auto& v : w.value.data) v = T(rng.uniform(-lim_pw, lim_pw));
    } else {
      w = Param<T>(Tensor<T>(kh, kw, cin, cout));
      const double lim = std::sqrt(6.0 / (kh * kw * cin));
      for (auto& v : w.value.data) v = T(rng.uniform(-lim, lim));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Trace* tr, Profiler* prof = nullptr) const {
    modeldetail::ScopedTimer timer(prof, separable ? "separable_conv2d" : (kh == 1 ? "conv2d_1x1" : "conv2d"));
    Tensor<T> out;
    Tensor<T> mid;
    if (separable) {
      mid = depthwise_conv2d(x, dw.value, 1, Padding::same);
      out = conv2d(mid, w.value, modeldetail::bias_vec(b), 1, Padding::same);
    } else {
      out = conv2d(x, w.value, modeldetail::bias_vec(b), 1, Padding::same);
    }
    if (relu_act) relu_inplace(out);
    if (tr) {
      tr->in = x;
      tr->mid = std::move(mid);
      tr->out = out;
    }
    return out;
  }

  // accumulates parameter gradients, returns grad w.r.t. the input
  Tensor<T> backward(const Trace& tr, const Tensor<T>& grad_out) {
    // out > 0 iff pre-activation > 0, so the saved output doubles as the mask
    Tensor<T> g = relu_act ? relu_backward(tr.out, grad_out) : grad_out;
    if (separable) {
      SeparableGrads<T> sg = separable_conv2d_backward(tr.in, dw.value, w.value, tr.mid, g, 1, Padding::same);
      modeldetail::accumulate(dw.grad, sg.depthwise);
      modeldetail::accumulate(w.grad, sg.pointwise);
      modeldetail::accumulate_bias(b.grad, sg.bias);
      return std::move(sg.input);
    }
    ConvGrads<T> cg = conv2d_backward(tr.in, w.value, g, 1, Padding::same);
    modeldetail::accumulate(w.grad, cg.kernel);
    modeldetail::accumulate_bias(b.grad, cg.bias);
    return std::move(cg.input);
  }

  void collect(std::vector<std::pair<std::string, Param<T>*>>& out) {
    if (separable) out.emplace_back(name + ".dw", &dw);
    out.emplace_back(name + ".w", &w);
    out.emplace_back(name + ".b", &b);
  }
};

// Stride-2 transposed convolution (3x3) with ReLU; doubles spatial dims.
template <typename T>
struct TconvUnit {
  std::string name;
  int cin = 0, cout = 0;
  Param<T> w;  // (3, 3, cout, cin)
  Param<T> b;

  struct Trace {
    Tensor<T> in, out;
  };

  void init(const std::string& name_, int cin_, int cout_, Rng& rng) {
    name = name_;
    cin = cin_;
    cout = cout_;
    w = Param<T>(Tensor<T>(3, 3, cout, cin));
    const double lim = std::sqrt(6.0 / (3 * 3 * cin));
    for (auto& v : w.value.data) v = T(rng.uniform(-lim, lim));
    b = Param<T>(Tensor<T>(1, 1, 1, cout));
    for (auto& v : b.value.data) v = T(rng.uniform(0.01, 0.05));
  }

  Tensor<T> forward(const Tensor<T>& x, Trace* tr, Profiler* prof = nullptr) const {
    modeldetail::ScopedTimer timer(prof, "conv2d_transpose");
    Tensor<T> out = conv2d_transpose(x, w.value, modeldetail::bias_vec(b), 2);
    relu_inplace(out);
    if (tr) {
      tr->in = x;
      tr->out = out;
    }
    return out;
  }

  Tensor<T> backward(const Trace& tr, const Tensor<T>& grad_out) {
    Tensor<T> g = relu_backward(tr.out, grad_out);
    ConvGrads<T> cg = conv2d_transpose_backward(tr.in, w.value, g, 2);
    modeldetail::accumulate(w.grad, cg.kernel);
    modeldetail::accumulate_bias(b.grad, cg.bias);
    return std::move(cg.input);
  }

  void collect(std::vector<std::pair<std::string, Param<T>*>>& out) {
    out.emplace_back(name + ".w", &w);
    out.emplace_back(name + ".b", &b);
  }
};

// ---- the network --------------------------------------------------------------------
//
// Dual-encoder topology: one encoder over the channel-concatenated rgb pair
// (C_t, C_next), one over D_t. Each cascade level applies two 3x3 convs and a
// 2x2 maxpool; the bottleneck merges both branches by concatenation and applies
// bottleneck_convs convolutions; the decoder mirrors the encoder with stride-2
// transposed convs. Early features of both branches (after two convs, full
// resolution) feed the pre-head concat; encoder features at the two shallowest
// levels optionally feed the matching decoder stages. The head is a linear 1x1.
template <typename T>
class Network {
 public:
  explicit Network(const NetworkConfig& cfg, uint64_t seed = 1) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0xAD17));
    const int K = cfg_.cascades, F = cfg_.base_filters;

    rgb_convs_.resize(size_t(2 * K));
    dep_convs_.resize(size_t(2 * K));
    for (int k = 0; k < K; ++k) {
      const int ch = F << k;
      const int prev_rgb = k == 0 ? 6 : (F << (k - 1));
      const int prev_dep = k == 0 ? 1 : (F << (k - 1));
      rgb_convs_[size_t(2 * k)].init("enc_rgb" + std::to_string(k) + "_conv1", 3, 3, prev_rgb, ch,
                                     cfg_.separable, true, rng);
      rgb_convs_[size_t(2 * k + 1)].init("enc_rgb" + std::to_string(k) + "_conv2", 3, 3, ch, ch,
                                         cfg_.separable, true, rng);
      dep_convs_[size_t(2 * k)].init("enc_dep" + std::to_string(k) + "_conv1", 3, 3, prev_dep, ch,
                                     cfg_.separable, true, rng);
      dep_convs_[size_t(2 * k + 1)].init("enc_dep" + std::to_string(k) + "_conv2", 3, 3, ch, ch,
                                         cfg_.separable, true, rng);
    }

    const int bneck_ch = F << K;  // concat of both branches at the deepest level
    bneck_.resize(size_t(cfg_.bottleneck_convs));
    for (int i = 0; i < cfg_.bottleneck_convs; ++i)
      bneck_[size_t(i)].init("bneck_conv" + std::to_string(i), 3, 3, bneck_ch, bneck_ch,
                             cfg_.separable, true, rng);

    up_.resize(size_t(K));
    dec_convs_.resize(size_t(K));
    for (int k = K - 1; k >= 0; --k) {
      const int ch = F << k;
      const int in_ch = (k == K - 1) ? bneck_ch : (F << (k + 1));
      up_[size_t(k)].init("dec" + std::to_string(k) + "_up", in_ch, ch, rng);
      const int conv_in = skip_at_level(k) ? 3 * ch : ch;
      dec_convs_[size_t(k)].init("dec" + std::to_string(k) + "_conv", 3, 3, conv_in, ch,
                                 cfg_.separable, true, rng);
    }

    int head_in = F;
    if (cfg_.skip_d_input) head_in += F;
    if (cfg_.skip_cnext_input) head_in += F;
    head_.init("head_1x1", 1, 1, head_in, 1, false, false, rng);
  }

  const NetworkConfig& config() const { return cfg_; }

  bool skip_at_level(int k) const {
    return (k == 0 && cfg_.skip_enc_dec_level1) || (k == 1 && cfg_.skip_enc_dec_level2);
  }

  // spatial dims of encoder features at each level, plus the bottleneck
  std::vector<std::pair<int, int>> level_dims() const {
    std::vector<std::pair<int, int>> dims;
    int h = cfg_.input_h, w = cfg_.input_w;
    for (int k = 0; k < cfg_.cascades; ++k) {
      dims.emplace_back(h, w);
      h /= 2;
      w /= 2;
    }
    dims.emplace_back(h, w);  // bottleneck
    return dims;
  }

  std::pair<int, int> bottleneck_hw() const { return level_dims().back(); }

  std::vector<std::pair<std::string, Param<T>*>> named_params() {
    std::vector<std::pair<std::string, Param<T>*>> out;
    for (auto& u : rgb_convs_) u.collect(out);
    for (auto& u : dep_convs_) u.collect(out);
    for (auto& u : bneck_) u.collect(out);
    for (int k = cfg_.cascades - 1; k >= 0; --k) {
      up_[size_t(k)].collect(out);
      dec_convs_[size_t(k)].collect(out);
    }
    head_.collect(out);
    return out;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (auto& [name, p] : const_cast<Network*>(this)->named_params()) n += int64_t(p->value.size());
    return n;
  }

  void zero_grads() {
    for (Param<T>* p : params()) p->zero_grad();
  }

  // everything backward() needs
  struct Trace {
    struct Level {
      typename ConvUnit<T>::Trace conv1, conv2;
      std::vector<int32_t> argmax;
      int feat_h = 0, feat_w = 0, feat_c = 0;
    };
    std::vector<Level> rgb, dep;
    std::vector<typename ConvUnit<T>::Trace> bneck;
    struct Dec {
      typename TconvUnit<T>::Trace up;
      int unpadded_h = 0, unpadded_w = 0;
      typename ConvUnit<T>::Trace conv;
    };
    std::vector<Dec> dec;  // indexed by level k
    typename ConvUnit<T>::Trace head;
  };

  Tensor<T> forward(const Tensor<T>& c_t, const Tensor<T>& d_t, const Tensor<T>& c_next,
                    Trace* tr = nullptr, Profiler* prof = nullptr) const {
    check_input(c_t, 3, "C_t");
    check_input(d_t, 1, "D_t");
    check_input(c_next, 3, "C_next");
    const int K = cfg_.cascades;
    if (tr) {
      tr->rgb.resize(size_t(K));
      tr->dep.resize(size_t(K));
      tr->bneck.resize(size_t(cfg_.bottleneck_convs));
      tr->dec.resize(size_t(K));
    }

    Tensor<T> rgb_in;
    {
      modeldetail::ScopedTimer timer(prof, "concat");
      rgb_in = concat_channels(c_t, c_next);
    }

    // encoders; keep pre-pool features of every level for skips and taps
    std::vector<Tensor<T>> rgb_feat(static_cast<size_t>(K));
    std::vector<Tensor<T>> dep_feat(static_cast<size_t>(K));
    Tensor<T> x_rgb = std::move(rgb_in), x_dep = d_t;
    for (int k = 0; k < K; ++k) {
      x_rgb = rgb_convs_[size_t(2 * k)].forward(x_rgb, tr ? &tr->rgb[size_t(k)].conv1 : nullptr, prof);
      rgb_feat[size_t(k)] =
          rgb_convs_[size_t(2 * k + 1)].forward(x_rgb, tr ? &tr->rgb[size_t(k)].conv2 : nullptr, prof);
      x_dep = dep_convs_[size_t(2 * k)].forward(x_dep, tr ? &tr->dep[size_t(k)].conv1 : nullptr, prof);
      dep_feat[size_t(k)] =
          dep_convs_[size_t(2 * k + 1)].forward(x_dep, tr ? &tr->dep[size_t(k)].conv2 : nullptr, prof);
      {
        modeldetail::ScopedTimer timer(prof, "maxpool");
        PoolResult<T> pr = maxpool2d(rgb_feat[size_t(k)]);
        PoolResult<T> pd = maxpool2d(dep_feat[size_t(k)]);
        if (tr) {
          auto& lr = tr->rgb[size_t(k)];
          lr.argmax = std::move(pr.argmax);
          lr.feat_h = rgb_feat[size_t(k)].h;
          lr.feat_w = rgb_feat[size_t(k)].w;
          lr.feat_c = rgb_feat[size_t(k)].c;
          auto& ld = tr->dep[size_t(k)];
          ld.argmax = std::move(pd.argmax);
          ld.feat_h = dep_feat[size_t(k)].h;
          ld.feat_w = dep_feat[size_t(k)].w;
          ld.feat_c = dep_feat[size_t(k)].c;
        }
        x_rgb = std::move(pr.out);
        x_dep = std::move(pd.out);
      }
    }

    Tensor<T> x;
    {
      modeldetail::ScopedTimer timer(prof, "concat");
      x = concat_channels(x_rgb, x_dep);
    }
    for (int i = 0; i < cfg_.bottleneck_convs; ++i)
      x = bneck_[size_t(i)].forward(x, tr ? &tr->bneck[size_t(i)] : nullptr, prof);

    for (int k = K - 1; k >= 0; --k) {
      x = up_[size_t(k)].forward(x, tr ? &tr->dec[size_t(k)].up : nullptr, prof);
      const Tensor<T>& ref = rgb_feat[size_t(k)];
      if (tr) {
        tr->dec[size_t(k)].unpadded_h = x.h;
        tr->dec[size_t(k)].unpadded_w = x.w;
      }
      if (x.h != ref.h || x.w != ref.w) {
        modeldetail::ScopedTimer timer(prof, "pad");
        x = pad_bottom_right(x, ref.h, ref.w);
      }
      if (skip_at_level(k)) {
        modeldetail::ScopedTimer timer(prof, "concat");
        x = concat_channels(x, concat_channels(rgb_feat[size_t(k)], dep_feat[size_t(k)]));
      }
      x = dec_convs_[size_t(k)].forward(x, tr ? &tr->dec[size_t(k)].conv : nullptr, prof);
    }

    {
      modeldetail::ScopedTimer timer(prof, "concat");
      if (cfg_.skip_d_input) x = concat_channels(x, dep_feat[0]);
      if (cfg_.skip_cnext_input) x = concat_channels(x, rgb_feat[0]);
    }
    return head_.forward(x, tr ? &tr->head : nullptr, prof);
  }

  Tensor<T> forward(const Sample<T>& s, Trace* tr = nullptr, Profiler* prof = nullptr) const {
    return forward(s.c_t, s.d_t, s.c_next, tr, prof);
  }

  // Accumulates parameter gradients for one traced forward pass.
  void backward(const Trace& tr, const Tensor<T>& grad_out) {
    const int K = cfg_.cascades, F = cfg_.base_filters;

    Tensor<T> g = head_.backward(tr.head, grad_out);

    // pre-head layout: [decoder F][dep tap F][rgb tap F], flags permitting
    Tensor<T> g_rgb_tap, g_dep_tap;
    if (cfg_.skip_cnext_input) {
      auto [rest, tap] = split_channels(g, g.c - F);
      g_rgb_tap = std::move(tap);
      g = std::move(rest);
    }
    if (cfg_.skip_d_input) {
      auto [rest, tap] = split_channels(g, g.c - F);
      g_dep_tap = std::move(tap);
      g = std::move(rest);
    }

    // per-level gradients flowing into the pre-pool encoder features
    std::vector<Tensor<T>> g_rgb_feat(static_cast<size_t>(K));
    std::vector<Tensor<T>> g_dep_feat(static_cast<size_t>(K));
    if (cfg_.skip_cnext_input) g_rgb_feat[0] = std::move(g_rgb_tap);
    if (cfg_.skip_d_input) g_dep_feat[0] = std::move(g_dep_tap);

    // decoder, reverse order (level 0 upward)
    for (int k = 0; k < K; ++k) {
      auto& dtr = tr.dec[size_t(k)];
      g = dec_convs_[size_t(k)].backward(dtr.conv, g);
      if (skip_at_level(k)) {
        const int ch = F << k;
        auto [g_main, g_skip] = split_channels(g, g.c - 2 * ch);
        auto [g_rgb, g_dep] = split_channels(g_skip, ch);
        add_to(g_rgb_feat[size_t(k)], g_rgb);
        add_to(g_dep_feat[size_t(k)], g_dep);
        g = std::move(g_main);
      }
      if (g.h != dtr.unpadded_h || g.w != dtr.unpadded_w)
        g = crop_top_left(g, dtr.unpadded_h, dtr.unpadded_w);
      g = up_[size_t(k)].backward(dtr.up, g);
    }

    for (int i = cfg_.bottleneck_convs - 1; i >= 0; --i) g = bneck_[size_t(i)].backward(tr.bneck[size_t(i)], g);

    // split the bottleneck merge back into the two branches
    auto [g_rgb_pooled, g_dep_pooled] = split_channels(g, g.c / 2);

    // encoders, deepest level first
    for (int k = K - 1; k >= 0; --k) {
      {
        const auto& lt = tr.rgb[size_t(k)];
        Tensor<T> gf = maxpool2d_backward(lt.argmax, 1, lt.feat_h, lt.feat_w, lt.feat_c, g_rgb_pooled);
        add_to(g_rgb_feat[size_t(k)], gf);
        Tensor<T> ga = rgb_convs_[size_t(2 * k + 1)].backward(lt.conv2, g_rgb_feat[size_t(k)]);
        g_rgb_pooled = rgb_convs_[size_t(2 * k)].backward(lt.conv1, ga);
      }
      {
        const auto& lt = tr.dep[size_t(k)];
        Tensor<T> gf = maxpool2d_backward(lt.argmax, 1, lt.feat_h, lt.feat_w, lt.feat_c, g_dep_pooled);
        add_to(g_dep_feat[size_t(k)], gf);
        Tensor<T> ga = dep_convs_[size_t(2 * k + 1)].backward(lt.conv2, g_dep_feat[size_t(k)]);
        g_dep_pooled = dep_convs_[size_t(2 * k)].backward(lt.conv1, ga);
      }
    }
    // g_rgb_pooled / g_dep_pooled now hold input gradients, which are unused
  }

  // One optimizer step on a batch. The loss is the masked RMSE over the union
  // of valid gt pixels in the batch (single square root); lr = 0 evaluates the
  // loss without touching any state.
  double train_step(const std::vector<Sample<T>>& batch, const AdamConfig& adam) {
    if (batch.empty()) throw TrainingError("train_step: empty batch");
    std::vector<Trace> traces(batch.size());
    std::vector<Tensor<T>> preds(batch.size());
    double sq_sum = 0;
    int64_t n_valid = 0;
    const bool learn = adam.lr != 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
      preds[i] = forward(batch[i], learn ? &traces[i] : nullptr);
      const auto& gt = batch[i].gt;
      const auto& mask = batch[i].gt_mask;
      for (size_t j = 0; j < gt.size(); ++j) {
        if (!mask.bits[j]) continue;
        const double d = double(preds[i].data[j]) - double(gt.data[j]);
        sq_sum += d * d;
        ++n_valid;
      }
    }
    if (n_valid == 0) throw TrainingError("train_step: no valid gt pixels in batch");
    const double loss = std::sqrt(sq_sum / double(n_valid));
    if (!learn) return loss;

    if (loss > 0) {
      for (size_t i = 0; i < batch.size(); ++i) {
        Tensor<T> g(1, preds[i].h, preds[i].w, 1);
        const auto& gt = batch[i].gt;
        const auto& mask = batch[i].gt_mask;
        for (size_t j = 0; j < g.size(); ++j)
          if (mask.bits[j])
            g.data[j] = T((double(preds[i].data[j]) - double(gt.data[j])) / (double(n_valid) * loss));
        backward(traces[i], g);
      }
    }
    for (Param<T>* p : params()) {
      adam_step(*p, adam);
      p->zero_grad();
    }
    return loss;
  }

  // ---- weights file: magic "ADNW", little-endian ------------------------------

  static constexpr uint32_t kWeightsVersion = 1;

  void save(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write weights file " + path);
    os.write("ADNW", 4);
    write_le<uint32_t>(os, kWeightsVersion);
    write_le<int32_t>(os, cfg_.cascades);
    write_le<int32_t>(os, cfg_.base_filters);
    write_le<int32_t>(os, cfg_.input_h);
    write_le<int32_t>(os, cfg_.input_w);
    write_le<uint8_t>(os, cfg_.skip_d_input);
    write_le<uint8_t>(os, cfg_.skip_cnext_input);
    write_le<uint8_t>(os, cfg_.skip_enc_dec_level1);
    write_le<uint8_t>(os, cfg_.skip_enc_dec_level2);
    write_le<uint8_t>(os, cfg_.separable);
    write_le<int32_t>(os, cfg_.bottleneck_convs);
    for (auto& [name, p] : named_params()) {
      const Tensor<T>& v = p->value;
      write_le<int32_t>(os, v.n);
      write_le<int32_t>(os, v.h);
      write_le<int32_t>(os, v.w);
      write_le<int32_t>(os, v.c);
      for (T x : v.data) write_le<float>(os, float(x));
    }
    if (!os) throw DataError("write failure on " + path);
  }

  static NetworkConfig read_header(std::istream& is, const std::string& path) {
    char magic[4];
    read_bytes(is, magic, 4, "weights magic");
    if (std::string(magic, 4) != "ADNW") throw FormatError("bad magic in weights file " + path);
    const auto version = read_le<uint32_t>(is, "weights version");
    if (version != kWeightsVersion)
      throw FormatError("weights file " + path + ": unsupported version " + std::to_string(version));
    NetworkConfig cfg;
    cfg.cascades = read_le<int32_t>(is, "cascades");
    cfg.base_filters = read_le<int32_t>(is, "base_filters");
    cfg.input_h = read_le<int32_t>(is, "input_h");
    cfg.input_w = read_le<int32_t>(is, "input_w");
    cfg.skip_d_input = read_le<uint8_t>(is, "skip_d_input");
    cfg.skip_cnext_input = read_le<uint8_t>(is, "skip_cnext_input");
    cfg.skip_enc_dec_level1 = read_le<uint8_t>(is, "skip_enc_dec_level1");
    cfg.skip_enc_dec_level2 = read_le<uint8_t>(is, "skip_enc_dec_level2");
    cfg.separable = read_le<uint8_t>(is, "separable");
    cfg.bottleneck_convs = read_le<int32_t>(is, "bottleneck_convs");
    return cfg;
  }

  static Network load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open weights file " + path);
    NetworkConfig cfg = read_header(is, path);
    cfg.validate();
    Network net(cfg, 0);
    for (auto& [name, p] : net.named_params()) {
      const int n = read_le<int32_t>(is, name + " dims");
      const int h = read_le<int32_t>(is, name + " dims");
      const int w = read_le<int32_t>(is, name + " dims");
      const int c = read_le<int32_t>(is, name + " dims");
      Tensor<T>& v = p->value;
      if (n != v.n || h != v.h || w != v.w || c != v.c)
        throw FormatError("weights file " + path + ": parameter " + name + " has dims " +
                          std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
                          std::to_string(c) + ", expected " + v.dims_str());
      for (size_t i = 0; i < v.size(); ++i) v.data[i] = T(read_le<float>(is, name + " data"));
    }
    is.peek();
    if (!is.eof()) throw FormatError("weights file " + path + ": trailing data");
    return net;
  }

  // Loads and checks the stored config against an expected one, reporting the
  // first mismatching field.
  static Network load_expect(const std::string& path, const NetworkConfig& expect) {
    {
      std::ifstream is(path, std::ios::binary);
      if (!is) throw FormatError("cannot open weights file " + path);
      const NetworkConfig got = read_header(is, path);
      auto fail = [&](const std::string& field, auto a, auto b) {
        throw FormatError("weights file " + path + ": config mismatch on " + field + " (file " +
                          std::to_string(a) + ", expected " + std::to_string(b) + ")");
      };
      if (got.cascades != expect.cascades) fail("cascades", got.cascades, expect.cascades);
      if (got.base_filters != expect.base_filters) fail("base_filters", got.base_filters, expect.base_filters);
      if (got.input_h != expect.input_h) fail("input_h", got.input_h, expect.input_h);
      if (got.input_w != expect.input_w) fail("input_w", got.input_w, expect.input_w);
      if (got.skip_d_input != expect.skip_d_input) fail("skip_d_input", got.skip_d_input, expect.skip_d_input);
      if (got.skip_cnext_input != expect.skip_cnext_input)
        fail("skip_cnext_input", got.skip_cnext_input, expect.skip_cnext_input);
      if (got.skip_enc_dec_level1 != expect.skip_enc_dec_level1)
        fail("skip_enc_dec_level1", got.skip_enc_dec_level1, expect.skip_enc_dec_level1);
      if (got.skip_enc_dec_level2 != expect.skip_enc_dec_level2)
        fail("skip_enc_dec_level2", got.skip_enc_dec_level2, expect.skip_enc_dec_level2);
      if (got.separable != expect.separable) fail("separable", got.separable, expect.separable);
      if (got.bottleneck_convs != expect.bottleneck_convs)
        fail("bottleneck_convs", got.bottleneck_convs, expect.bottleneck_convs);
    }
    return load(path);
  }

  // explicit precision change (weights only; optimizer state is not carried)
  template <typename U>
  Network<U> cast() {
    Network<U> out(cfg_, 0);
    auto src = named_params();
    auto dst = out.named_params();
    for (size_t i = 0; i < src.size(); ++i) dst[i].second->value = src[i].second->value.template cast<U>();
    return out;
  }

 private:
  void check_input(const Tensor<T>& t, int expect_c, const char* what) const {
    if (t.n != 1 || t.h != cfg_.input_h || t.w != cfg_.input_w || t.c != expect_c)
      throw ShapeError(std::string(what) + " dims " + t.dims_str() + " do not match config 1x" +
                       std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w) + "x" +
                       std::to_string(expect_c));
  }

  static void add_to(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.empty())
      dst = src;
    else
      modeldetail::accumulate(dst, src);
  }

  NetworkConfig cfg_;
  std::vector<ConvUnit<T>> rgb_convs_, dep_convs_, bneck_;
  std::vector<TconvUnit<T>> up_;
  std::vector<ConvUnit<T>> dec_convs_;
  ConvUnit<T> head_;

  template <typename U>
  friend class Network;
};

}  // namespace depthup

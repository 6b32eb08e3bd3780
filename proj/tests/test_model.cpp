#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <depthup/model.hpp>
#include <depthup/parallel.hpp>
#include <filesystem>

using namespace depthup;
namespace fs = std::filesystem;

namespace {

Sample<float> random_sample(int h, int w, uint64_t seed, double invalid_rate = 0.15) {
  Rng rng(seed);
  Sample<float> s;
  s.c_t = random_uniform<float>(1, h, w, 3, rng, 0.0f, 1.0f);
  s.d_t = random_uniform<float>(1, h, w, 1, rng, 0.1f, 0.9f);
  s.c_next = random_uniform<float>(1, h, w, 3, rng, 0.0f, 1.0f);
  s.gt = random_uniform<float>(1, h, w, 1, rng, 0.1f, 0.9f);
  s.gt_mask = ValidityMask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (rng.next_double() < invalid_rate) {
        s.gt_mask.set(y, x, false);
        s.gt.at(0, y, x, 0) = 0.0f;
      }
  return s;
}

// independent layer-by-layer parameter arithmetic
int64_t expected_param_count(const NetworkConfig& c) {
  auto conv = [](int kh, int kw, int cin, int cout) { return int64_t(kh) * kw * cin * cout + cout; };
  const int K = c.cascades, F = c.base_filters;
  int64_t total = 0;
  for (int k = 0; k < K; ++k) {
    const int ch = F << k;
    total += conv(3, 3, k == 0 ? 6 : F << (k - 1), ch) + conv(3, 3, ch, ch);  // rgb branch
    total += conv(3, 3, k == 0 ? 1 : F << (k - 1), ch) + conv(3, 3, ch, ch);  // depth branch
  }
  const int bneck = F << K;
  total += int64_t(c.bottleneck_convs) * conv(3, 3, bneck, bneck);
  for (int k = K - 1; k >= 0; --k) {
    const int ch = F << k;
    const int in_ch = k == K - 1 ? bneck : (F << (k + 1));
    total += conv(3, 3, in_ch, ch);  // transposed conv has the same element count
    const bool skip = (k == 0 && c.skip_enc_dec_level1) || (k == 1 && c.skip_enc_dec_level2);
    total += conv(3, 3, skip ? 3 * ch : ch, ch);
  }
  int head_in = F + (c.skip_d_input ? F : 0) + (c.skip_cnext_input ? F : 0);
  total += conv(1, 1, head_in, 1);
  return total;
}

}  // namespace

TEST_CASE("bottleneck arithmetic") {
  NetworkConfig cfg;
  cfg.cascades = 5;
  cfg.base_filters = 4;
  cfg.input_w = 960;
  cfg.input_h = 540;
  Network<float> net(cfg);
  // 540 -> 270 -> 135 -> 67 -> 33 -> 16 and 960 -> ... -> 30
  CHECK(net.bottleneck_hw() == std::pair<int, int>{16, 30});

  NetworkConfig small;
  small.cascades = 2;
  small.base_filters = 4;
  small.input_w = 64;
  small.input_h = 64;
  CHECK(Network<float>(small).bottleneck_hw() == std::pair<int, int>{16, 16});
}

TEST_CASE("config validation") {
  NetworkConfig cfg;
  cfg.cascades = 6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetworkConfig{};
  cfg.cascades = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetworkConfig{};
  cfg.cascades = 5;
  cfg.input_h = 16;  // < 2^5
  cfg.input_w = 64;
  CHECK_THROWS_AS((Network<float>{cfg}), ConfigError);
  cfg = NetworkConfig{};
  cfg.base_filters = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetworkConfig{};
  cfg.bottleneck_convs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("same seed gives bit-identical initial weights") {
  NetworkConfig cfg;
  cfg.cascades = 3;
  cfg.base_filters = 4;
  cfg.input_h = 32;
  cfg.input_w = 48;
  Network<float> a(cfg, 9), b(cfg, 9), c(cfg, 10);
  auto pa = a.named_params(), pb = b.named_params(), pc = c.named_params();
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && pa[i].second->value.data == pb[i].second->value.data;
    any_diff_seed = any_diff_seed || pa[i].second->value.data != pc[i].second->value.data;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("forward shape contract and purity") {
  NetworkConfig cfg;
  cfg.cascades = 3;
  cfg.base_filters = 4;
  cfg.input_h = 24;  // halvings: 24 -> 12 -> 6 -> 3
  cfg.input_w = 36;
  Network<float> net(cfg, 2);
  Sample<float> s = random_sample(24, 36, 3);

  Tensor<float> out = net.forward(s);
  CHECK(out.h == 24);
  CHECK(out.w == 36);
  CHECK(out.c == 1);
  CHECK(out.all_finite());

  // pure function of (weights, sample): identical across calls and thread counts
  set_threads(2);
  Tensor<float> out2 = net.forward(s);
  set_threads(1);
  Tensor<float> out3 = net.forward(s);
  set_threads(0);
  CHECK(out.data == out2.data);
  CHECK(out.data == out3.data);

  Sample<float> wrong = random_sample(24, 32, 4);
  CHECK_THROWS_AS(net.forward(wrong), ShapeError);
}

TEST_CASE("odd input dims survive the decoder size fixup") {
  NetworkConfig cfg;
  cfg.cascades = 4;
  cfg.base_filters = 4;
  cfg.input_h = 27;  // 27 -> 13 -> 6 -> 3 -> 1
  cfg.input_w = 45;
  Network<float> net(cfg, 5);
  Sample<float> s = random_sample(27, 45, 6);
  Tensor<float> out = net.forward(s);
  CHECK(out.h == 27);
  CHECK(out.w == 45);
}

TEST_CASE("zero-initialized final layer gives identically zero output") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  Network<float> net(cfg, 7);
  for (auto& [name, p] : net.named_params())
    if (name.rfind("head", 0) == 0) p->value.fill(0.0f);
  Tensor<float> out = net.forward(random_sample(16, 16, 8));
  for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("param_count: closed form for a single conv unit") {
  Rng rng(1);
  ConvUnit<float> u;
  u.init("u", 3, 3, 1, 8, false, true, rng);
  CHECK(u.w.value.size() + u.b.value.size() == 80);  // 3*3*1*8 + 8
}

TEST_CASE("param_count matches independent layer arithmetic") {
  for (int cascades : {2, 3, 4}) {
    for (int bf : {4, 8}) {
      NetworkConfig cfg;
      cfg.cascades = cascades;
      cfg.base_filters = bf;
      cfg.input_h = 64;
      cfg.input_w = 64;
      Network<float> net(cfg);
      CHECK(net.param_count() == expected_param_count(cfg));
    }
  }
  // with skips ablated the head and decoder shrink accordingly
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 32;
  cfg.input_w = 32;
  cfg.skip_d_input = false;
  cfg.skip_enc_dec_level1 = false;
  Network<float> net(cfg);
  CHECK(net.param_count() == expected_param_count(cfg));
}

TEST_CASE("param_count is strictly increasing in cascades and base_filters") {
  auto count = [](int cascades, int bf) {
    NetworkConfig cfg;
    cfg.cascades = cascades;
    cfg.base_filters = bf;
    cfg.input_h = 64;
    cfg.input_w = 64;
    return Network<float>(cfg).param_count();
  };
  CHECK(count(3, 8) > count(2, 8));
  CHECK(count(4, 8) > count(3, 8));
  CHECK(count(5, 8) > count(4, 8));
  CHECK(count(3, 8) > count(3, 4));
  CHECK(count(3, 16) > count(3, 8));
}

TEST_CASE("separable mode builds, runs, and cuts the dense parameter count") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 8;
  cfg.input_h = 32;
  cfg.input_w = 32;
  NetworkConfig sep = cfg;
  sep.separable = true;
  Network<float> dense(cfg, 3), s(sep, 3);
  CHECK(s.param_count() < dense.param_count());
  Sample<float> sample = random_sample(32, 32, 4);
  CHECK(s.forward(sample).all_finite());
}

TEST_CASE("weights file round trip reproduces forward output bit-exactly") {
  const std::string dir = (fs::temp_directory_path() / "depthup_weights").string();
  fs::create_directories(dir);
  NetworkConfig cfg;
  cfg.cascades = 3;
  cfg.base_filters = 4;
  cfg.input_h = 32;
  cfg.input_w = 32;
  Network<float> net(cfg, 11);
  Sample<float> s = random_sample(32, 32, 12);
  Tensor<float> before = net.forward(s);

  net.save(dir + "/w.adnw");
  Network<float> loaded = Network<float>::load(dir + "/w.adnw");
  CHECK(loaded.config() == cfg);
  Tensor<float> after = loaded.forward(s);
  CHECK(before.data == after.data);

  SUBCASE("truncated file fails atomically") {
    const auto full = fs::file_size(dir + "/w.adnw");
    fs::resize_file(dir + "/w.adnw", full / 2);
    CHECK_THROWS_AS(Network<float>::load(dir + "/w.adnw"), FormatError);
  }

  SUBCASE("config mismatch names the field") {
    NetworkConfig expect = cfg;
    expect.cascades = 4;
    CHECK_THROWS_WITH_AS(Network<float>::load_expect(dir + "/w.adnw", expect),
                         doctest::Contains("cascades"), FormatError);
    CHECK_NOTHROW(Network<float>::load_expect(dir + "/w.adnw", cfg));
  }

  SUBCASE("bad magic") {
    std::ofstream f(dir + "/w.adnw", std::ios::binary | std::ios::trunc);
    f << "NOPE";
    f.close();
    CHECK_THROWS_AS(Network<float>::load(dir + "/w.adnw"), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("train_step: lr 0 evaluates the loss without touching parameters") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  Network<float> net(cfg, 13);
  std::vector<Tensor<float>> before;
  for (Param<float>* p : net.params()) before.push_back(p->value);

  AdamConfig adam;
  adam.lr = 0.0;
  const double loss = net.train_step({random_sample(16, 16, 14)}, adam);
  CHECK(loss > 0.0);
  auto ps = net.params();
  for (size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value.data == before[i].data);
}

TEST_CASE("train_step error paths") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  Network<float> net(cfg, 15);
  AdamConfig adam;
  CHECK_THROWS_AS(net.train_step({}, adam), TrainingError);

  Sample<float> s = random_sample(16, 16, 16);
  s.gt_mask = ValidityMask(16, 16, false);  // nothing valid anywhere
  CHECK_THROWS_AS(net.train_step({s}, adam), TrainingError);
}

TEST_CASE("fixed seed and data give an identical loss trajectory") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    Network<float> net(cfg, 17);
    AdamConfig adam;
    std::vector<double> losses;
    for (int step = 0; step < 4; ++step)
      losses.push_back(net.train_step({random_sample(16, 16, 18 + uint64_t(step))}, adam));
    if (run == 0)
      first = losses;
    else
      CHECK(first == losses);
  }
}

TEST_CASE("single-sample overfit drives the loss below 0.01") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 32;
  cfg.input_w = 32;
  Network<float> net(cfg, 19);

  // one scene-like sample: smooth depth field, textured color, slight motion
  Sample<float> s;
  s.c_t = Tensor<float>(1, 32, 32, 3);
  s.c_next = Tensor<float>(1, 32, 32, 3);
  s.d_t = Tensor<float>(1, 32, 32, 1);
  s.gt = Tensor<float>(1, 32, 32, 1);
  s.gt_mask = ValidityMask(32, 32);
  Rng rng(20);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      auto field = [](double px, double py) {
        return 0.5 + 0.25 * std::sin(0.3 * px) * std::cos(0.21 * py);
      };
      s.d_t.at(0, y, x, 0) = float(field(x, y));
      s.gt.at(0, y, x, 0) = float(field(x - 2, y));
      for (int c = 0; c < 3; ++c) {
        s.c_t.at(0, y, x, c) = float(0.5 + 0.4 * std::sin(0.5 * x + 0.7 * y + c));
        s.c_next.at(0, y, x, c) = float(0.5 + 0.4 * std::sin(0.5 * (x - 2) + 0.7 * y + c));
      }
      if (rng.next_double() < 0.1) {
        s.gt_mask.set(y, x, false);
        s.gt.at(0, y, x, 0) = 0.0f;
      }
    }

  AdamConfig adam;
  double loss = 1;
  for (int i = 0; i < 500; ++i) loss = net.train_step({s}, adam);
  MESSAGE("final overfit loss: ", loss);
  CHECK(loss < 0.01);
}

TEST_CASE("ablate clears exactly one flag and is an involution") {
  NetworkConfig cfg;
  for (const auto& id : skip_connection_ids()) {
    NetworkConfig dropped = ablate(cfg, id);
    CHECK_FALSE(dropped == cfg);
    // restoring the flag recovers the original
    NetworkConfig restored = dropped;
    if (id == "skip_d_input") restored.skip_d_input = true;
    if (id == "skip_cnext_input") restored.skip_cnext_input = true;
    if (id == "skip_enc_dec_level1") restored.skip_enc_dec_level1 = true;
    if (id == "skip_enc_dec_level2") restored.skip_enc_dec_level2 = true;
    CHECK(restored == cfg);
  }
  CHECK(ablate(cfg, "skip_D_input").skip_d_input == false);
  CHECK(ablate(cfg, "skip_Cnext_input").skip_cnext_input == false);
  CHECK_THROWS_AS(ablate(cfg, "skip_everything"), ConfigError);
}

TEST_CASE("network with all skips removed still builds and trains") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  for (const auto& id : skip_connection_ids()) cfg = ablate(cfg, id);
  Network<float> net(cfg, 21);
  AdamConfig adam;
  const double l0 = net.train_step({random_sample(16, 16, 22)}, adam);
  const double l1 = net.train_step({random_sample(16, 16, 22)}, adam);
  CHECK(l0 > 0);
  CHECK(l1 < l0);  // one step on the same sample reduces the loss
}

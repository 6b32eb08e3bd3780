#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <depthup/eval.hpp>
#include <depthup/synth.hpp>

using namespace depthup;

namespace {

SceneSpec eval_scene(bool moving) {
  SceneSpec s;
  s.width = 80;
  s.height = 48;
  s.rgb_fps = 120;
  s.depth_fps = 30;
  ShapeSpec sh;
  sh.kind = ShapeSpec::Kind::rectangle;
  sh.size_w = 22;
  sh.size_h = 16;
  sh.depth_mm = 1700;
  sh.texture_seed = 9;
  if (moving)
    sh.trajectory.zigzag = ZigzagSpec{4, 130, 230, 0.4, 0.8, 14};
  else
    sh.trajectory.segments = {{0.0, 40, 24, 0, 0}};
  s.shapes = {sh};
  return s;
}

std::vector<Sequence> two_sequences(bool moving) {
  std::vector<Sequence> seqs;
  seqs.push_back(generate_sequence(eval_scene(moving), 5, 1.0, "a"));
  seqs.push_back(generate_sequence(eval_scene(moving), 6, 1.0, "b"));
  return seqs;
}

}  // namespace

TEST_CASE("naive method scores exactly zero on a fully static scene") {
  std::vector<Sequence> seqs = two_sequences(false);
  EvalReport rep = evaluate(seqs, {MethodKind::naive}, nullptr, FlowConfig{}, "b");
  for (const auto& row : rep.rows) {
    CHECK(row.method == "naive");
    CHECK(row.rmse == doctest::Approx(0.0));
    CHECK(row.n_frames == 29);
  }
  CHECK(rep.averages.size() == 1);
  CHECK(rep.averages[0].rmse == doctest::Approx(0.0));
}

TEST_CASE("report averages equal the arithmetic mean of per-sequence rows") {
  std::vector<Sequence> seqs = two_sequences(true);
  EvalReport rep = evaluate(seqs, {MethodKind::naive, MethodKind::flow}, nullptr, FlowConfig{}, "b");
  for (const std::string method : {"naive", "flow"}) {
    double sum = 0;
    int n = 0;
    for (const auto& row : rep.rows)
      if (row.method == method) {
        sum += row.rmse;
        ++n;
      }
    REQUIRE(n == 2);
    const EvalRow* avg = rep.average(method);
    REQUIRE(avg != nullptr);
    CHECK(avg->rmse == doctest::Approx(sum / n).epsilon(1e-12));
  }
  // held-out marking
  const EvalRow* held = rep.find("naive", "b");
  REQUIRE(held != nullptr);
  CHECK(held->held_out);
}

TEST_CASE("evaluate is deterministic: identical inputs give identical reports") {
  std::vector<Sequence> seqs = two_sequences(true);
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 48;
  cfg.input_w = 80;
  Network<float> net(cfg, 3);
  const std::set<MethodKind> methods{MethodKind::naive, MethodKind::flow, MethodKind::network};
  EvalReport r1 = evaluate(seqs, methods, &net, FlowConfig{}, "a", {1, 2});
  EvalReport r2 = evaluate(seqs, methods, &net, FlowConfig{}, "a", {1, 2});
  REQUIRE(r1.rows.size() == r2.rows.size());
  for (size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].rmse == r2.rows[i].rmse);
    CHECK(r1.rows[i].valid_fraction == r2.rows[i].valid_fraction);
  }
  REQUIRE(r1.deltas.size() == 2);
  CHECK(r1.deltas[0].network_rmse == r2.deltas[0].network_rmse);
  CHECK(r1.deltas[1].input_rmse == r2.deltas[1].input_rmse);
}

TEST_CASE("json report carries the documented row keys") {
  std::vector<Sequence> seqs = two_sequences(true);
  EvalReport rep = evaluate(seqs, {MethodKind::naive}, nullptr, FlowConfig{}, "a");
  nlohmann::json j = rep.to_json();
  REQUIRE(j.contains("rows"));
  for (const auto& row : j["rows"]) {
    CHECK(row.contains("method"));
    CHECK(row.contains("sequence"));
    CHECK(row.contains("rmse"));
    CHECK(row.contains("n_frames"));
    CHECK(row.contains("valid_fraction"));
  }
}

TEST_CASE("metric failures carry sequence context") {
  // a sequence whose gt frames are entirely invalid has nothing to score
  SceneSpec s = eval_scene(false);
  s.invalid.dropout_rate = 0.0;
  Sequence seq = generate_sequence(s, 7, 0.2, "dead");
  for (int i = 0; i < seq.depth_count(); ++i) {
    DepthFrame f = seq.depth(i);
    for (auto& v : f.mm) v = 0;
    seq.put_depth(i, std::move(f));
  }
  std::vector<Sequence> seqs;
  seqs.push_back(std::move(seq));
  CHECK_THROWS_WITH_AS(evaluate(seqs, {MethodKind::naive}, nullptr, FlowConfig{}, "dead"),
                       doctest::Contains("dead"), MetricError);
}

TEST_CASE("evaluate requires weights when the network method is requested") {
  std::vector<Sequence> seqs = two_sequences(false);
  CHECK_THROWS_AS(evaluate(seqs, {MethodKind::network}, nullptr, FlowConfig{}, "a"), ConfigError);
}

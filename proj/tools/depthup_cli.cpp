// depthup — temporal depth-map upsampling from a hybrid RGB-D capture.
//
// Subcommands: gen, train, eval, infer, bench, ablate.
// Exit codes: 0 success, 1 configuration error, 2 data/format error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include <depthup/bench.hpp>
#include <depthup/config.hpp>
#include <depthup/eval.hpp>
#include <depthup/model.hpp>
#include <depthup/stream.hpp>
#include <depthup/synth.hpp>
#include <depthup/train.hpp>

using namespace depthup;

namespace {

std::vector<int> parse_deltas(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ConfigError("bad --deltas entry '" + item + "'");
    }
    if (out.back() < 1) throw ConfigError("--deltas entries must be >= 1");
  }
  if (out.empty()) throw ConfigError("--deltas must name at least one delta");
  return out;
}

int run_gen(const std::string& spec_path, const std::string& out_dir, uint64_t seed, double duration) {
  if (duration <= 0) throw ConfigError("gen: --duration must be positive");
  std::vector<NamedScene> scenes =
      spec_path.empty() ? default_dataset_scenes() : read_dataset_spec(spec_path);
  const auto names = generate_dataset(scenes, out_dir, seed, duration);
  double invalid_sum = 0;
  long depth_frames = 0, rgb_frames = 0;
  for (const auto& name : names) {
    const Sequence seq = read_sequence(out_dir + "/" + name);
    rgb_frames += seq.rgb_count();
    for (int i = 0; i < seq.depth_count(); ++i) {
      invalid_sum += invalid_fraction(validity_mask(seq.depth(i)));
      ++depth_frames;
    }
  }
  std::cout << "generated " << names.size() << " sequences in " << out_dir << " (" << rgb_frames
            << " rgb + " << depth_frames << " depth frames, mean invalid fraction "
            << invalid_sum / double(depth_frames) << ")\n";
  return 0;
}

int run_train(const std::string& config_path) {
  const RunConfig rc = read_run_config(config_path);
  if (rc.data.dataset_dir.empty()) throw ConfigError("train: data.dataset_dir is required");
  if (rc.data.held_out.empty()) throw ConfigError("train: data.held_out is required");
  std::vector<Sequence> seqs = read_dataset(rc.data.dataset_dir);
  Network<float> net(rc.network, rc.training.seed);
  std::cout << "training cascades=" << rc.network.cascades << " base_filters=" << rc.network.base_filters
            << " params=" << net.param_count() << " held_out=" << rc.data.held_out << "\n";
  const TrainResult res = train_network(net, seqs, rc.data.held_out, rc.training, &std::cout);
  net.save(rc.weights_out);
  std::cout << "wrote " << rc.weights_out << " (best epoch " << res.best_epoch << ", holdout rmse "
            << res.best_holdout_rmse << ")\n";
  return 0;
}

int run_eval(const std::string& weights, const std::string& data_dir, const std::string& held_out,
             const std::string& deltas_str, const std::string& json_out) {
  Network<float> net = Network<float>::load(weights);
  std::vector<Sequence> seqs = read_dataset(data_dir);
  bool found = false;
  for (const auto& s : seqs) found = found || s.name == held_out;
  if (!found) throw ConfigError("eval: held-out sequence '" + held_out + "' not found in " + data_dir);
  const std::vector<int> deltas = deltas_str.empty() ? std::vector<int>{} : parse_deltas(deltas_str);
  const EvalReport report = evaluate(seqs, {MethodKind::naive, MethodKind::flow, MethodKind::network},
                                     &net, FlowConfig{}, held_out, deltas);
  std::cout << report.to_text();
  if (!json_out.empty()) {
    std::ofstream f(json_out);
    if (!f) throw DataError("cannot write " + json_out);
    f << report.to_json().dump(2) << "\n";
    std::cout << "wrote " << json_out << "\n";
  }
  return 0;
}

int run_infer(const std::string& weights, const std::string& seq_dir, const std::string& out_dir,
              bool half, bool pipelined) {
  Network<float> net = Network<float>::load(weights);
  Sequence seq = read_sequence(seq_dir);
  RuntimeOptions opts;
  opts.half = half;
  opts.pipelined = pipelined;
  const StreamStats stats = stream_infer(net, seq, opts, out_dir);
  std::cout << "wrote " << stats.frames_out << " predicted depth frames to " << out_dir << " ("
            << (pipelined ? "pipelined" : "sequential") << ", " << double(stats.frames_out) / stats.wall_s
            << " fps, checksum " << std::hex << stats.checksum << std::dec << ")\n";
  return 0;
}

int run_bench(const std::string& weights, const std::string& seq_dir, int frames) {
  if (frames < 1) throw ConfigError("bench: --frames must be >= 1");
  Network<float> net = Network<float>::load(weights);
  Sequence seq = read_sequence(seq_dir);
  bool half = false;
  const auto& c = net.config();
  if (c.input_h == seq.height && c.input_w == seq.width)
    half = false;
  else if (c.input_h == seq.height / 2 && c.input_w == seq.width / 2)
    half = true;
  else
    throw ConfigError("bench: weights expect " + std::to_string(c.input_w) + "x" +
                      std::to_string(c.input_h) + ", sequence is " + std::to_string(seq.width) + "x" +
                      std::to_string(seq.height));
  const BenchReport rep = run_bench(net, seq, half, frames);
  std::cout << rep.to_text();
  return 0;
}

int run_ablate(const std::string& config_path) {
  const RunConfig rc = read_run_config(config_path);
  if (rc.data.dataset_dir.empty()) throw ConfigError("ablate: data.dataset_dir is required");
  if (rc.data.held_out.empty()) throw ConfigError("ablate: data.held_out is required");
  std::vector<Sequence> seqs = read_dataset(rc.data.dataset_dir);

  struct Variant {
    std::string label;
    NetworkConfig cfg;
  };
  std::vector<Variant> variants;
  for (int cascades : {2, 3, 4}) {
    NetworkConfig c = rc.network;
    c.cascades = cascades;
    variants.push_back({"cascades_" + std::to_string(cascades), c});
  }
  for (const auto& id : skip_connection_ids()) variants.push_back({"drop_" + id, ablate(rc.network, id)});

  std::cout << std::left << std::setw(26) << "variant" << std::right << std::setw(12) << "params"
            << std::setw(14) << "holdout_rmse" << "\n";
  for (const auto& v : variants) {
    Network<float> net(v.cfg, rc.training.seed);
    std::ostringstream sink;
    const TrainResult res = train_network(net, seqs, rc.data.held_out, rc.training, &sink);
    std::cout << std::left << std::setw(26) << v.label << std::right << std::setw(12)
              << net.param_count() << std::setw(14) << std::fixed << std::setprecision(4)
              << res.best_holdout_rmse << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal depth upsampling: synthetic data, training, evaluation, streaming inference"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, weights, data_dir, held_out, seq_dir, deltas_str, json_out;
  uint64_t seed = 1;
  double duration = 10.0;
  bool half = false, pipelined = false;
  int frames = 100;

  auto* gen = app.add_subcommand("gen", "generate a synthetic RGB-D dataset");
  gen->add_option("--spec", spec_path, "dataset spec JSON (built-in default when omitted)");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--seed", seed, "generation seed");
  gen->add_option("--duration", duration, "seconds per sequence");

  auto* train = app.add_subcommand("train", "train with leave-one-sequence-out");
  train->add_option("--config", config_path, "run config JSON")->required();

  auto* eval = app.add_subcommand("eval", "evaluate naive / flow / network");
  eval->add_option("--weights", weights, "weights file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--held-out", held_out, "held-out sequence name")->required();
  eval->add_option("--deltas", deltas_str, "comma-separated delta sweep, e.g. 1,2,3");
  eval->add_option("--json", json_out, "write the machine-readable report here");

  auto* infer = app.add_subcommand("infer", "stream predicted depth frames");
  infer->add_option("--weights", weights, "weights file")->required();
  infer->add_option("--seq", seq_dir, "sequence directory")->required();
  infer->add_option("--out", out_dir, "output directory")->required();
  infer->add_flag("--half", half, "run the network at half resolution");
  infer->add_flag("--pipelined", pipelined, "two-stage concurrent runtime");

  auto* bench = app.add_subcommand("bench", "latency benchmark, both runtime modes");
  bench->add_option("--weights", weights, "weights file")->required();
  bench->add_option("--seq", seq_dir, "sequence directory")->required();
  bench->add_option("--frames", frames, "frames to time (after 10 warmup)");

  auto* ablate_cmd = app.add_subcommand("ablate", "cascade-count and skip-connection ablations");
  ablate_cmd->add_option("--config", config_path, "run config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen(spec_path, out_dir, seed, duration);
    if (train->parsed()) return run_train(config_path);
    if (eval->parsed()) return run_eval(weights, data_dir, held_out, deltas_str, json_out);
    if (infer->parsed()) return run_infer(weights, seq_dir, out_dir, half, pipelined);
    if (bench->parsed()) return run_bench(weights, seq_dir, frames);
    if (ablate_cmd->parsed()) return run_ablate(config_path);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}

// Command-line front end: synth, train, evaluate, predict, bench.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bit/bit.hpp"

namespace fs = std::filesystem;
using namespace bit;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// Transcript from a file with one class name per line, or from a
// comma-separated list of names.
Transcript parse_transcript(const std::string& arg, const ActionVocabulary& vocab) {
  std::vector<std::string> names;
  if (fs::is_regular_file(arg)) {
    std::ifstream in(arg);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) names.push_back(line);
    }
  } else {
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) names.push_back(item);
    }
  }
  if (names.empty()) throw UsageError("empty transcript");
  Transcript tr;
  for (const auto& n : names) tr.push_back(vocab.id_of(n));
  return tr;
}

std::optional<int> background_id(const std::string& name, const ActionVocabulary& vocab) {
  if (name.empty()) return std::nullopt;
  return vocab.id_of(name);
}

int run_synth(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
  SyntheticSpec spec;
  if (!config.empty()) spec = read_json_file(config).get<SyntheticSpec>();
  if (seed) spec.seed = *seed;
  const Dataset ds = generate_synthetic(spec);
  write_dataset(ds, out);
  std::cout << "wrote " << ds.videos.size() << " videos to " << out << '\n';
  return 0;
}

int run_train(const std::string& config, const std::string& data, const std::string& split,
              const std::string& checkpoint, std::optional<std::uint64_t> seed, std::optional<int> epochs,
              bool transcript_mode) {
  TrainConfig cfg;
  if (!config.empty()) cfg = read_json_file(config).get<TrainConfig>();
  if (!data.empty()) cfg.data_root = data;
  if (!split.empty()) cfg.split = split;
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.epochs = *epochs;
  if (transcript_mode) cfg.model.matching = MatchingMode::transcript;
  if (cfg.data_root.empty()) throw UsageError("train: no dataset root (--data or data_root)");
  if (checkpoint.empty()) throw UsageError("train: --checkpoint output directory required");
  cfg.validate();

  const Dataset train_set = load_dataset(cfg.data_root, cfg.split);
  std::optional<Dataset> validation;
  if (!cfg.validation_split.empty()) validation = load_dataset(cfg.data_root, cfg.validation_split);
  cfg.model.input_dim = static_cast<int>(train_set.videos.front().features.values.cols());
  cfg.model.num_classes = train_set.vocab.size();

  BitNetwork<float> net(cfg.model, cfg.seed);
  fs::create_directories(checkpoint);
  std::ofstream log(fs::path(checkpoint) / "train_log.jsonl");
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " (" << e.seconds << " s)\n";
    return false;
  };
  const TrainResult result = train(net, train_set, validation ? &*validation : nullptr, cfg, hooks);

  CheckpointManifest m;
  m.vocab = train_set.vocab;
  m.train_config_digest = digest(Json(cfg));
  m.epoch = result.best_epoch;
  const EvalReport report = evaluate(net, validation ? *validation : train_set);
  m.metrics = Json(report);
  m.metrics.erase("videos");
  save_checkpoint(checkpoint, net, m);
  std::cout << "saved checkpoint " << checkpoint << " (epoch " << m.epoch << ")\n";
  return 0;
}

int run_evaluate(const std::string& checkpoint, const std::string& data, const std::string& split,
                 const std::string& out, const std::string& background) {
  if (checkpoint.empty() || data.empty()) throw UsageError("evaluate: --checkpoint and --data required");
  const auto ck = load_checkpoint<float>(checkpoint);
  const Dataset ds = load_dataset(data, split.empty() ? "test.split1" : split);
  if (!(ds.vocab == ck.manifest.vocab)) throw UsageError("evaluate: dataset vocabulary differs from checkpoint");
  const EvalReport report = evaluate(*ck.network, ds, background_id(background, ds.vocab));
  const Json j = report;
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    open_out(out + ".json") << j.dump(2) << '\n';
    std::ofstream csv = open_out(out + ".csv");
    write_report_csv(csv, report);
  }
  std::cerr << "acc " << report.acc << " edit " << report.edit << " f1@{10,25,50} " << report.f1[0] << ' '
            << report.f1[1] << ' ' << report.f1[2] << '\n';
  return 0;
}

int run_predict(const std::string& checkpoint, const std::string& features, const std::string& transcript,
                const std::string& out) {
  if (checkpoint.empty() || features.empty()) throw UsageError("predict: --checkpoint and --data required");
  const auto ck = load_checkpoint<float>(checkpoint);
  const VideoFeatures vf = read_features(features, fs::path(features).stem().string());
  const ActionVocabulary& vocab = ck.manifest.vocab;
  std::optional<Transcript> tr;
  if (!transcript.empty()) tr = parse_transcript(transcript, vocab);
  if (ck.network->config().transcript_mode() && !tr) throw UsageError("predict: this model needs --transcript");
  const Matrix<float> x = vf.values;
  const FrameLabels labels = predict(ck.network->infer(x, tr ? &*tr : nullptr));
  std::ostringstream text;
  for (int l : labels) text << vocab.name(l) << '\n';
  if (out.empty()) {
    std::cout << text.str();
  } else {
    open_out(out) << text.str();
  }
  return 0;
}

int run_bench(const std::string& checkpoint, const std::string& config, const std::vector<Index>& lengths,
              int repeats, std::optional<std::uint64_t> seed, const std::string& out) {
  std::unique_ptr<BitNetwork<float>> owned;
  const BitNetwork<float>* net = nullptr;
  LoadedCheckpoint<float> ck;
  if (!checkpoint.empty()) {
    ck = load_checkpoint<float>(checkpoint);
    net = ck.network.get();
  } else {
    BitConfig model;
    if (!config.empty()) model = read_json_file(config).get<TrainConfig>().model;
    owned = std::make_unique<BitNetwork<float>>(model, seed.value_or(0));
    net = owned.get();
  }
  const std::vector<BenchRow> rows = bench(*net, lengths, repeats, seed.value_or(0));
  std::vector<double> x, yn, yr;
  for (const auto& r : rows) {
    x.push_back(static_cast<double>(r.frames));
    yn.push_back(r.network_seconds);
    yr.push_back(r.reference_seconds);
  }
  if (out.empty()) {
    write_bench_csv(std::cout, rows);
  } else {
    std::ofstream csv = open_out(out + ".csv");
    write_bench_csv(csv, rows);
    std::ofstream svg = open_out(out + ".svg");
    write_bench_svg(svg, rows);
  }
  if (rows.size() >= 2) {
    std::cerr << "log-log slope: network " << loglog_slope(x, yn) << ", frame self-attention " << loglog_slope(x, yr)
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level temporal action segmentation"};
  app.require_subcommand(1);

  std::string config, data, split, checkpoint, out, transcript, background;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool use_transcript = false;
  std::vector<Index> lengths{1000, 2000, 4000, 8000};
  int repeats = 3;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--config", config, "SyntheticSpec JSON");
  synth->add_option("--out", out, "output dataset root")->required();
  synth->add_option("--seed", seed);

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  tr->add_option("--config", config, "training config JSON");
  tr->add_option("--data", data, "dataset root");
  tr->add_option("--split", split, "split name");
  tr->add_option("--checkpoint", checkpoint, "output checkpoint directory");
  tr->add_option("--seed", seed);
  tr->add_option("--epochs", epochs);
  tr->add_flag("--transcript", use_transcript, "transcript-conditioned tokens");

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a split");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data, "dataset root")->required();
  ev->add_option("--split", split, "split name (default test.split1)");
  ev->add_option("--out", out, "output prefix for .json and .csv");
  ev->add_option("--background", background, "class name excluded from Edit and F1");

  auto* pr = app.add_subcommand("predict", "label the frames of one features file");
  pr->add_option("--checkpoint", checkpoint)->required();
  pr->add_option("--data", data, "features .npy (D x T)")->required();
  pr->add_option("--transcript", transcript, "file or comma-separated class names");
  pr->add_option("--out", out, "labels file");

  auto* be = app.add_subcommand("bench", "time the forward pass against video length");
  be->add_option("--checkpoint", checkpoint);
  be->add_option("--config", config, "training config JSON (model section) when no checkpoint");
  be->add_option("--lengths", lengths)->delimiter(',');
  be->add_option("--repeats", repeats);
  be->add_option("--seed", seed);
  be->add_option("--out", out, "output prefix for .csv and .svg");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(config, out, seed);
    if (*tr) return run_train(config, data, split, checkpoint, seed, epochs, use_transcript);
    if (*ev) return run_evaluate(checkpoint, data, split, out, background);
    if (*pr) return run_predict(checkpoint, data, transcript, out);
    if (*be) return run_bench(checkpoint, config, lengths, repeats, seed, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

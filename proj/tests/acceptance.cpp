// Acceptance gate. Runs every criterion and prints one line each:
//   PASS|FAIL|SKIP [n] name: details
// Exit status is nonzero when any criterion fails. Pass criterion numbers as
// arguments to run a subset.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "support.hpp"

namespace {

using namespace bit;
using namespace bit::testing;
using Clock = std::chrono::steady_clock;

struct Outcome {
  enum Kind { pass, fail, skip } kind = fail;
  std::string detail;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// 1. Matcher versus exhaustive enumeration on 200 random problems.
Outcome matcher_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> m_dist(1, 6), cls(0, 3);
  int mismatches = 0, grouped_mismatches = 0, grouped_run = 0;
  for (int i = 0; i < 200; ++i) {
    const int M = m_dist(rng);
    const int N = std::uniform_int_distribution<int>(1, std::min(5, M))(rng);
    const Matrix<double> c = random_matrix(rng, N, M, -2, 1);
    if (assignment_cost(c, match_one_to_one(c).assignment) != brute_force_assignment(c)) ++mismatches;
    std::vector<int> classes(static_cast<std::size_t>(N));
    for (auto& a : classes) a = cls(rng);
    if (static_cast<int>(std::set<int>(classes.begin(), classes.end()).size()) > M) continue;
    ++grouped_run;
    if (assignment_cost(c, match_one_to_many(c, classes).assignment) != brute_force_grouped(c, classes)) {
      ++grouped_mismatches;
    }
  }
  const double secs = since(t0);
  const bool ok = mismatches == 0 && grouped_mismatches == 0 && secs < 5.0;
  return {ok ? Outcome::pass : Outcome::fail,
          "one-to-one mismatches " + std::to_string(mismatches) + "/200, one-to-many mismatches " +
              std::to_string(grouped_mismatches) + "/" + std::to_string(grouped_run) + ", " + fmt(secs, 3) +
              " s (limit 5 s)"};
}

// 2. Finite-difference gradient check of the total loss in double precision.
Outcome gradient() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  const FrameLabels y{0, 0, 0, 1, 1, 2, 2, 2};
  double worst = 0;
  std::string where;
  std::size_t checked = 0;
  for (bool down : {false, true}) {
    BitNetwork<double> net(tiny_config(down), 202);
    const GradCheck r = gradient_check(net, random_matrix(rng, 8, 5), y);
    checked += r.checked;
    if (r.worst > worst) {
      worst = r.worst;
      where = r.where + (down ? " (downsampling)" : "");
    }
  }
  const double secs = since(t0);
  const bool ok = worst <= 1e-3 && secs < 120.0;
  return {ok ? Outcome::pass : Outcome::fail,
          "worst relative error " + fmt(worst, 3) + " at " + where + " over " + std::to_string(checked) +
              " scalars (limit 1e-3), " + fmt(secs, 3) + " s (limit 120 s)"};
}

// 3. Edit and F1 against standalone oracles, plus hand cases.
Outcome metric_oracles() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<Index> len(1, 80);
  std::uniform_int_distribution<int> runs(1, 15);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Index T = len(rng);
    const auto a = labels_to_segments(random_labels(rng, T, 4, runs(rng)));
    const auto b = labels_to_segments(random_labels(rng, T, 4, runs(rng)));
    worst = std::max(worst, std::abs(edit_score(a, b) - oracle_edit(a, b)));
    for (double tau : kOverlaps) worst = std::max(worst, std::abs(f1_at(a, b, tau) - oracle_f1(a, b, tau)));
  }
  const SegmentAnnotation abc{{0, 0, 3}, {1, 3, 6}, {2, 6, 9}}, ab{{0, 0, 4}, {1, 4, 9}};
  const EvalReport same = aggregate({evaluate_video("v", segments_to_labels(abc), segments_to_labels(abc))});
  bool hand = same.acc == 100.0 && same.edit == 100.0;
  for (double f : same.f1) hand = hand && f == 100.0;
  const double e = edit_score(ab, abc);
  hand = hand && std::abs(e - 200.0 / 3.0) < 1e-9;
  const bool ok = worst <= 1e-9 && hand;
  return {ok ? Outcome::pass : Outcome::fail, "max deviation from oracles " + fmt(worst, 3) +
                                                  " (limit 1e-9); identical 100/100/100 " +
                                                  (same.acc == 100.0 ? "ok" : "FAILED") + "; [A,B] vs [A,B,C] Edit " +
                                                  fmt(e, 6)};
}

Matrix<double> permute_rows(const Matrix<double>& m, const std::vector<Index>& perm) {
  Matrix<double> out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

// 4. Stochasticity, attention upsampling, token-permutation equivariance and
// the absence of frames x frames intermediates.
Outcome structure() {
  std::mt19937_64 rng(404);
  std::ostringstream detail;
  bool ok = true;

  // Stochasticity on random inputs, with and without downsampling.
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    BitConfig c;
    c.input_dim = 12;
    c.num_classes = 5;
    c.num_tokens = 7;
    c.hidden = 16;
    c.conv_layers = 4;
    c.num_blocks = 3;
    c.downsample = {false, trial % 2 == 1, trial % 2 == 1};
    BitNetwork<double> net(c, static_cast<std::uint64_t>(trial));
    const BlockOutputs<double> out = net.infer(random_matrix(rng, 50 + 13 * trial, 12, -4, 4));
    for (const auto& p : out.frame_probs) worst = std::max(worst, (p.rowwise().sum().array() - 1).abs().maxCoeff());
    for (const auto& p : out.token_probs) worst = std::max(worst, (p.rowwise().sum().array() - 1).abs().maxCoeff());
    for (const auto& p : out.token_attention) worst = std::max(worst, (p.rowwise().sum().array() - 1).abs().maxCoeff());
    for (const auto& p : out.frame_attention) worst = std::max(worst, (p.colwise().sum().array() - 1).abs().maxCoeff());
  }
  ok = ok && worst <= 1e-5;
  detail << "stochasticity drift " << fmt(worst, 3) << " (limit 1e-5)";

  // Attention upsampling keeps the declared normalisation.
  double up_worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const SegmentMap seg = segment_map_from_labels(random_labels(rng, 60, 4, 1 + trial % 12));
    const Matrix<double> logits = random_matrix(rng, 6, seg.num_segments(), -4, 4);
    const Matrix<double> rows = ad::softmax_rows_value(logits);
    const Matrix<double> cols = ad::softmax_rows_value(Matrix<double>(logits.transpose())).transpose();
    const Matrix<double> ur = upsample_attention(rows, seg, AttentionKind::row_stochastic);
    const Matrix<double> uc = upsample_attention(cols, seg, AttentionKind::column_stochastic);
    up_worst = std::max(up_worst, (ur.rowwise().sum().array() - 1).abs().maxCoeff());
    up_worst = std::max(up_worst, (uc.colwise().sum().array() - 1).abs().maxCoeff());
  }
  ok = ok && up_worst <= 1e-6;
  detail << "; upsampling drift " << fmt(up_worst, 3) << " (limit 1e-6)";

  // Token permutation equivariance of both transformers, compared bitwise.
  {
    const Index H = 16;
    TransformerConfig tc;
    tc.dropout = 0;
    ad::ParameterStore<double> store;
    Rng init(9);
    TokenTransformer<double> input(store, "in", H, 5, 2, true, tc, init);
    TokenTransformer<double> update(store, "up", H, 5, 1, false, tc, init);
    const Matrix<double> frames = random_matrix(rng, 40, H), fpos = sinusoidal_encoding<double>(40, H);
    const Matrix<double> tok = random_matrix(rng, 9, H), pos = random_matrix(rng, 9, H);
    std::vector<Index> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ad::Tape<double> t(false);
    const auto run = [&](const TokenTransformer<double>& tf, const Matrix<double>& x, const Matrix<double>& p, bool cross) {
      return tf(t, t.constant(x), t.constant(p), cross ? t.constant(frames) : ad::Var<double>{},
                cross ? t.constant(fpos) : ad::Var<double>{}, RunMode{})
          .combined.value();
    };
    const Matrix<double> a_in = run(input, tok, pos, true), b_in = run(input, permute_rows(tok, perm), permute_rows(pos, perm), true);
    const Matrix<double> a_up = run(update, tok, pos, false), b_up = run(update, permute_rows(tok, perm), permute_rows(pos, perm), false);
    const bool eq_in = permute_rows(a_in, perm) == b_in, eq_up = permute_rows(a_up, perm) == b_up;
    const double dev = std::max((permute_rows(a_in, perm) - b_in).cwiseAbs().maxCoeff(),
                                (permute_rows(a_up, perm) - b_up).cwiseAbs().maxCoeff());
    ok = ok && eq_in && eq_up;
    detail << "; permutation equivariance " << (eq_in && eq_up ? "bitwise" : "NOT bitwise, max deviation " + fmt(dev, 3));
  }

  // No T x T node for T = 8192 with the default architecture at small width.
  {
    BitConfig c;
    c.input_dim = 16;
    c.num_classes = 6;
    c.num_tokens = 60;
    c.hidden = 16;
    c.conv_layers = 10;
    BitNetwork<float> net(c, 1);
    const Index T = 8192;
    std::vector<ad::ShapeRecord> probe;
    ad::Tape<float> t(false);
    t.set_probe(&probe);
    (void)net.forward(t, random_matrix(rng, T, 16).cast<float>(), nullptr, RunMode{});
    std::size_t square = 0;
    Index largest = 0;
    for (const auto& r : probe) {
      if (r.rows >= T && r.cols >= T) ++square;
      largest = std::max(largest, std::min(r.rows, r.cols));
    }
    ok = ok && square == 0;
    detail << "; T=8192: " << probe.size() << " nodes, " << square << " with both sides >= T (largest short side "
           << largest << ")";
  }
  return {ok ? Outcome::pass : Outcome::fail, detail.str()};
}

struct RunToBars {
  int epochs = -1;  // first epoch meeting every bar, -1 if never
  double seconds = 0;
  EvalReport last;
};

RunToBars train_to_bars(const Dataset& ds, BitConfig model, int budget, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model = model;
  cfg.epochs = budget;
  cfg.seed = seed;
  BitNetwork<float> net(cfg.model, seed);
  RunToBars r;
  const auto t0 = Clock::now();
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) {
    r.last = evaluate(net, ds);
    const bool met = r.last.acc >= 99.0 && r.last.f1[2] >= 95.0 && r.last.edit >= 95.0;
    if (met) r.epochs = e.epoch;
    return met;
  };
  train(net, ds, nullptr, cfg, hooks);
  r.seconds = since(t0);
  return r;
}

std::string describe(const RunToBars& r) {
  std::ostringstream s;
  s << (r.epochs > 0 ? "met at epoch " + std::to_string(r.epochs) : std::string("not met")) << " (Acc "
    << fmt(r.last.acc, 5) << ", F1@50 " << fmt(r.last.f1[2], 5) << ", Edit " << fmt(r.last.edit, 5) << ", "
    << fmt(r.seconds, 3) << " s)";
  return s.str();
}

// 5. Synthetic end-to-end training.
Outcome synthetic() {
  SyntheticSpec spec;  // 20 videos, 6 classes, 5-8 segments of 40-50 frames
  const Dataset ds = generate_synthetic(spec);
  Index tmin = 1 << 30, tmax = 0;
  for (const auto& v : ds.videos) {
    tmin = std::min(tmin, static_cast<Index>(v.labels.size()));
    tmax = std::max(tmax, static_cast<Index>(v.labels.size()));
  }
  BitConfig model;
  model.input_dim = spec.feature_dim;
  model.num_classes = spec.num_classes;
  model.num_tokens = 20;
  const int budget = 200;
  const RunToBars plain = train_to_bars(ds, model, budget, 1);
  model.matching = MatchingMode::transcript;
  const RunToBars cond = train_to_bars(ds, model, budget / 2, 1);
  const double total = plain.seconds + cond.seconds;
  const bool ok = plain.epochs > 0 && cond.epochs > 0 && cond.epochs <= budget / 2 && total <= 900.0;
  return {ok ? Outcome::pass : Outcome::fail,
          "T in [" + std::to_string(tmin) + "," + std::to_string(tmax) + "]; one-to-one " + describe(plain) +
              "; transcript " + describe(cond) + " (limit " + std::to_string(budget / 2) + " epochs); total " +
              fmt(total, 4) + " s (limit 900 s)"};
}

// 6. Forward time against T compared with full frame self-attention.
Outcome efficiency() {
  BitConfig c;  // default architecture, 60 tokens
  c.input_dim = 2048;
  c.num_classes = 48;
  c.num_tokens = 60;
  BitNetwork<float> net(c, 6);
  const std::vector<Index> lengths{1000, 2000, 4000, 8000};
  const std::vector<BenchRow> rows = bench(net, lengths, 5, 6);
  std::vector<double> x, yn, yr;
  std::ostringstream times;
  for (const auto& r : rows) {
    x.push_back(static_cast<double>(r.frames));
    yn.push_back(r.network_seconds);
    yr.push_back(r.reference_seconds);
    times << (times.tellp() > 0 ? ", " : "") << r.frames << ": " << fmt(r.network_seconds, 3) << "/"
          << fmt(r.reference_seconds, 3) << " s";
  }
  const double sn = loglog_slope(x, yn), sr = loglog_slope(x, yr);
  const bool ok = sn <= 1.3 && sr >= 1.7;
  return {ok ? Outcome::pass : Outcome::fail, "network slope " + fmt(sn, 3) + " (limit <= 1.3), frame self-attention slope " +
                                                  fmt(sr, 3) + " (limit >= 1.7); network/reference " + times.str()};
}

// 7. Optional real-data check; needs the public GTEA release under
// $BIT_GTEA_ROOT (mapping.txt, groundTruth/, features/, splits/).
Outcome gtea() {
  const char* root = std::getenv("BIT_GTEA_ROOT");
  if (root == nullptr || !std::filesystem::exists(std::filesystem::path(root) / "mapping.txt")) {
    return {Outcome::skip, "GTEA features not present (set BIT_GTEA_ROOT to run)"};
  }
  double f1 = 0, acc = 0;
  for (int split = 1; split <= 4; ++split) {
    const Dataset tr = load_dataset(root, "train.split" + std::to_string(split));
    const Dataset te = load_dataset(root, "test.split" + std::to_string(split));
    TrainConfig cfg;
    cfg.model.input_dim = static_cast<int>(tr.videos.front().features.values.cols());
    cfg.model.num_classes = tr.vocab.size();
    cfg.model.num_tokens = 60;
    BitNetwork<float> net(cfg.model, cfg.seed);
    train(net, tr, nullptr, cfg);
    const EvalReport r = evaluate(net, te);
    f1 += r.f1[2] / 4;
    acc += r.acc / 4;
  }
  const bool ok = f1 >= 75.0 && acc >= 75.0;
  return {ok ? Outcome::pass : Outcome::fail,
          "4-fold F1@50 " + fmt(f1, 4) + " (limit 75), Acc " + fmt(acc, 4) + " (limit 75)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"matcher oracle", matcher_oracle},
      {"gradient check", gradient},
      {"metric oracles", metric_oracles},
      {"structural invariants", structure},
      {"synthetic end-to-end", synthetic},
      {"efficiency slope", efficiency},
      {"GTEA cross-validation (optional)", gtea},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && only.count(n) == 0) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::skip ? "SKIP" : "FAIL";
    std::cout << tag << " [" << n << "] " << criteria[i].first << ": " << o.detail << std::endl;
    failures += o.kind == Outcome::fail;
  }
  return failures == 0 ? 0 : 1;
}

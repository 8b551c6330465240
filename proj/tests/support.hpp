// Independent reference implementations used as test oracles, plus small
// generators shared by the unit suites and the acceptance binary.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "bit/bit.hpp"

namespace bit::testing {

// Minimum total cost over every injective row -> column map, by enumerating
// ordered column choices directly.
inline double brute_force_assignment(const Matrix<double>& cost) {
  const Index N = cost.rows(), M = cost.cols();
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> used(static_cast<std::size_t>(M), false);
  std::function<void(Index, double)> rec = [&](Index row, double acc) {
    if (row == N) {
      best = std::min(best, acc);
      return;
    }
    for (Index m = 0; m < M; ++m) {
      if (used[static_cast<std::size_t>(m)]) continue;
      used[static_cast<std::size_t>(m)] = true;
      rec(row + 1, acc + cost(row, m));
      used[static_cast<std::size_t>(m)] = false;
    }
  };
  rec(0, 0.0);
  return best;
}

// Group-level enumeration for class-pure matching: segments of one class
// share a token, distinct classes use distinct tokens. Each candidate is
// scored per segment in row order, like assignment_cost.
inline double brute_force_grouped(const Matrix<double>& cost, const std::vector<int>& classes) {
  std::vector<int> distinct(classes.begin(), classes.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const auto G = distinct.size();
  const Index M = cost.cols();
  double best = std::numeric_limits<double>::infinity();
  std::vector<Index> token_of(G);
  std::vector<bool> used(static_cast<std::size_t>(M), false);
  std::function<void(std::size_t)> rec = [&](std::size_t g) {
    if (g == G) {
      double acc = 0;
      for (std::size_t n = 0; n < classes.size(); ++n) {
        const auto k = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), classes[n]) - distinct.begin());
        acc += cost(static_cast<Index>(n), token_of[k]);
      }
      best = std::min(best, acc);
      return;
    }
    for (Index m = 0; m < M; ++m) {
      if (used[static_cast<std::size_t>(m)]) continue;
      used[static_cast<std::size_t>(m)] = true;
      token_of[g] = m;
      rec(g + 1);
      used[static_cast<std::size_t>(m)] = false;
    }
  };
  rec(0);
  return best;
}

// Full-table Levenshtein distance.
inline std::size_t dp_levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    }
  }
  return d[a.size()][b.size()];
}

inline double oracle_edit(const SegmentAnnotation& pred, const SegmentAnnotation& gt) {
  std::vector<int> p, g;
  for (const auto& s : pred) p.push_back(s.label);
  for (const auto& s : gt) g.push_back(s.label);
  const double longest = static_cast<double>(std::max(p.size(), g.size()));
  if (longest == 0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(dp_levenshtein(p, g)) / longest);
}

// IoU from explicit frame sets.
inline double set_iou(const Segment& a, const Segment& b) {
  std::set<Index> fa, fb, uni;
  for (Index t = a.start; t < a.end; ++t) fa.insert(t);
  for (Index t = b.start; t < b.end; ++t) fb.insert(t);
  std::size_t inter = 0;
  for (Index t : fa) inter += fb.count(t);
  uni.insert(fa.begin(), fa.end());
  uni.insert(fb.begin(), fb.end());
  return static_cast<double>(inter) / static_cast<double>(uni.size());
}

// F1 by an explicit IoU table: predictions in order, each claims the best
// unclaimed same-class ground-truth segment; first maximum wins ties.
inline double oracle_f1(const SegmentAnnotation& pred, const SegmentAnnotation& gt, double tau) {
  std::vector<std::vector<double>> iou(pred.size(), std::vector<double>(gt.size(), -1.0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (pred[i].label == gt[j].label) iou[i][j] = set_iou(pred[i], gt[j]);
    }
  }
  std::vector<bool> claimed(gt.size(), false);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double best = -1.0;
    std::size_t arg = gt.size();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (!claimed[j] && iou[i][j] >= 0 && iou[i][j] > best) {
        best = iou[i][j];
        arg = j;
      }
    }
    if (arg != gt.size() && best >= tau) {
      tp += 1;
      claimed[arg] = true;
    } else {
      fp += 1;
    }
  }
  const double fn = static_cast<double>(std::count(claimed.begin(), claimed.end(), false));
  const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return prec + rec > 0 ? 100.0 * 2 * prec * rec / (prec + rec) : 0.0;
}

// Random label vector of length T with roughly `runs` runs over A classes.
inline FrameLabels random_labels(std::mt19937_64& rng, Index T, int A, int runs) {
  std::uniform_int_distribution<int> cls(0, A - 1);
  std::uniform_int_distribution<Index> cut(1, std::max<Index>(1, T - 1));
  std::set<Index> cuts;
  for (int i = 0; i + 1 < runs && T > 1; ++i) cuts.insert(cut(rng));
  FrameLabels y(static_cast<std::size_t>(T));
  Index start = 0;
  int c = cls(rng);
  cuts.insert(T);
  for (Index end : cuts) {
    for (Index t = start; t < end; ++t) y[static_cast<std::size_t>(t)] = c;
    start = end;
    c = cls(rng);
  }
  return y;
}

inline Matrix<double> random_matrix(std::mt19937_64& rng, Index rows, Index cols, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Tiny double-precision configuration used by gradient and structure checks.
inline BitConfig tiny_config(bool downsample) {
  BitConfig c;
  c.input_dim = 5;
  c.num_classes = 3;
  c.num_tokens = 3;
  c.hidden = 8;
  c.num_blocks = 2;
  c.conv_layers = 3;
  c.conv_dropout = 0;
  c.transformer.dropout = 0;
  c.transformer.heads = 2;
  if (downsample) c.downsample = {false, true};
  return c;
}

struct GradCheck {
  double worst = 0;
  std::string where;
  std::size_t checked = 0;
};

// Compares analytic gradients of total_loss with central differences for
// every scalar parameter. The matching is computed once and held fixed.
// Relative error: |a - n| / max(|a|, |n|, floor).
inline GradCheck gradient_check(BitNetwork<double>& net, const Matrix<double>& x, const FrameLabels& y,
                                double h = 1e-6, double floor = 1e-5) {
  const SegmentAnnotation segs = labels_to_segments(y);
  const LossConfig lc;
  const Transcript tr = transcript_of(y);
  const Transcript* trp = net.config().transcript_mode() ? &tr : nullptr;
  Matching fixed;
  {
    const BlockOutputs<double> out = net.infer(x, trp);
    MatchingConfig mc{net.config().matching, 1.0};
    fixed = compute_matching(segs, out, mc);
  }
  const auto loss = [&](bool grad) {
    ad::Tape<double> t(grad);
    const ForwardVars<double> f = net.forward(t, x, trp, RunMode{});
    const LossTerms<double> l = total_loss(t, f, y, segs, fixed, lc);
    if (grad) {
      net.parameters().zero_grad();
      t.backward(l.total);
    }
    return l.total.value()(0, 0);
  };
  loss(true);
  GradCheck r;
  for (auto& p : net.parameters().parameters()) {
    const Matrix<double> g = p.grad;
    for (Index i = 0; i < p.value.size(); ++i) {
      const double old = p.value.data()[i];
      p.value.data()[i] = old + h;
      const double lp = loss(false);
      p.value.data()[i] = old - h;
      const double lm = loss(false);
      p.value.data()[i] = old;
      const double num = (lp - lm) / (2 * h), a = g.data()[i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      ++r.checked;
      if (rel > r.worst) {
        r.worst = rel;
        r.where = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// Small synthetic problem for fast end-to-end checks.
inline SyntheticSpec small_spec(int videos = 4, std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.num_videos = videos;
  s.num_classes = 4;
  s.min_segments = 3;
  s.max_segments = 4;
  s.min_segment_length = 8;
  s.max_segment_length = 12;
  s.feature_dim = 8;
  s.seed = seed;
  return s;
}

inline BitConfig small_model(const Dataset& ds, int tokens = 8) {
  BitConfig c;
  c.input_dim = static_cast<int>(ds.videos.front().features.values.cols());
  c.num_classes = ds.vocab.size();
  c.num_tokens = tokens;
  c.hidden = 16;
  c.conv_layers = 4;
  c.num_blocks = 3;
  return c;
}

}  // namespace bit::testing

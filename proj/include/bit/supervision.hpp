// Token/segment matching and the four training losses.
#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "bit/data.hpp"
#include "bit/network.hpp"

namespace bit {

class CapacityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MatchingConfig {
  MatchingMode mode = MatchingMode::one_to_one;
  double beta = 1.0;
};

struct LossConfig {
  double smoothing_weight = 0.15;
  double truncation = 4.0;
  double log_floor = 1e-8;
};

struct Matching {
  std::vector<Index> assignment;  // token index for every segment
  std::vector<Index> null_set;    // tokens assigned to no segment, ascending

  static Matching from_assignment(std::vector<Index> assignment, Index num_tokens) {
    Matching m;
    std::vector<bool> used(static_cast<std::size_t>(num_tokens), false);
    for (Index tok : assignment) used.at(static_cast<std::size_t>(tok)) = true;
    for (Index tok = 0; tok < num_tokens; ++tok) {
      if (!used[static_cast<std::size_t>(tok)]) m.null_set.push_back(tok);
    }
    m.assignment = std::move(assignment);
    return m;
  }
};

// S(n, m) = -P(m, a_n) - beta * softIoU(n, m), with
// softIoU = sum_{t in seg} L(m,t) / sum_t min(L(m,t) + 1[t in seg], 1).
template <typename S>
Matrix<double> match_cost(const SegmentAnnotation& segments, const Matrix<S>& token_probs,
                          const Matrix<S>& frame_attention, double beta) {
  const auto N = static_cast<Index>(segments.size());
  const Index M = token_probs.rows();
  const Index T = frame_attention.cols();
  Matrix<double> cost(N, M);
  for (Index m = 0; m < M; ++m) {
    const Eigen::Matrix<double, 1, Eigen::Dynamic> row = frame_attention.row(m).template cast<double>();
    // Outside the segment the min() term is just the attention value.
    const double outside_total = row.sum();
    for (Index n = 0; n < N; ++n) {
      const Segment& s = segments[static_cast<std::size_t>(n)];
      if (s.end > T) throw std::invalid_argument("match_cost: segment beyond attention length");
      const double inside = row.segment(s.start, s.length()).sum();
      const double denom = (outside_total - inside) + static_cast<double>(s.length());
      cost(n, m) = -static_cast<double>(token_probs(m, s.label)) - beta * inside / denom;
    }
  }
  return cost;
}

// Minimum-cost assignment of every row to a distinct column (rows <= cols),
// via shortest augmenting paths with dual potentials. Returns the column of
// each row.
inline std::vector<Index> hungarian(const Matrix<double>& cost) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  if (n > m) throw CapacityError("hungarian: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(m + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[ju];
        if (cur < minv[ju]) {
          minv[ju] = cur;
          way[ju] = j0;
        }
        if (minv[ju] < delta) {
          delta = minv[ju];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) {
          u[static_cast<std::size_t>(p[ju])] += delta;
          v[ju] -= delta;
        } else {
          minv[ju] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return assignment;
}

inline double assignment_cost(const Matrix<double>& cost, const std::vector<Index>& assignment) {
  double total = 0;
  for (std::size_t n = 0; n < assignment.size(); ++n) total += cost(static_cast<Index>(n), assignment[n]);
  return total;
}

inline Matching match_one_to_one(const Matrix<double>& cost) {
  if (cost.rows() > cost.cols()) {
    throw CapacityError("one-to-one matching: " + std::to_string(cost.rows()) + " segments exceed " +
                        std::to_string(cost.cols()) + " tokens");
  }
  return Matching::from_assignment(hungarian(cost), cost.cols());
}

// Segments of one class share a token: group costs are summed per class and
// the groups are assigned to distinct tokens with the Hungarian solver.
inline Matching match_one_to_many(const Matrix<double>& cost, const std::vector<int>& classes) {
  if (static_cast<Index>(classes.size()) != cost.rows()) throw std::invalid_argument("one-to-many: class count mismatch");
  std::map<int, std::vector<Index>> groups;
  for (std::size_t n = 0; n < classes.size(); ++n) groups[classes[n]].push_back(static_cast<Index>(n));
  const auto G = static_cast<Index>(groups.size());
  if (G > cost.cols()) {
    throw CapacityError("one-to-many matching: " + std::to_string(G) + " distinct classes exceed " +
                        std::to_string(cost.cols()) + " tokens");
  }
  Matrix<double> group_cost = Matrix<double>::Zero(G, cost.cols());
  Index g = 0;
  for (const auto& [cls, members] : groups) {
    for (Index n : members) group_cost.row(g) += cost.row(n);
    ++g;
  }
  const std::vector<Index> group_token = hungarian(group_cost);
  std::vector<Index> assignment(classes.size());
  g = 0;
  for (const auto& [cls, members] : groups) {
    for (Index n : members) assignment[static_cast<std::size_t>(n)] = group_token[static_cast<std::size_t>(g)];
    ++g;
  }
  return Matching::from_assignment(std::move(assignment), cost.cols());
}

inline Matching match_transcript(Index num_segments, Index num_tokens) {
  if (num_segments != num_tokens) throw UsageError("transcript matching: token count must equal segment count");
  std::vector<Index> a(static_cast<std::size_t>(num_segments));
  for (Index n = 0; n < num_segments; ++n) a[static_cast<std::size_t>(n)] = n;
  return Matching::from_assignment(std::move(a), num_tokens);
}

// Computes the matching for one video from the last block's outputs.
template <typename S>
Matching compute_matching(const SegmentAnnotation& segments, const BlockOutputs<S>& out, const MatchingConfig& cfg) {
  if (cfg.mode == MatchingMode::transcript) {
    return match_transcript(static_cast<Index>(segments.size()), out.num_tokens());
  }
  const Matrix<double> cost = match_cost(segments, out.token_probs.back(), out.frame_attention.back(), cfg.beta);
  if (cfg.mode == MatchingMode::one_to_one) return match_one_to_one(cost);
  std::vector<int> classes;
  for (const auto& s : segments) classes.push_back(s.label);
  return match_one_to_many(cost, classes);
}

// sum_b (1/T) sum_t -log P^f_b(t, y_t)
template <typename S>
ad::Var<S> frame_loss(const std::vector<ad::Var<S>>& frame_probs, const FrameLabels& labels, const LossConfig& cfg) {
  std::vector<ad::Var<S>> terms;
  for (const auto& p : frame_probs) {
    if (p.rows() != static_cast<Index>(labels.size())) throw std::invalid_argument("frame_loss: length mismatch");
    const double w = 1.0 / static_cast<double>(labels.size());
    std::vector<ad::Pick> picks;
    picks.reserve(labels.size());
    for (std::size_t t = 0; t < labels.size(); ++t) picks.push_back({static_cast<Index>(t), labels[t], w});
    terms.push_back(ad::neg_log_picks(p, std::move(picks), static_cast<S>(cfg.log_floor)));
  }
  return ad::sum_scalars(terms);
}

// sum_b (1/M) [ -sum_n log P^a_b(pi_n, a_n) - sum_{m in null} log P^a_b(m, null) ]
template <typename S>
ad::Var<S> token_loss(const std::vector<ad::Var<S>>& token_probs, const Matching& matching,
                      const SegmentAnnotation& segments, const LossConfig& cfg) {
  std::vector<ad::Var<S>> terms;
  for (const auto& p : token_probs) {
    const Index null_id = p.cols() - 1;
    const double w = 1.0 / static_cast<double>(p.rows());
    std::vector<ad::Pick> picks;
    for (std::size_t n = 0; n < segments.size(); ++n) picks.push_back({matching.assignment[n], segments[n].label, w});
    for (Index m : matching.null_set) picks.push_back({m, null_id, w});
    terms.push_back(ad::neg_log_picks(p, std::move(picks), static_cast<S>(cfg.log_floor)));
  }
  return ad::sum_scalars(terms);
}

// sum_{b>1} (1/T) sum_n sum_{t in seg n} -(log La_b(pi_n, t) + log Lf_b(pi_n, t)).
// Zero when there are no update blocks.
template <typename S>
ad::Var<S> cross_attention_loss(ad::Tape<S>& t, const std::vector<ad::Var<S>>& token_attention,
                                const std::vector<ad::Var<S>>& frame_attention, const Matching& matching,
                                const SegmentAnnotation& segments, const LossConfig& cfg) {
  if (token_attention.size() != frame_attention.size()) throw std::invalid_argument("cross_attention_loss: map count mismatch");
  if (token_attention.empty()) return t.constant(Matrix<S>::Zero(1, 1));
  std::vector<ad::Var<S>> terms;
  for (std::size_t b = 0; b < token_attention.size(); ++b) {
    const Index T = token_attention[b].cols();
    const double w = 1.0 / static_cast<double>(T);
    std::vector<ad::Pick> picks;
    for (std::size_t n = 0; n < segments.size(); ++n) {
      for (Index f = segments[n].start; f < segments[n].end; ++f) picks.push_back({matching.assignment[n], f, w});
    }
    terms.push_back(ad::neg_log_picks(token_attention[b], picks, static_cast<S>(cfg.log_floor)));
    terms.push_back(ad::neg_log_picks(frame_attention[b], std::move(picks), static_cast<S>(cfg.log_floor)));
  }
  return ad::sum_scalars(terms);
}

// h(Q): truncated squared log-differences between adjacent frames.
// time_in_rows selects the temporal axis (rows for T x A, columns for M x T).
template <typename S>
ad::Var<S> smoothing_term(ad::Var<S> q, bool time_in_rows, const LossConfig& cfg) {
  ad::Var<S> x = time_in_rows ? q : ad::transpose(q);
  return ad::truncated_smoothing(x, static_cast<S>(cfg.truncation), static_cast<S>(cfg.log_floor));
}

// w * sum_b h(P^f_b) + sum_{b>1} [h(La_b) + h(Lf_b)]
template <typename S>
ad::Var<S> smoothing_loss(const std::vector<ad::Var<S>>& frame_probs, const std::vector<ad::Var<S>>& token_attention,
                          const std::vector<ad::Var<S>>& frame_attention, const LossConfig& cfg) {
  std::vector<ad::Var<S>> frame_terms, terms;
  for (const auto& p : frame_probs) frame_terms.push_back(smoothing_term(p, true, cfg));
  terms.push_back(ad::scale(ad::sum_scalars(frame_terms), static_cast<S>(cfg.smoothing_weight)));
  for (const auto& a : token_attention) terms.push_back(smoothing_term(a, false, cfg));
  for (const auto& a : frame_attention) terms.push_back(smoothing_term(a, false, cfg));
  return ad::sum_scalars(terms);
}

template <typename S>
struct LossTerms {
  ad::Var<S> frame;
  ad::Var<S> token;
  ad::Var<S> cross_attention;
  ad::Var<S> smoothing;
  ad::Var<S> total;
};

template <typename S>
LossTerms<S> total_loss(ad::Tape<S>& t, const ForwardVars<S>& fwd, const FrameLabels& labels,
                        const SegmentAnnotation& segments, const Matching& matching, const LossConfig& cfg) {
  LossTerms<S> l;
  l.frame = frame_loss(fwd.frame_probs, labels, cfg);
  l.token = token_loss(fwd.token_probs, matching, segments, cfg);
  l.cross_attention = cross_attention_loss(t, fwd.token_attention, fwd.frame_attention, matching, segments, cfg);
  l.smoothing = smoothing_loss(fwd.frame_probs, fwd.token_attention, fwd.frame_attention, cfg);
  l.total = ad::sum_scalars<S>({l.token, l.frame, l.cross_attention, l.smoothing});
  return l;
}

}  // namespace bit

// Framewise accuracy, segmental Edit score and segmental F1@tau.
#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bit/data.hpp"

namespace bit {

inline constexpr std::array<double, 3> kOverlaps = {0.10, 0.25, 0.50};

inline double accuracy(const FrameLabels& pred, const FrameLabels& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (gt.empty()) return 100.0;
  std::size_t hit = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) hit += pred[t] == gt[t] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(gt.size());
}

// Segments whose label equals `background` are dropped before scoring.
inline SegmentAnnotation without_background(const SegmentAnnotation& segs, std::optional<int> background) {
  if (!background) return segs;
  SegmentAnnotation out;
  for (const auto& s : segs) {
    if (s.label != *background) out.push_back(s);
  }
  return out;
}

inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double edit_score(const SegmentAnnotation& pred, const SegmentAnnotation& gt,
                         std::optional<int> background = std::nullopt) {
  std::vector<int> p, g;
  for (const auto& s : without_background(pred, background)) p.push_back(s.label);
  for (const auto& s : without_background(gt, background)) g.push_back(s.label);
  const std::size_t longest = std::max(p.size(), g.size());
  if (longest == 0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(longest));
}

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const F1Counts&) const = default;

  double f1() const {
    const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (precision + recall == 0.0) return 0.0;
    return 100.0 * 2.0 * precision * recall / (precision + recall);
  }
};

inline double interval_iou(const Segment& a, const Segment& b) {
  const Index inter = std::max<Index>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const Index uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Predicted segments are visited in temporal order; each takes the
// still-unmatched same-class ground-truth segment of highest IoU and counts
// as a true positive when IoU >= tau.
inline F1Counts f1_counts(const SegmentAnnotation& pred, const SegmentAnnotation& gt, double tau,
                          std::optional<int> background = std::nullopt) {
  const SegmentAnnotation p = without_background(pred, background);
  const SegmentAnnotation g = without_background(gt, background);
  std::vector<bool> used(g.size(), false);
  F1Counts c;
  for (const auto& s : p) {
    double best = -1.0;
    std::size_t best_idx = g.size();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (used[j] || g[j].label != s.label) continue;
      const double iou = interval_iou(s, g[j]);
      if (iou > best) {
        best = iou;
        best_idx = j;
      }
    }
    if (best_idx < g.size() && best >= tau) {
      ++c.tp;
      used[best_idx] = true;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
  return c;
}

inline double f1_at(const SegmentAnnotation& pred, const SegmentAnnotation& gt, double tau,
                    std::optional<int> background = std::nullopt) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("f1_at: tau must lie in (0, 1)");
  return f1_counts(pred, gt, tau, background).f1();
}

struct VideoEval {
  std::string video_id;
  std::size_t frames = 0;
  std::size_t correct = 0;
  double acc = 0;
  double edit = 0;
  std::array<F1Counts, kOverlaps.size()> counts{};
  std::array<double, kOverlaps.size()> f1{};
};

struct EvalReport {
  double acc = 0;
  double edit = 0;
  std::array<double, kOverlaps.size()> f1{};
  std::array<F1Counts, kOverlaps.size()> counts{};
  std::vector<VideoEval> videos;
};

inline VideoEval evaluate_video(const std::string& id, const FrameLabels& pred, const FrameLabels& gt,
                                std::optional<int> background = std::nullopt) {
  VideoEval v;
  v.video_id = id;
  v.frames = gt.size();
  v.acc = accuracy(pred, gt);
  for (std::size_t t = 0; t < gt.size(); ++t) v.correct += pred[t] == gt[t] ? 1 : 0;
  const SegmentAnnotation ps = labels_to_segments(pred), gs = labels_to_segments(gt);
  v.edit = edit_score(ps, gs, background);
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
    v.counts[i] = f1_counts(ps, gs, kOverlaps[i], background);
    v.f1[i] = v.counts[i].f1();
  }
  return v;
}

// Acc over all frames, Edit averaged over videos, F1 from pooled counts.
inline EvalReport aggregate(std::vector<VideoEval> videos) {
  EvalReport r;
  std::size_t frames = 0, correct = 0;
  double edit = 0;
  for (const auto& v : videos) {
    frames += v.frames;
    correct += v.correct;
    edit += v.edit;
    for (std::size_t i = 0; i < kOverlaps.size(); ++i) r.counts[i] += v.counts[i];
  }
  r.acc = frames == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(frames);
  r.edit = videos.empty() ? 0.0 : edit / static_cast<double>(videos.size());
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) r.f1[i] = r.counts[i].f1();
  r.videos = std::move(videos);
  return r;
}

}  // namespace bit

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

using namespace bit;
using bit::testing::oracle_edit;
using bit::testing::oracle_f1;
using bit::testing::random_labels;

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy({0, 1, 2}, {0, 1, 2}), 100.0);
  EXPECT_EQ(accuracy({0, 0}, {1, 1}), 0.0);
  EXPECT_EQ(accuracy({0, 0, 1, 1}, {0, 1, 1, 1}), 75.0);
  EXPECT_THROW(accuracy({0}, {0, 1}), std::invalid_argument);
}

TEST(Edit, Examples) {
  const SegmentAnnotation abc{{0, 0, 2}, {1, 2, 4}, {2, 4, 6}}, ab{{0, 0, 3}, {1, 3, 6}};
  EXPECT_EQ(edit_score(abc, abc), 100.0);
  EXPECT_NEAR(edit_score(ab, abc), 100.0 * (1.0 - 1.0 / 3.0), 1e-12);
  EXPECT_NEAR(edit_score(ab, abc), 66.67, 5e-3);
  EXPECT_EQ(edit_score({}, abc), 0.0);
}

TEST(Edit, IgnoresTemporalLocation) {
  EXPECT_EQ(edit_score({{0, 0, 1}, {1, 1, 9}}, {{0, 0, 8}, {1, 8, 9}}), 100.0);
}

TEST(Edit, Symmetric) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = labels_to_segments(random_labels(rng, 30, 4, 1 + i % 8));
    const auto b = labels_to_segments(random_labels(rng, 30, 4, 1 + (i * 3) % 8));
    EXPECT_EQ(edit_score(a, b), edit_score(b, a));
  }
}

TEST(Edit, MatchesDynamicProgrammingOracle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = labels_to_segments(random_labels(rng, 50, 5, 1 + i % 12));
    const auto b = labels_to_segments(random_labels(rng, 50, 5, 1 + (i * 7) % 12));
    EXPECT_NEAR(edit_score(a, b), oracle_edit(a, b), 1e-9);
  }
}

TEST(F1, ExactMatchIsPerfect) {
  const SegmentAnnotation s{{0, 0, 4}, {2, 4, 5}, {0, 5, 9}};
  for (double tau : kOverlaps) EXPECT_EQ(f1_at(s, s, tau), 100.0);
}

TEST(F1, MissingSegmentHalvesRecall) {
  const SegmentAnnotation gt{{0, 0, 10}, {1, 10, 20}}, pred{{0, 0, 10}};
  for (double tau : kOverlaps) {
    EXPECT_NEAR(f1_at(pred, gt, tau), 100.0 * 2.0 / 3.0, 1e-12);
    EXPECT_EQ(f1_counts(pred, gt, tau), (F1Counts{1, 0, 1}));
  }
}

TEST(F1, OverlapThreshold) {
  // IoU = 4 / 10.
  const SegmentAnnotation gt{{0, 0, 10}}, pred{{0, 6, 10}};
  ASSERT_NEAR(interval_iou(pred[0], gt[0]), 0.4, 1e-15);
  EXPECT_EQ(f1_counts(pred, gt, 0.25), (F1Counts{1, 0, 0}));
  EXPECT_EQ(f1_counts(pred, gt, 0.50), (F1Counts{0, 1, 1}));
}

TEST(F1, ThresholdTieCountsAsHit) {
  const SegmentAnnotation gt{{0, 0, 4}}, pred{{0, 0, 2}};
  EXPECT_EQ(f1_counts(pred, gt, 0.5).tp, 1u);
}

TEST(F1, ClassMustAgree) {
  EXPECT_EQ(f1_counts({{1, 0, 4}}, {{0, 0, 4}}, 0.1), (F1Counts{0, 1, 1}));
}

TEST(F1, RejectsThresholdOutsideUnitInterval) {
  EXPECT_THROW(f1_at({}, {}, 0.0), std::invalid_argument);
  EXPECT_THROW(f1_at({}, {}, 1.0), std::invalid_argument);
}

TEST(F1, MonotoneInThreshold) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = labels_to_segments(random_labels(rng, 60, 3, 2 + i % 10));
    const auto b = labels_to_segments(random_labels(rng, 60, 3, 2 + (i * 5) % 10));
    double prev = 101;
    for (double tau = 0.05; tau < 1.0; tau += 0.05) {
      const double f = f1_at(a, b, tau);
      EXPECT_LE(f, prev + 1e-12);
      prev = f;
    }
  }
}

TEST(F1, MatchesExplicitOracle) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto a = labels_to_segments(random_labels(rng, 50, 4, 1 + i % 12));
    const auto b = labels_to_segments(random_labels(rng, 50, 4, 1 + (i * 7) % 12));
    for (double tau : kOverlaps) EXPECT_NEAR(f1_at(a, b, tau), oracle_f1(a, b, tau), 1e-9);
  }
}

TEST(Background, ExcludedFromSegmentalScores) {
  const SegmentAnnotation gt{{9, 0, 3}, {0, 3, 6}, {9, 6, 8}}, pred{{0, 0, 6}, {9, 6, 8}};
  EXPECT_LT(edit_score(pred, gt), 100.0);
  EXPECT_EQ(edit_score(pred, gt, 9), 100.0);
  EXPECT_EQ(f1_counts(pred, gt, 0.5, 9), (F1Counts{1, 0, 0}));
}

TEST(Aggregate, CorpusFromPerVideoRows) {
  std::mt19937_64 rng(5);
  std::vector<VideoEval> rows;
  for (int v = 0; v < 8; ++v) {
    const FrameLabels gt = random_labels(rng, 40 + v, 3, 4);
    const FrameLabels pred = random_labels(rng, 40 + v, 3, 3 + v % 3);
    rows.push_back(evaluate_video("v" + std::to_string(v), pred, gt));
  }
  const EvalReport r = aggregate(rows);
  std::size_t frames = 0, correct = 0;
  double edit = 0;
  for (std::size_t i = 0; i < kOverlaps.size(); ++i) {
    F1Counts sum;
    for (const auto& v : r.videos) sum += v.counts[i];
    EXPECT_EQ(sum, r.counts[i]);
    EXPECT_NEAR(r.f1[i], sum.f1(), 1e-12);
  }
  for (const auto& v : r.videos) {
    frames += v.frames;
    correct += v.correct;
    edit += v.edit;
  }
  EXPECT_NEAR(r.acc, 100.0 * correct / frames, 1e-12);
  EXPECT_NEAR(r.edit, edit / 8, 1e-12);
}

TEST(Aggregate, GroundTruthAsPredictionIsPerfect) {
  std::mt19937_64 rng(6);
  const FrameLabels gt = random_labels(rng, 30, 3, 5);
  const EvalReport r = aggregate({evaluate_video("v", gt, gt)});
  EXPECT_EQ(r.acc, 100.0);
  EXPECT_EQ(r.edit, 100.0);
  for (double f : r.f1) EXPECT_EQ(f, 100.0);
}

}  // namespace

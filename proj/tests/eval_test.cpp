#include <gtest/gtest.h>

#include <array>
#include <string>
#include <vector>

#include "metric_reference.hpp"
#include "rvf/eval.hpp"
#include "rvf/rng.hpp"

using namespace rvf;
using rvf_test::random_metric_instance;
using rvf_test::ref_metrics;
using rvf_test::reports_match;

TEST(BoxIou, HandCases) {
  EXPECT_NEAR(box_iou(0, 0, 10, 10, 0, 0, 10, 10), 1.0, 1e-15);
  EXPECT_EQ(box_iou(0, 0, 1, 1, 5, 5, 6, 6), 0.0);
  EXPECT_EQ(box_iou(0, 0, 1, 1, 1, 0, 2, 1), 0.0);  // touching edges do not overlap
  EXPECT_NEAR(box_iou(0, 0, 2, 2, 1, 1, 3, 3), 1.0 / 7.0, 1e-12);
}

TEST(MatchGreedy, SingleDetectionAboveThresholdIsTruePositive) {
  const std::vector<DetectionBox> dets{{0, 0, 10, 6, 0.9, 0}};
  const std::vector<GtBox> gts{{0, 0, 10, 10, 0}};  // IoU 0.6
  const MatchResult res = match_greedy(dets, gts, 0.5);
  EXPECT_EQ(res.tp[0], 1);
  EXPECT_EQ(res.matched_gt[0], 0);
}

TEST(MatchGreedy, OneToOneKeepsHigherScoredDetection) {
  // Callers pass dets sorted by score; both overlap the single GT.
  const std::vector<DetectionBox> dets{{0, 0, 10, 10, 0.9, 0}, {1, 0, 10, 10, 0.7, 0}};
  const std::vector<GtBox> gts{{0, 0, 10, 10, 0}};
  const MatchResult res = match_greedy(dets, gts, 0.5);
  EXPECT_EQ(res.tp[0], 1);
  EXPECT_EQ(res.tp[1], 0);
  EXPECT_EQ(res.matched_gt[1], -1);
}

TEST(MatchGreedy, ClassMismatchNeverMatches) {
  const std::vector<DetectionBox> dets{{0, 0, 10, 10, 0.9, 1}};
  const std::vector<GtBox> gts{{0, 0, 10, 10, 0}};
  EXPECT_EQ(match_greedy(dets, gts, 0.5).tp[0], 0);
}

TEST(MatchGreedy, MatchesExhaustiveGreedyOrderEnumeration) {
  // Randomized 3x3 crossing instances against explicit enumeration of all
  // one-to-one assignments, ranked lexicographically in detection order.
  Rng rng(202);
  for (int inst = 0; inst < 60; ++inst) {
    std::vector<DetectionBox> dets(3);
    std::vector<GtBox> gts(3);
    for (int i = 0; i < 3; ++i) {
      gts[i].x1 = rng.uniform(0, 30);
      gts[i].y1 = rng.uniform(0, 30);
      gts[i].x2 = gts[i].x1 + rng.uniform(5, 30);
      gts[i].y2 = gts[i].y1 + rng.uniform(5, 30);
      dets[i].x1 = rng.uniform(0, 30);
      dets[i].y1 = rng.uniform(0, 30);
      dets[i].x2 = dets[i].x1 + rng.uniform(5, 30);
      dets[i].y2 = dets[i].y1 + rng.uniform(5, 30);
      dets[i].score = 1.0 - 0.1 * i;
    }
    const double thresh = 0.2;
    double iou[3][3];
    for (int d = 0; d < 3; ++d)
      for (int g = 0; g < 3; ++g)
        iou[d][g] = box_iou(dets[d].x1, dets[d].y1, dets[d].x2, dets[d].y2, gts[g].x1, gts[g].y1,
                            gts[g].x2, gts[g].y2);

    // Enumerate assignments: each det takes a distinct gt or -1.
    std::array<int, 3> best_assign{-1, -1, -1};
    std::array<double, 3> best_key{-1, -1, -1};
    std::array<int, 3> assign{};
    for (assign[0] = -1; assign[0] < 3; ++assign[0])
      for (assign[1] = -1; assign[1] < 3; ++assign[1])
        for (assign[2] = -1; assign[2] < 3; ++assign[2]) {
          bool valid = true;
          std::array<double, 3> key{-1, -1, -1};
          for (int d = 0; d < 3 && valid; ++d) {
            if (assign[d] < 0) continue;
            for (int e = 0; e < d; ++e)
              if (assign[e] == assign[d]) valid = false;
            if (valid) {
              if (iou[d][assign[d]] < thresh)
                valid = false;
              else
                key[d] = iou[d][assign[d]];
            }
          }
          if (valid && key > best_key) {
            best_key = key;
            best_assign = assign;
          }
        }

    const MatchResult res = match_greedy(dets, gts, thresh);
    for (int d = 0; d < 3; ++d)
      EXPECT_EQ(res.matched_gt[d], best_assign[d]) << "instance " << inst << " det " << d;
  }
}

TEST(ComputeMetrics, PerfectDetectionsScoreHundred) {
  std::vector<ImageEval> images(2);
  images[0].gts = {{10, 10, 60, 60, 0}, {200, 200, 340, 330, 0}};
  images[1].gts = {{5, 5, 25, 25, 0}};
  for (ImageEval& img : images)
    for (const GtBox& g : img.gts) img.dets.push_back({g.x1, g.y1, g.x2, g.y2, 1.0, g.class_id});

  const MetricReport r = compute_metrics(images);
  EXPECT_NEAR(r.ap, 100.0, 1e-9);
  EXPECT_NEAR(r.ap50, 100.0, 1e-9);
  EXPECT_NEAR(r.ap75, 100.0, 1e-9);
  EXPECT_NEAR(r.ar1, 100.0 * 2 / 3, 1e-9);  // image 0 holds two same-class GTs, cap 1
  EXPECT_NEAR(r.ar100, 100.0, 1e-9);
  EXPECT_NEAR(r.ap_small, 100.0, 1e-9);
  EXPECT_NEAR(r.ap_medium, 100.0, 1e-9);
  EXPECT_NEAR(r.ap_large, 100.0, 1e-9);
}

TEST(ComputeMetrics, ZeroDetectionsScoreZero) {
  std::vector<ImageEval> images(1);
  images[0].gts = {{10, 10, 60, 60, 0}};
  const MetricReport r = compute_metrics(images);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.ap50, 0.0);
  EXPECT_EQ(r.ar100, 0.0);
}

TEST(ComputeMetrics, EmptyInstanceReportsSentinels) {
  const MetricReport r = compute_metrics({});
  EXPECT_EQ(r.ap, -1.0);
  EXPECT_EQ(r.ar100, -1.0);
}

TEST(ComputeMetrics, SeventyTwoPercentIoUHandCase) {
  // One det at IoU 0.72: thresholds 0.50..0.70 pass (5 of 10).
  std::vector<ImageEval> images(1);
  images[0].gts = {{0, 0, 10, 10, 0}};
  images[0].dets = {{0, 0, 10, 7.2, 0.9, 0}};
  const MetricReport r = compute_metrics(images);
  EXPECT_NEAR(r.ap50, 100.0, 1e-9);
  EXPECT_NEAR(r.ap75, 0.0, 1e-9);
  EXPECT_NEAR(r.ap, 50.0, 1e-9);
  EXPECT_NEAR(r.ap_small, 50.0, 1e-9);  // 100 px area sits in the small bucket
  EXPECT_EQ(r.ap_medium, -1.0);
  EXPECT_EQ(r.ap_large, -1.0);
}

TEST(ComputeMetrics, MatchesReferenceImplementationOnMicroInstances) {
  Rng rng(4242);
  for (int inst = 0; inst < 200; ++inst) {
    const std::vector<ImageEval> images = random_metric_instance(rng);
    reports_match(compute_metrics(images), ref_metrics(images),
                  "instance " + std::to_string(inst));
  }
}

TEST(ComputeMetrics, DuplicateLowScoreFalsePositiveNeverRaisesAp) {
  Rng rng(77);
  for (int inst = 0; inst < 40; ++inst) {
    std::vector<ImageEval> images = random_metric_instance(rng);
    if (images[0].dets.empty()) continue;
    const MetricReport before = compute_metrics(images);

    DetectionBox dup = images[0].dets[0];
    dup.score *= 0.5;
    images[0].dets.push_back(dup);
    const MetricReport after = compute_metrics(images);

    if (before.ap >= 0) EXPECT_LE(after.ap, before.ap + 1e-9) << "instance " << inst;
    if (before.ap50 >= 0) EXPECT_LE(after.ap50, before.ap50 + 1e-9) << "instance " << inst;
    if (before.ap75 >= 0) EXPECT_LE(after.ap75, before.ap75 + 1e-9) << "instance " << inst;
  }
}

TEST(ComputeMetrics, ImageOrderPermutationInvariant) {
  Rng rng(555);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<ImageEval> images = random_metric_instance(rng);
    std::vector<ImageEval> reversed(images.rbegin(), images.rend());
    reports_match(compute_metrics(images), compute_metrics(reversed), "permutation");
  }
}

TEST(ComputeMetrics, ArTenEqualsArHundredWithFewDetections) {
  Rng rng(99);
  for (int inst = 0; inst < 20; ++inst) {
    const std::vector<ImageEval> images = random_metric_instance(rng);  // at most 4 dets per image
    const MetricReport r = compute_metrics(images);
    EXPECT_EQ(r.ar10, r.ar100) << "instance " << inst;
    if (r.ar1 >= 0 && r.ar10 >= 0) EXPECT_LE(r.ar1, r.ar10 + 1e-9);
  }
}

TEST(ComputeMetrics, ApNeverExceedsApFifty) {
  Rng rng(123);
  for (int inst = 0; inst < 40; ++inst) {
    const MetricReport r = compute_metrics(random_metric_instance(rng));
    if (r.ap >= 0 && r.ap50 >= 0) EXPECT_LE(r.ap, r.ap50 + 1e-9);
  }
}

TEST(FormatMetricTable, ContainsHeadersAndSentinels) {
  MetricReport r;
  r.ap = 42.5;
  r.ap50 = 100.0;
  const std::string table = format_metric_table(r);
  EXPECT_NE(table.find("AP50"), std::string::npos);
  EXPECT_NE(table.find("AR100"), std::string::npos);
  EXPECT_NE(table.find("42.5"), std::string::npos);
  EXPECT_NE(table.find("-1"), std::string::npos);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "spotkit/eval.hpp"
#include "spotkit/rng.hpp"

using namespace spotkit;

namespace {

std::vector<SpotEvent> events(std::initializer_list<std::pair<double, double>> tc, std::size_t cls = 0) {
  std::vector<SpotEvent> out;
  for (auto [t, c] : tc) out.push_back({cls, t, c});
  return out;
}

const ClassVocabulary kOneClass{{"goal"}};

}  // namespace

TEST(AveragePrecision, SpecExamples) {
  EXPECT_DOUBLE_EQ(average_precision(events({{10.5, 0.9}}), events({{10, 1}}), 1.0), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(events({{13, 0.9}}), events({{10, 1}}), 2.0), 0.0);
  const double ap = average_precision(events({{10.2, 0.9}, {15, 0.8}, {19.5, 0.7}}), events({{10, 1}, {20, 1}}), 1.0);
  EXPECT_NEAR(ap, 0.5 * (1.0 + 2.0 / 3.0), 1e-15);
  EXPECT_NEAR(ap, 0.8333, 5e-5);
}

TEST(AveragePrecision, EmptyCases) {
  EXPECT_EQ(average_precision({}, {}, 1.0), 1.0);
  EXPECT_EQ(average_precision(events({{1, 0.5}}), {}, 1.0), 0.0);
  EXPECT_EQ(average_precision({}, events({{1, 1}}), 1.0), 0.0);
  EXPECT_THROW(average_precision({}, {}, 0.0), ParameterError);
}

TEST(AveragePrecision, ToleranceIsInclusive) {
  EXPECT_EQ(average_precision(events({{12, 0.9}}), events({{10, 1}}), 2.0), 1.0);
}

TEST(AveragePrecision, EachGroundTruthMatchedOnce) {
  const auto m = match_predictions(
      std::vector<ClassTrack>{{events({{10, 0.9}, {10.1, 0.8}, {9.9, 0.7}}), events({{10, 1}})}}, 1.0);
  EXPECT_EQ(std::count(m.true_positive.begin(), m.true_positive.end(), true), 1);
}

TEST(AveragePrecision, MatchesPrefixOracleOnRandomInstances) {
  Rng rng(21);
  std::uniform_int_distribution<int> np(0, 6), ng(0, 4), t(0, 30), c(1, 5);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<SpotEvent> preds, gts;
    for (int i = np(rng); i > 0; --i) preds.push_back({0, 0.5 * t(rng), 0.2 * c(rng)});
    for (int i = ng(rng); i > 0; --i) gts.push_back({0, 0.5 * t(rng), 1.0});
    const double delta = 1.0 + trial % 5;
    ASSERT_NEAR(average_precision(preds, gts, delta), oracle::average_precision_by_prefixes(preds, gts, delta), 1e-12)
        << "trial " << trial;
  }
}

TEST(AveragePrecision, ScaleAndPermutationInvariant) {
  Rng rng(22);
  std::uniform_real_distribution<double> t(0, 30), c(0.05, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SpotEvent> preds, gts;
    for (int i = 0; i < 8; ++i) preds.push_back({0, t(rng), c(rng)});
    for (int i = 0; i < 4; ++i) gts.push_back({0, t(rng), 1.0});
    const double base = average_precision(preds, gts, 2.0);
    auto scaled = preds;
    for (auto& p : scaled) p.confidence *= 0.37;
    EXPECT_EQ(average_precision(scaled, gts, 2.0), base);
    std::shuffle(preds.begin(), preds.end(), rng);
    std::shuffle(gts.begin(), gts.end(), rng);
    EXPECT_EQ(average_precision(preds, gts, 2.0), base);
  }
}

TEST(Tamap, SpecExamples) {
  const std::vector<VideoEvents> gt{{"m", 60, events({{10, 1}})}};
  EXPECT_DOUBLE_EQ(tamap(gt, gt, kOneClass).t_amap_percent, 100.0);
  const std::vector<VideoEvents> late{{"m", 60, events({{13, 0.8}})}};
  const auto r = tamap(late, gt, kOneClass);
  EXPECT_NEAR(r.t_amap_percent, 60.0, 1e-12);
  EXPECT_EQ(r.per_tolerance, (std::vector<double>{0, 0, 1, 1, 1}));
  EXPECT_EQ(tamap(std::vector<VideoEvents>{}, gt, kOneClass).t_amap_percent, 0.0);
}

TEST(Tamap, ClassesWithoutGroundTruthAreExcluded) {
  const ClassVocabulary vocab{{"goal", "card"}};
  const std::vector<VideoEvents> gt{{"m", 60, events({{10, 1}})}};
  std::vector<VideoEvents> pred{{"m", 60, events({{10, 1}})}};
  pred[0].events.push_back({1, 30, 0.9});
  const auto r = tamap(pred, gt, vocab);
  EXPECT_DOUBLE_EQ(r.t_amap_percent, 100.0);
  EXPECT_EQ(r.per_class.size(), 1u);
}

TEST(Tamap, PerfectPredictionsOverManyVideos) {
  Rng rng(23);
  std::uniform_real_distribution<double> t(0, 600);
  const ClassVocabulary vocab{{"a", "b", "c"}};
  std::vector<VideoEvents> gt;
  for (int v = 0; v < 4; ++v) {
    VideoEvents ve{"v" + std::to_string(v), 600, {}};
    for (int i = 0; i < 12; ++i) ve.events.push_back({std::size_t(i % 3), t(rng), 1.0});
    gt.push_back(ve);
  }
  EXPECT_DOUBLE_EQ(tamap(gt, gt, vocab).t_amap_percent, 100.0);
}

TEST(Tamap, MonotoneInToleranceAndOrderInvariant) {
  Rng rng(24);
  std::uniform_real_distribution<double> t(0, 120), c(0, 1);
  const ClassVocabulary vocab{{"a", "b"}};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<VideoEvents> gt, pred;
    for (int v = 0; v < 3; ++v) {
      VideoEvents g{"v" + std::to_string(v), 120, {}}, p{g.video_id, 120, {}};
      for (int i = 0; i < 4; ++i) g.events.push_back({std::size_t(i % 2), t(rng), 1.0});
      for (int i = 0; i < 6; ++i) p.events.push_back({std::size_t(i % 2), t(rng), c(rng)});
      gt.push_back(g);
      pred.push_back(p);
    }
    double prev = -1;
    for (double d : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
      const std::vector<double> tol{d};
      const double s = tamap(pred, gt, vocab, tol).t_amap;
      EXPECT_GE(s, prev);
      prev = s;
    }
    const double base = tamap(pred, gt, vocab).t_amap;
    std::reverse(gt.begin(), gt.end());
    std::shuffle(pred.begin(), pred.end(), rng);
    for (auto& p : pred) std::shuffle(p.events.begin(), p.events.end(), rng);
    EXPECT_EQ(tamap(pred, gt, vocab).t_amap, base);
  }
}

TEST(Tamap, CrossVideoTiesDoNotDependOnDocumentOrder) {
  const std::vector<VideoEvents> gt{{"a", 60, events({{10, 1}})}, {"b", 60, events({{10, 1}})}};
  const std::vector<VideoEvents> pred{{"a", 60, events({{10, 0.5}})}, {"b", 60, events({{40, 0.5}})}};
  const double forward = tamap(pred, gt, kOneClass).t_amap;
  const std::vector<VideoEvents> gt_rev{gt[1], gt[0]};
  EXPECT_EQ(tamap(pred, gt_rev, kOneClass).t_amap, forward);
}

TEST(Tamap, ReportJsonShape) {
  const std::vector<VideoEvents> gt{{"m", 60, events({{10, 1}})}};
  const auto j = to_json(tamap(gt, gt, kOneClass));
  EXPECT_EQ(j.at("t_amap_percent").get<double>(), 100.0);
  EXPECT_EQ(j.at("per_tolerance").size(), 5u);
  EXPECT_EQ(j.at("per_class").at("goal").get<double>(), 100.0);
}

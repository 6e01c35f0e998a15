#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace yf;

namespace {

std::vector<Detection> ranked(std::vector<Detection> d) {
  std::stable_sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) {
    return ranks_before({a, 0}, {b, 0});
  });
  return d;
}

bool same(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].box == b[i].box) || a[i].score != b[i].score || a[i].class_id != b[i].class_id) return false;
  return true;
}

}  // namespace

TEST(Iou, ExampleAndGridOracle) {
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 1, 1}, Box{1, 0, 2, 1}), 0.0);
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 0, 0}, Box{0, 0, 0, 0}), 0.0);
  SeededRng rng(1);
  for (int t = 0; t < 200; ++t) {
    // Corners on a 1/4 grid so cell counting with h = 1/8 is exact.
    auto q = [&] { return static_cast<double>(rng.below(41)) / 4.0; };
    double a0 = q(), a1 = q(), b0 = q(), b1 = q(), c0 = q(), c1 = q(), d0 = q(), d1 = q();
    const Box a{std::min(a0, a1), std::min(b0, b1), std::max(a0, a1) + 0.25, std::max(b0, b1) + 0.25};
    const Box b{std::min(c0, c1), std::min(d0, d1), std::max(c0, c1) + 0.25, std::max(d0, d1) + 0.25};
    const double v = iou(a, b);
    EXPECT_NEAR(v, oracle::grid_iou(a, b, 0.125), 1e-12);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Nms, Examples) {
  const std::vector<Detection> d{{Box{0, 0, 10, 10}, 0, 0.9}, {Box{1, 1, 11, 11}, 0, 0.8}, {Box{1, 1, 11, 11}, 1, 0.7},
                                 {Box{20, 20, 30, 30}, 0, 0.6}};
  const auto k = nms(d, 0.5);
  ASSERT_EQ(k.size(), 3u);
  EXPECT_EQ(k[0].score, 0.9);
  EXPECT_EQ(k[1].class_id, 1);
  EXPECT_EQ(k[2].score, 0.6);
  // IoU exactly at the threshold is kept.
  const std::vector<Detection> edge{{Box{0, 0, 2, 1}, 0, 0.9}, {Box{1, 0, 3, 1}, 0, 0.8}};
  EXPECT_EQ(nms(edge, 1.0 / 3.0).size(), 2u);
  EXPECT_EQ(nms(edge, 0.3).size(), 1u);
  EXPECT_TRUE(nms({}, 0.5).empty());
}

TEST(Nms, MatchesSubsetFixedPoint) {
  SeededRng rng(2);
  for (int t = 0; t < 300; ++t) {
    std::vector<Detection> d;
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      d.push_back({Box{x, y, x + rng.uniform(3, 12), y + rng.uniform(3, 12)}, static_cast<int>(rng.below(2)),
                   static_cast<double>(rng.below(5)) / 4.0});
    }
    const auto got = nms(d, 0.4);
    EXPECT_TRUE(same(got, oracle::nms_by_subsets(ranked(d), 0.4)));
    EXPECT_TRUE(same(nms(got, 0.4), got));
    std::reverse(d.begin(), d.end());
    EXPECT_TRUE(same(nms(d, 0.4), got));
  }
}

TEST(Ap, TwoDetectionExamples) {
  EvalConfig cfg;
  const std::vector<std::vector<LabeledBox>> gt{{{Box{0, 0, 10, 10}, 0}}};
  const Detection hit{Box{0, 0, 10, 10}, 0, 0.9}, miss{Box{50, 50, 60, 60}, 0, 0.9};
  auto tp_first = hit, fp_second = miss;
  fp_second.score = 0.5;
  EXPECT_DOUBLE_EQ(average_precision({{tp_first, fp_second}}, gt, 0, cfg).ap, 1.0);
  auto fp_first = miss, tp_second = hit;
  tp_second.score = 0.5;
  const auto c = average_precision({{fp_first, tp_second}}, gt, 0, cfg);
  EXPECT_DOUBLE_EQ(c.ap, 0.5);
  EXPECT_EQ(c.tp, (std::vector<std::uint8_t>{0, 1}));
  // A duplicate of a matched box is a false positive.
  auto dup = hit;
  dup.score = 0.8;
  EXPECT_EQ(average_precision({{hit, dup}}, gt, 0, cfg).tp, (std::vector<std::uint8_t>{1, 0}));
  // Empty detections with ground truth score zero.
  EXPECT_DOUBLE_EQ(average_precision({{}}, gt, 0, cfg).ap, 0.0);
}

TEST(Ap, MatchesThresholdSweepOracle) {
  SeededRng rng(3);
  EvalConfig cfg;
  for (int t = 0; t < 500; ++t) {
    const auto inst = fixture::random_ap_instance(rng, 1 + rng.below(5), 2);
    for (int c = 0; c < 2; ++c) {
      const auto curve = average_precision(inst.detections, inst.ground_truth, c, cfg);
      EXPECT_NEAR(curve.ap, oracle::ap_all_thresholds(inst.detections, inst.ground_truth, c, 0.5), 1e-12);
      EXPECT_GE(curve.ap, 0.0);
      EXPECT_LE(curve.ap, 1.0);
      for (std::size_t k = 1; k < curve.recall.size(); ++k) EXPECT_GE(curve.recall[k], curve.recall[k - 1]);
    }
  }
}

TEST(Ap, InvariantUnderInputOrderAndMonotoneScoreMaps) {
  SeededRng rng(4);
  EvalConfig cfg;
  for (int t = 0; t < 100; ++t) {
    auto inst = fixture::random_ap_instance(rng, 4, 2);
    const double base = average_precision(inst.detections, inst.ground_truth, 0, cfg).ap;
    for (auto& d : inst.detections) {
      rng.shuffle(d.begin(), d.end());
      for (auto& x : d) x.score = 0.1 + 0.5 * x.score * x.score;
    }
    EXPECT_DOUBLE_EQ(average_precision(inst.detections, inst.ground_truth, 0, cfg).ap, base);
  }
}

TEST(Ap, ElevenPointInterpolation) {
  EXPECT_DOUBLE_EQ(integrate_ap({0.5, 1.0}, {1.0, 0.5}, ApInterpolation::eleven_point), (6 * 1.0 + 5 * 0.5) / 11.0);
  EXPECT_DOUBLE_EQ(integrate_ap({0.5, 1.0}, {1.0, 0.5}, ApInterpolation::all_points), 0.75);
}

TEST(MeanAp, AveragesDefinedClassesOnly) {
  EvalConfig cfg;
  const std::vector<std::vector<LabeledBox>> gt{{{Box{0, 0, 10, 10}, 0}, {Box{20, 20, 30, 30}, 1}}};
  const std::vector<std::vector<Detection>> det{{{Box{0, 0, 10, 10}, 0, 0.9},
                                                 {Box{50, 50, 60, 60}, 1, 0.9},
                                                 {Box{20, 20, 30, 30}, 1, 0.5},
                                                 {Box{0, 0, 5, 5}, 2, 0.9}}};
  const auto r = mean_ap(det, gt, 3, cfg);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 1.0);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 0.5);
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_DOUBLE_EQ(r.map, 0.75);
  EXPECT_EQ(r.det_counts[2], 1u);
  EXPECT_EQ(r.notes.size(), 1u);
  const auto json = report_json(r, cfg, {"a", "b", "c"});
  EXPECT_NE(json.find("\"map\""), std::string::npos);
  EXPECT_THROW(mean_ap(det, gt, 3, EvalConfig{0.0}), std::invalid_argument);
}

TEST(Quantile, NearestRank) {
  std::vector<double> v{5, 1, 4, 2, 3, 10, 9, 8, 7, 6};
  EXPECT_EQ(quantile(v, 0.5), 5.0);
  EXPECT_EQ(quantile(v, 0.95), 10.0);
  EXPECT_EQ(quantile(v, 0.0), 1.0);
  EXPECT_EQ(quantile({}, 0.5), 0.0);
}

TEST(Fps, ReportIsSelfConsistent) {
  auto cfg = DetectorConfig::desk();
  cfg.input_size = 64;
  cfg.stage_channels = {8, 8, 16, 16, 32};
  cfg.stem_channels = 4;
  Detector<float> det(cfg, 1);
  const auto r = fps_bench(det, 6, 2, 5);
  EXPECT_EQ(r.timed_images, 6u);
  EXPECT_EQ(r.warmup_images, 2u);
  EXPECT_EQ(r.input_size, 64u);
  EXPECT_GT(r.total_seconds, 0.0);
  EXPECT_NEAR(r.fps, 6.0 / r.total_seconds, 1e-9 * r.fps);
  EXPECT_LE(r.p50_latency_ms, r.p95_latency_ms);
  EXPECT_FALSE(fps_json(r).empty());
}

TEST(Predict, SizeMismatchThrows) {
  Detector<float> det(DetectorConfig::desk(), 1);
  Sample s;
  s.image = Image(64, 64);
  EXPECT_THROW(predict(det, {s}, EvalConfig{}), ShapeError);
}

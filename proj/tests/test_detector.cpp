#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "yolo_former/detector.hpp"
#include "yolo_former/kernels.hpp"
#include "yolo_former/training.hpp"

using namespace yf;
using namespace fixture;

namespace {

Tensor<float> images(std::size_t n, std::size_t s, std::uint64_t seed) {
  SeededRng rng(seed);
  Tensor<float> t({n, 3, s, s});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

TEST(Detector, PyramidExtents) {
  Detector<float> det(DetectorConfig::desk(), 1);
  Context<float> ctx;
  auto p = det.backbone(ctx, images(2, 96, 1));
  EXPECT_EQ(p.p3.shape(), (Shape{2, 64, 12, 12}));
  EXPECT_EQ(p.p4.shape(), (Shape{2, 128, 6, 6}));
  EXPECT_EQ(p.p5.shape(), (Shape{2, 256, 3, 3}));
  auto n = det.neck(ctx, p);
  EXPECT_EQ(n.p3.shape(), (Shape{2, 64, 12, 12}));
  EXPECT_EQ(n.p4.shape(), (Shape{2, 128, 6, 6}));
  EXPECT_EQ(n.p5.shape(), (Shape{2, 256, 3, 3}));
  auto raw = det.head(ctx, n);
  EXPECT_EQ(raw[2].shape(), (Shape{2, 21, 3, 3}));

  auto big = DetectorConfig::desk();
  big.input_size = 192;
  Detector<float> det2(big, 1);
  auto q = det2.backbone(ctx, images(1, 192, 2));
  EXPECT_EQ(q.p3.dim(2), 24u);
  EXPECT_EQ(q.p4.dim(3), 12u);
  EXPECT_EQ(q.p5.dim(2), 6u);

  EXPECT_THROW(det.backbone(ctx, images(1, 64, 3)), ShapeError);
  auto bad = DetectorConfig::desk();
  bad.input_size = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Detector, FullDepthPresetHasTwentyThreeModules) {
  const auto c = DetectorConfig::full_depth();
  std::size_t total = 0;
  for (auto d : c.stage_depths) total += d;
  EXPECT_EQ(total, 23u);
  EXPECT_EQ(DetectorConfig::desk().stage_depths, (std::array<std::size_t, 5>{1, 1, 2, 2, 1}));
}

TEST(Detector, HeadParameterCountMatchesClosedForm) {
  Detector<float> det(DetectorConfig::desk(), 1);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string prefix = "head.p" + std::to_string(s + 3) + ".";
    std::size_t n = 0;
    for (const auto& p : det.params().params())
      if (p.name.starts_with(prefix)) n += p.value.numel();
    EXPECT_EQ(n, head_parameter_count(det.config().stage_channels[s + 2], 2)) << prefix;
  }
}

TEST(Detector, LogitsScaleWithWeights) {
  Detector<float> det(DetectorConfig::desk(), 1);
  const auto x = images(1, 96, 4);
  auto peak = [&] {
    Context<float> ctx;
    float m = 0;
    for (float v : det.forward(ctx, x)[0].values()) m = std::max(m, std::abs(v));
    return m;
  };
  const float before = peak();
  for (auto& v : det.params().find_param("head.p3.pred.weight")->value.values()) v *= 50.0f;
  EXPECT_GT(peak(), 5.0f * before);
}

TEST(Detector, NeckFineScaleDependsOnlyOnP3WhenUpsampledInputIsCut) {
  Detector<float> det(DetectorConfig::desk(), 2);
  auto& w = det.params().find_param("neck.fuse3.conv.weight")->value;
  const std::size_t in = w.dim(1), up = det.config().stage_channels[3];
  for (std::size_t o = 0; o < w.dim(0); ++o)
    for (std::size_t c = 0; c < up; ++c) w.values()[o * in + c] = 0.0f;
  Context<float> ctx;
  auto p = det.backbone(ctx, images(1, 96, 5));
  const auto base = det.neck(ctx, p).p3;
  SeededRng rng(6);
  p.p4 = random_input<float>(p.p4.shape(), rng);
  p.p5 = random_input<float>(p.p5.shape(), rng);
  EXPECT_TRUE(bit_equal(det.neck(ctx, p).p3, base));
}

TEST(Detector, GradientReachesStemFromP5) {
  Detector<float> det(DetectorConfig::desk(), 3);
  Tape<float> tape;
  Context<float> ctx;
  ctx.tape = &tape;
  ctx.mode = Mode::train;
  auto p = det.backbone(ctx, images(2, 96, 7));
  SeededRng rng(8);
  std::vector<float> wts(p.p5.numel());
  for (auto& v : wts) v = static_cast<float>(rng.normal());
  tape.backward(ops::dot_constant(&tape, p.p5, wts));
  const auto& g = det.params().find_param("backbone.stem.conv.weight")->value;
  ASSERT_TRUE(g.has_grad());
  double norm = 0;
  for (float v : g.grad()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Detector, EvalForwardIsDeterministic) {
  Detector<float> det(DetectorConfig::desk(), 4);
  const auto x = images(2, 96, 9);
  Context<float> a, b;
  auto r1 = det.forward(a, x), r2 = det.forward(b, x);
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(bit_equal(r1[s], r2[s]));
}

TEST(Decode, CellCentreAndAnchorExtent) {
  const auto anchors = default_anchors()[2];
  Tensor<float> raw({1, 21, 3, 3}, -20.0f);
  const std::size_t a = 1, per = 7, i = 1, j = 2, hw = 9;
  auto at = [&](std::size_t ch) -> float& { return raw.values()[(a * per + ch) * hw + i * 3 + j]; };
  at(0) = 0.0f;
  at(1) = 0.0f;
  at(2) = 0.0f;
  at(3) = std::log(0.5f);
  at(4) = 20.0f;
  at(5) = -3.0f;
  at(6) = 3.0f;
  const auto d = decode(raw, 0, anchors, 32.0, 2, 0.5, 96, 96);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].class_id, 1);
  EXPECT_NEAR(d[0].score, kernels::sigmoid(20.0) * kernels::sigmoid(3.0), 1e-7);
  // centre (2.5, 1.5) * 32, extent 48 x 24, right edge clipped at 96
  EXPECT_NEAR(d[0].box.xmin, 56.0, 1e-4);
  EXPECT_NEAR(d[0].box.ymin, 36.0, 1e-4);
  EXPECT_NEAR(d[0].box.xmax, 96.0, 1e-4);
  EXPECT_NEAR(d[0].box.ymax, 60.0, 1e-4);
}

TEST(Decode, EncodeDecodeRoundTrip) {
  const auto cfg = DetectorConfig::desk();
  SeededRng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const double w = rng.uniform(4, 60), h = rng.uniform(4, 60);
    const double x0 = rng.uniform(0, 96 - w), y0 = rng.uniform(0, 96 - h);
    const LabeledBox gt{Box{x0, y0, x0 + w, y0 + h}, static_cast<int>(rng.below(2))};
    const auto ta = assign_targets({gt}, cfg.anchors, 96, 2);
    std::size_t found = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (const auto& p : ta.scales[s].positives) {
        ++found;
        // Write the targets into a raw tensor and decode it as the detector would.
        const std::size_t G = cfg.grid(s), hw = G * G, per = 7;
        Tensor<float> raw({1, 21, G, G}, -30.0f);
        const std::size_t cell = p.row * G + p.col;
        raw.values()[(p.anchor * per + 0) * hw + cell] = static_cast<float>(p.tx);
        raw.values()[(p.anchor * per + 1) * hw + cell] = static_cast<float>(p.ty);
        raw.values()[(p.anchor * per + 2) * hw + cell] = static_cast<float>(p.tw);
        raw.values()[(p.anchor * per + 3) * hw + cell] = static_cast<float>(p.th);
        raw.values()[(p.anchor * per + 4) * hw + cell] = 30.0f;
        raw.values()[(p.anchor * per + 5 + gt.class_id) * hw + cell] = 30.0f;
        const auto d = decode(raw, 0, cfg.anchors[s], static_cast<double>(kStrides[s]), 2, 0.5, 96, 96);
        ASSERT_EQ(d.size(), 1u);
        // float logits bound the achievable precision; the double path is exact to 1e-9
        EXPECT_NEAR(d[0].box.xmin, x0, 1e-3);
        EXPECT_NEAR(d[0].box.ymax, y0 + h, 1e-3);
        const Box back = decode_positive(p, cfg.anchors[s][p.anchor], static_cast<double>(kStrides[s]));
        EXPECT_NEAR(back.xmin, gt.box.xmin, 1e-4);
        EXPECT_NEAR(back.ymin, gt.box.ymin, 1e-4);
        EXPECT_NEAR(back.xmax, gt.box.xmax, 1e-4);
        EXPECT_NEAR(back.ymax, gt.box.ymax, 1e-4);
      }
    EXPECT_EQ(found, 1u);
  }
}

TEST(Decode, BoxesStayInsideTheImage) {
  Detector<float> det(DetectorConfig::desk(), 5);
  for (auto& v : det.params().find_param("head.p5.pred.weight")->value.values()) v *= 40.0f;
  Context<float> ctx;
  auto raw = det.forward(ctx, images(2, 96, 11));
  for (std::size_t n = 0; n < 2; ++n)
    for (const auto& d : decode_all(raw, n, det.config(), 0.0))
      EXPECT_TRUE(box_in_bounds(d.box, 96, 96));
}

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace yf;
using namespace fixture;

namespace {

Sample solid(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Sample s;
  s.image = Image(w, h);
  for (std::size_t p = 0; p < w * h; ++p) {
    s.image.pixels[p * 3] = r;
    s.image.pixels[p * 3 + 1] = g;
    s.image.pixels[p * 3 + 2] = b;
  }
  return s;
}

double boundary_distance(const RotationFrame& f, std::array<double, 2> p) {
  return std::min({std::abs(p[0]), std::abs(p[1]), std::abs(p[0] - f.canvas_w), std::abs(p[1] - f.canvas_h)});
}

}  // namespace

TEST(Rotate, ZeroAngleIsIdentity) {
  SeededRng rng(1);
  const auto s = random_sample(rng, 40, 30, 3);
  const auto r = constrained_rotate(s, 0.0);
  EXPECT_EQ(r.image, s.image);
  EXPECT_EQ(r.boxes, s.boxes);
}

TEST(Rotate, QuarterTurnSwapsAndRescalesCentredBox) {
  Sample s = solid(80, 40, 10, 20, 30);
  s.boxes.push_back({Box{30, 10, 50, 30}, 1});
  const RotationFrame f(80, 40, 90);
  EXPECT_NEAR(f.canvas_w, 40.0, 1e-9);
  EXPECT_NEAR(f.canvas_h, 80.0, 1e-9);
  auto r = constrained_rotate(s, 90.0, nullptr, 90.0);
  EXPECT_EQ(r.image.width, 80u);
  EXPECT_EQ(r.image.height, 40u);
  ASSERT_EQ(r.boxes.size(), 1u);
  // Canvas hull x [10, 30], y [30, 50]; the resize scales x by 2 and y by 1/2.
  EXPECT_NEAR(r.boxes[0].box.xmin, 20.0, 1e-9);
  EXPECT_NEAR(r.boxes[0].box.xmax, 60.0, 1e-9);
  EXPECT_NEAR(r.boxes[0].box.ymin, 15.0, 1e-9);
  EXPECT_NEAR(r.boxes[0].box.ymax, 25.0, 1e-9);
  EXPECT_EQ(r.boxes[0].class_id, 1);
}

TEST(Rotate, ImageCornersLandOnCanvasBoundary) {
  SeededRng rng(2);
  for (int t = 0; t < 200; ++t) {
    const double w = rng.uniform(8, 300), h = rng.uniform(8, 300), a = rng.uniform(-45, 45);
    const RotationFrame f(w, h, a);
    for (auto c : {std::array<double, 2>{0, 0}, {w, 0}, {0, h}, {w, h}}) {
      const auto p = f.to_canvas(c[0], c[1]);
      EXPECT_LT(boundary_distance(f, p), 0.5);
      EXPECT_GT(p[0], -0.5);
      EXPECT_LT(p[0], f.canvas_w + 0.5);
      const auto back = f.to_source(p[0], p[1]);
      EXPECT_NEAR(back[0], c[0], 1e-9);
      EXPECT_NEAR(back[1], c[1], 1e-9);
    }
  }
}

TEST(Rotate, RejectsAnglesOverTheCap) {
  SeededRng rng(3);
  EXPECT_THROW(constrained_rotate(random_sample(rng, 10, 10, 0), 46.0), std::invalid_argument);
}

TEST(Rotate, SolidImageStaysSolidInsideTheRotatedFootprint) {
  const auto s = solid(32, 32, 200, 100, 50);
  const auto r = constrained_rotate(s, 30.0);
  // The centre always maps inside the source.
  EXPECT_EQ(r.image.at(16, 16, 0), 200);
  EXPECT_EQ(r.image.at(16, 16, 2), 50);
  // Canvas corners sit outside the rotated source and read as fill.
  EXPECT_EQ(r.image.at(0, 0, 1), kFillGray);
}

TEST(ZoomOut, Examples) {
  SeededRng rng(4);
  Sample s = random_sample(rng, 80, 80, 0);
  s.boxes.push_back({Box{0, 0, 40, 40}, 0});
  const auto id = zoom_out_at(s, 1.0, 0, 0);
  EXPECT_EQ(id.image, s.image);
  EXPECT_EQ(id.boxes, s.boxes);
  const auto z = zoom_out_at(s, 0.5, 10, 20);
  EXPECT_EQ(z.image.width, 80u);
  EXPECT_EQ(z.image.height, 80u);
  ASSERT_EQ(z.boxes.size(), 1u);
  EXPECT_EQ(z.boxes[0].box, (Box{10, 20, 30, 40}));
  EXPECT_EQ(z.image.at(5, 5, 0), kFillGray);
  EXPECT_THROW(zoom_out_at(s, 0.0, 0, 0), std::invalid_argument);
  EXPECT_THROW(zoom_out_at(s, 0.5, 50, 0), std::invalid_argument);
}

TEST(Mosaic, Examples) {
  const auto red = solid(50, 30, 255, 0, 0);
  const std::array<const Sample*, 4> four{&red, &red, &red, &red};
  SeededRng rng(5);
  const auto m = mosaic(four, 64, rng);
  EXPECT_EQ(m.image, solid(64, 64, 255, 0, 0).image);

  Sample a = solid(40, 24, 1, 2, 3);
  a.boxes.push_back({Box{0, 0, 40, 24}, 0});
  const std::array<const Sample*, 4> src{&a, &red, &red, &red};
  const auto c = mosaic_at(src, 128, 64, 64);
  ASSERT_EQ(c.boxes.size(), 1u);
  EXPECT_EQ(c.boxes[0].box, (Box{0, 0, 64, 64}));
}

TEST(Mosaic, BoxesStayInTheirQuadrant) {
  SeededRng rng(6);
  for (int t = 0; t < 100; ++t) {
    std::array<Sample, 4> s;
    for (auto& x : s) x = random_sample(rng, 20 + rng.below(40), 20 + rng.below(40), 4);
    // one class per source identifies the quadrant
    for (int q = 0; q < 4; ++q)
      for (auto& b : s[q].boxes) b.class_id = q;
    const std::size_t S = 32 + rng.below(64);
    const auto m = mosaic({&s[0], &s[1], &s[2], &s[3]}, S, rng);
    EXPECT_EQ(m.image.width, S);
    EXPECT_TRUE(boxes_valid(m));
    for (const auto& b : m.boxes) {
      const bool left = b.class_id == 0 || b.class_id == 2, top = b.class_id < 2;
      // A left-quadrant box never crosses the central half's right limit.
      if (left) EXPECT_LE(b.box.xmax, 0.75 * static_cast<double>(S) + 1e-9);
      else EXPECT_GE(b.box.xmin, 0.25 * static_cast<double>(S) - 1e-9);
      if (top) EXPECT_LE(b.box.ymax, 0.75 * static_cast<double>(S) + 1e-9);
      else EXPECT_GE(b.box.ymin, 0.25 * static_cast<double>(S) - 1e-9);
    }
  }
}

TEST(Cutout, StaysInsideAndChangesAtMostOneSquare) {
  SeededRng rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto s = random_sample(rng, 20 + rng.below(60), 20 + rng.below(60), 2);
    const auto c = cutout(s, rng);
    EXPECT_EQ(c.boxes, s.boxes);
    const std::size_t m = std::min(s.image.width, s.image.height);
    std::size_t changed = 0;
    for (std::size_t p = 0; p < s.image.width * s.image.height; ++p)
      changed += s.image.pixels[p * 3] != c.image.pixels[p * 3] || s.image.pixels[p * 3 + 1] != c.image.pixels[p * 3 + 1] ||
                 s.image.pixels[p * 3 + 2] != c.image.pixels[p * 3 + 2];
    const double side = std::floor(0.3 * static_cast<double>(m));
    EXPECT_LE(static_cast<double>(changed), side * side);
  }
  const auto s = random_sample(rng, 10, 10, 1);
  EXPECT_EQ(cutout_at(s, 3, 3, 0).image, s.image);
  EXPECT_THROW(cutout_at(s, 8, 8, 4), std::invalid_argument);
}

TEST(Photometric, ClosedFormRules) {
  SeededRng rng(8);
  const auto s = random_sample(rng, 17, 13, 0);
  EXPECT_EQ(invert(invert(s.image)), s.image);
  EXPECT_EQ(solarize(s.image, 256), s.image);
  Image one(1, 1, 200);
  EXPECT_EQ(posterize(one, 1).pixels[0], 128);
  EXPECT_EQ(posterize(one, 3).pixels[0], 192);
  EXPECT_EQ(solarize(one, 128).pixels[0], 55);
  EXPECT_EQ(brightness(one, 1.3).pixels[0], 255);
  EXPECT_EQ(brightness(Image(1, 1, 3), 1.5).pixels[0], 5);  // 4.5 rounds half up
  EXPECT_EQ(contrast(s.image, 1.0), s.image);
  EXPECT_EQ(saturation(s.image, 1.0), s.image);
  EXPECT_EQ(sharpen(s.image, 1.0), s.image);
  const auto gray = solid(4, 4, 90, 90, 90).image;
  EXPECT_EQ(hue_rotate(gray, 60), gray);
  EXPECT_EQ(saturation(gray, 0.2), gray);
}

TEST(Photometric, OpsLeaveBoxesAlone) {
  SeededRng rng(9);
  const auto s = random_sample(rng, 24, 24, 3);
  for (PhotoOp op : kNonGeometricOps)
    for (int m : {0, 7, 10, 30}) {
      const auto r = apply_op(s, op, m, rng);
      EXPECT_EQ(r.boxes, s.boxes) << to_string(op);
      EXPECT_EQ(r.image.width, s.image.width);
      EXPECT_EQ(r.image.height, s.image.height);
    }
  EXPECT_THROW(apply_op(s, PhotoOp::invert, 31, rng), std::invalid_argument);
}

TEST(Photometric, GeometricNamesAreRejectedInChains) {
  EXPECT_THROW(parse_photo_op("rotate"), std::invalid_argument);
  AugmentPolicy p;
  p.augmix_ops.push_back("crop");
  EXPECT_THROW(p.validate(), std::invalid_argument);
  AugmentPolicy q;
  q.randaug_m = 31;
  EXPECT_THROW(q.validate(), std::invalid_argument);
  EXPECT_NO_THROW(AugmentPolicy{}.validate());
}

TEST(Policy, Defaults) {
  const AugmentPolicy p;
  EXPECT_EQ(p.randaug_n, 2);
  EXPECT_EQ(p.randaug_m, 10);
  EXPECT_EQ(p.augmix_chains, 3);
  EXPECT_EQ(p.augmix_severity, 7);
  EXPECT_EQ(p.augmix_depth_range, (std::array<int, 2>{1, 3}));
  EXPECT_EQ(p.geometric_prob, 0.5);
  EXPECT_EQ(p.mix_alpha, 1.0);
  EXPECT_EQ(p.mix_beta, 1.0);
}

TEST(Policy, RandAugmentDrawsNOpsReproducibly) {
  SeededRng rng(10);
  const auto s = random_sample(rng, 24, 24, 2);
  AugmentPolicy p;
  p.policy = PolicyKind::randaugment;
  AugmentLog log;
  SeededRng a(11), b(11);
  const auto r1 = rand_augment(s, p, a, &log);
  const auto r2 = rand_augment(s, p, b);
  EXPECT_EQ(log.ops.size(), 2u);
  EXPECT_EQ(r1.image, r2.image);
  p.randaug_n = 0;
  SeededRng c(11);
  EXPECT_EQ(rand_augment(s, p, c).image, s.image);
}

TEST(Policy, AugMixBlend) {
  SeededRng rng(12);
  const auto s = random_sample(rng, 16, 16, 1);
  const std::vector<Image> chains{invert(s.image), posterize(s.image, 2)};
  EXPECT_EQ(augmix_combine(s.image, chains, {0.5, 0.5}, 0.0), s.image);
  const auto full = augmix_combine(s.image, {chains[0]}, {1.0}, 1.0);
  EXPECT_EQ(full, chains[0]);

  for (int t = 0; t < 100; ++t) {
    const auto w = rng.dirichlet(std::vector<double>{1, 1, 1});
    EXPECT_NEAR(w[0] + w[1] + w[2], 1.0, 1e-6);
  }
  std::array<double, 3> mean{};
  for (int t = 0; t < 10000; ++t) {
    const auto w = rng.dirichlet(std::vector<double>{1, 1, 1});
    for (int k = 0; k < 3; ++k) mean[k] += w[k] / 10000;
  }
  for (double m : mean) EXPECT_NEAR(m, 1.0 / 3.0, 0.01);

  AugmentPolicy p;
  p.policy = PolicyKind::augmix;
  SeededRng a(13), b(13);
  const auto m1 = aug_mix(s, p, a), m2 = aug_mix(s, p, b);
  EXPECT_EQ(m1.image, m2.image);
  EXPECT_EQ(m1.boxes, s.boxes);
}

TEST(Geometric, FlipTwiceAndSkippedPipelineAreIdentity) {
  SeededRng rng(14);
  const auto raw = random_sample(rng, 33, 21, 4);
  const auto s = snap_boxes(raw);
  const auto ff = horizontal_flip(horizontal_flip(s));
  EXPECT_EQ(ff.image, s.image);
  EXPECT_EQ(ff.boxes, s.boxes);
  const auto fr = horizontal_flip(horizontal_flip(raw));
  for (std::size_t i = 0; i < raw.boxes.size(); ++i) {
    EXPECT_NEAR(fr.boxes[i].box.xmin, raw.boxes[i].box.xmin, 1e-12);
    EXPECT_NEAR(fr.boxes[i].box.xmax, raw.boxes[i].box.xmax, 1e-12);
  }
  AugmentPolicy p;
  p.geometric_prob = 0.0;
  const auto g = geometric_pipeline(s, p, rng);
  EXPECT_EQ(g.image, s.image);
  EXPECT_EQ(g.boxes, s.boxes);
}

TEST(Geometric, PipelineKeepsBoxesValid) {
  SeededRng rng(15);
  AugmentPolicy p;
  std::size_t kept = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto s = random_sample(rng, 24 + rng.below(40), 24 + rng.below(40), 1 + rng.below(4));
    AugmentLog log;
    const auto r = geometric_pipeline(s, p, rng, &log);
    ASSERT_EQ(r.image.width, s.image.width);
    ASSERT_EQ(r.image.height, s.image.height);
    ASSERT_TRUE(boxes_valid(r));
    EXPECT_EQ(r.boxes.size() + log.dropped_boxes, s.boxes.size());
    kept += r.boxes.size();
  }
  EXPECT_GT(kept, 0u);
}

TEST(Geometric, SameSeedSameBytes) {
  SeededRng rng(16);
  const auto s = random_sample(rng, 40, 40, 3);
  AugmentPolicy p;
  p.policy = PolicyKind::randaugment;
  SeededRng a(derive_seed(5, 1, 2), 0xa06), b(derive_seed(5, 1, 2), 0xa06);
  const auto r1 = augment_sample(s, p, true, a), r2 = augment_sample(s, p, true, b);
  EXPECT_EQ(r1.image, r2.image);
  EXPECT_EQ(r1.boxes, r2.boxes);
}

#include "yolo_former/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "yolo_former/kernels.hpp"
#include "yolo_former/regularization.hpp"

namespace yf {

AnchorSet default_anchors() {
  AnchorSet a{};
  const std::array<double, 3> mult{0.75, 1.5, 3.0};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < 3; ++k) {
      const double side = mult[k] * static_cast<double>(kStrides[s]);
      a[s][k] = AnchorSize{side, side};
    }
  return a;
}

void DetectorConfig::validate() const {
  if (input_size == 0 || input_size % 32 != 0)
    throw std::invalid_argument("DetectorConfig: input_size " + std::to_string(input_size) +
                                " must be a positive multiple of 32");
  if (num_classes == 0) throw std::invalid_argument("DetectorConfig: num_classes must be positive");
  if (stem_channels == 0) throw std::invalid_argument("DetectorConfig: stem_channels must be positive");
  for (std::size_t i = 0; i < 5; ++i) {
    if (stage_channels[i] == 0) throw std::invalid_argument("DetectorConfig: stage channels must be positive");
    if (has_heads(variant) && stage_channels[i] % 4 != 0)
      throw std::invalid_argument("DetectorConfig: stage " + std::to_string(i) + " channels " +
                                  std::to_string(stage_channels[i]) + " not divisible by 4 heads");
  }
  if (shake_shake && !has_branches(variant))
    throw std::invalid_argument("DetectorConfig: shake-shake requires a multi-branch variant");
  for (const auto& scale : anchors)
    for (const auto& a : scale)
      if (!(a.w > 0 && a.h > 0)) throw std::invalid_argument("DetectorConfig: anchors must be positive");
}

DetectorConfig DetectorConfig::desk() { return DetectorConfig{}; }

DetectorConfig DetectorConfig::full_depth() {
  DetectorConfig c;
  c.input_size = 416;
  c.stage_depths = {1, 2, 8, 8, 4};
  c.stage_channels = {64, 128, 256, 512, 1024};
  c.stem_channels = 32;
  c.num_classes = 20;
  return c;
}

std::size_t head_parameter_count(std::size_t channels, std::size_t num_classes) {
  const std::size_t out = 3 * (5 + num_classes);
  return channels * channels * 9 + channels  // 3x3 conv
         + 2 * channels                      // BN affine
         + channels * out + out;             // 1x1 prediction conv
}

template <typename T>
Detector<T>::Detector(const DetectorConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  SeededRng init(init_seed, /*stream=*/0x1417);
  stem_ = ConvBnMish<T>(store_, "backbone.stem", 3, config_.stem_channels, 3, 1, init);
  std::size_t in = config_.stem_channels;
  for (std::size_t s = 0; s < 5; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s + 1);
    const std::size_t C = config_.stage_channels[s];
    stages_[s].down = ConvBnMish<T>(store_, prefix + ".down", in, C, 3, 2, init);
    for (std::size_t m = 0; m < config_.stage_depths[s]; ++m) {
      TransformerConfig tc;
      tc.in_channels = C;
      tc.out_channels = C;
      tc.csam = CsamConfig{config_.variant, C, 4, config_.shake_shake};
      stages_[s].modules.emplace_back(store_, prefix + ".tf" + std::to_string(m), tc, init);
    }
    in = C;
  }
  const auto& ch = config_.stage_channels;
  fuse_[2] = ConvBnMish<T>(store_, "neck.fuse5", ch[4], ch[4], 1, 1, init);
  fuse_[1] = ConvBnMish<T>(store_, "neck.fuse4", ch[4] + ch[3], ch[3], 1, 1, init);
  fuse_[0] = ConvBnMish<T>(store_, "neck.fuse3", ch[3] + ch[2], ch[2], 1, 1, init);

  const std::size_t per = config_.outputs_per_anchor();
  const double objectness_prior = std::log(0.01 / 0.99);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string prefix = "head.p" + std::to_string(s + 3);
    const std::size_t C = ch[s + 2];
    head_[s].body = ConvBnMish<T>(store_, prefix + ".body", C, C, 3, 1, init);
    head_[s].out = Conv2d<T>(store_, prefix + ".pred", C, config_.head_channels(), 1, 1, init, 0.01);
    auto bias = head_[s].out.bias().value.values();
    for (std::size_t a = 0; a < 3; ++a) bias[a * per + 4] = static_cast<T>(objectness_prior);
  }
}

template <typename T>
FeaturePyramid<T> Detector<T>::backbone(Context<T>& ctx, const Tensor<T>& images) const {
  const std::size_t S = config_.input_size;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != S || images.dim(3) != S)
    throw ShapeError("detector: expected [N,3," + std::to_string(S) + "," + std::to_string(S) + "] input, got " +
                     shape_str(images.shape()));
  Tensor<T> x = stem_(ctx, images);
  FeaturePyramid<T> out;
  for (std::size_t s = 0; s < 5; ++s) {
    x = stages_[s].down(ctx, x);
    for (const auto& m : stages_[s].modules) x = m(ctx, x);
    if (s == 2) out.p3 = x;
    if (s == 3) out.p4 = x;
    if (s == 4) out.p5 = x;
  }
  return out;
}

template <typename T>
FeaturePyramid<T> Detector<T>::neck(Context<T>& ctx, const FeaturePyramid<T>& p) const {
  auto check = [](const Tensor<T>& fine, const Tensor<T>& coarse) {
    if (fine.dim(2) != 2 * coarse.dim(2) || fine.dim(3) != 2 * coarse.dim(3))
      throw ShapeError("neck: pyramid extents " + shape_str(fine.shape()) + " and " + shape_str(coarse.shape()) +
                       " are not a factor-2 chain");
  };
  check(p.p4, p.p5);
  check(p.p3, p.p4);
  FeaturePyramid<T> n;
  n.p5 = fuse_[2](ctx, p.p5);
  n.p4 = fuse_[1](ctx, ops::concat_channels(ctx.tape, {ops::upsample_bilinear2x(ctx.tape, n.p5), p.p4}));
  n.p3 = fuse_[0](ctx, ops::concat_channels(ctx.tape, {ops::upsample_bilinear2x(ctx.tape, n.p4), p.p3}));
  return n;
}

template <typename T>
RawPrediction<T> Detector<T>::head(Context<T>& ctx, const FeaturePyramid<T>& fused) const {
  const std::array<const Tensor<T>*, 3> in{&fused.p3, &fused.p4, &fused.p5};
  RawPrediction<T> out;
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor<T> h = head_[s].body(ctx, *in[s]);
    if (ctx.training() && ctx.dropblock_keep < 1.0) {
      if (!ctx.rng) throw std::logic_error("detector: DropBlock in train mode requires an rng");
      const std::size_t block = std::min({ctx.dropblock_block, h.dim(2), h.dim(3)});
      h = dropblock(ctx.tape, h, ctx.dropblock_keep, block, ctx.mode, *ctx.rng);
    }
    out[s] = head_[s].out(ctx, h);
  }
  return out;
}

template <typename T>
RawPrediction<T> Detector<T>::forward(Context<T>& ctx, const Tensor<T>& images) const {
  return head(ctx, neck(ctx, backbone(ctx, images)));
}

std::vector<Detection> decode(const Tensor<float>& raw, std::size_t image, const std::array<AnchorSize, 3>& anchors,
                              double stride, std::size_t num_classes, double conf_threshold, double image_w,
                              double image_h) {
  const std::size_t per = 5 + num_classes;
  if (raw.rank() != 4 || raw.dim(1) != 3 * per)
    throw ShapeError("decode: expected " + std::to_string(3 * per) + " channels, got " + shape_str(raw.shape()));
  const std::size_t H = raw.dim(2), W = raw.dim(3), hw = H * W;
  const float* base = raw.data() + image * raw.dim(1) * hw;
  std::vector<Detection> out;
  for (std::size_t a = 0; a < 3; ++a) {
    const float* ch = base + a * per * hw;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t p = i * W + j;
        const double obj = kernels::sigmoid<double>(ch[4 * hw + p]);
        if (obj < conf_threshold) continue;
        std::size_t best = 0;
        for (std::size_t c = 1; c < num_classes; ++c)
          if (ch[(5 + c) * hw + p] > ch[(5 + best) * hw + p]) best = c;
        const double score = obj * kernels::sigmoid<double>(ch[(5 + best) * hw + p]);
        if (score < conf_threshold) continue;
        const double cx = (static_cast<double>(j) + kernels::sigmoid<double>(ch[0 * hw + p])) * stride;
        const double cy = (static_cast<double>(i) + kernels::sigmoid<double>(ch[1 * hw + p])) * stride;
        const double w = anchors[a].w * std::exp(std::min<double>(ch[2 * hw + p], 20.0));
        const double h = anchors[a].h * std::exp(std::min<double>(ch[3 * hw + p], 20.0));
        Box b{std::clamp(cx - w / 2, 0.0, image_w), std::clamp(cy - h / 2, 0.0, image_h),
              std::clamp(cx + w / 2, 0.0, image_w), std::clamp(cy + h / 2, 0.0, image_h)};
        if (!(b.xmin < b.xmax && b.ymin < b.ymax)) continue;
        out.push_back(Detection{b, static_cast<int>(best), score});
      }
  }
  return out;
}

std::vector<Detection> decode_all(const RawPrediction<float>& raw, std::size_t image, const DetectorConfig& config,
                                  double conf_threshold) {
  std::vector<Detection> all;
  const double S = static_cast<double>(config.input_size);
  for (std::size_t s = 0; s < 3; ++s) {
    auto d = decode(raw[s], image, config.anchors[s], static_cast<double>(kStrides[s]), config.num_classes,
                    conf_threshold, S, S);
    all.insert(all.end(), d.begin(), d.end());
  }
  return all;
}

template class Detector<float>;
template class Detector<double>;

}  // namespace yf

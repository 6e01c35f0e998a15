#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "yolo_former/attention.hpp"
#include "yolo_former/box.hpp"

namespace yf {

struct AnchorSize {
  double w = 0, h = 0;
};

using AnchorSet = std::array<std::array<AnchorSize, 3>, 3>;  // [scale][anchor], scales finest first

inline constexpr std::array<std::size_t, 3> kStrides{8, 16, 32};

/// Per scale {0.75, 1.5, 3} x stride.
AnchorSet default_anchors();

struct DetectorConfig {
  std::size_t input_size = 96;
  std::size_t num_classes = 2;
  std::array<std::size_t, 5> stage_depths{1, 1, 2, 2, 1};
  std::array<std::size_t, 5> stage_channels{16, 32, 64, 128, 256};
  std::size_t stem_channels = 8;
  CsamVariant variant = CsamVariant::single_head;
  bool shake_shake = false;
  AnchorSet anchors = default_anchors();

  void validate() const;

  std::size_t outputs_per_anchor() const { return 5 + num_classes; }
  std::size_t head_channels() const { return 3 * outputs_per_anchor(); }
  std::size_t grid(std::size_t scale) const { return input_size / kStrides.at(scale); }

  /// 7 transformer modules; trainable on a laptop.
  static DetectorConfig desk();
  /// 23 transformer modules ([1,2,8,8,4]), one per CSP-Darknet-53 residual block.
  static DetectorConfig full_depth();
};

template <typename T>
struct FeaturePyramid {
  Tensor<T> p3, p4, p5;  // strides 8, 16, 32
};

/// Per scale: [N, 3*(5+classes), H, W]; per anchor tx, ty, tw, th, objectness, class logits.
template <typename T>
using RawPrediction = std::array<Tensor<T>, 3>;

template <typename T>
class Detector {
 public:
  Detector(const DetectorConfig& config, std::uint64_t init_seed);

  FeaturePyramid<T> backbone(Context<T>& ctx, const Tensor<T>& images) const;
  FeaturePyramid<T> neck(Context<T>& ctx, const FeaturePyramid<T>& pyramid) const;
  RawPrediction<T> head(Context<T>& ctx, const FeaturePyramid<T>& fused) const;
  RawPrediction<T> forward(Context<T>& ctx, const Tensor<T>& images) const;

  const DetectorConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  std::vector<TransformerModule<T>>& stage_modules(std::size_t stage) { return stages_.at(stage).modules; }
  ConvBnMish<T>& stem() { return stem_; }

 private:
  struct Stage {
    ConvBnMish<T> down;
    std::vector<TransformerModule<T>> modules;
  };
  struct HeadScale {
    ConvBnMish<T> body;
    Conv2d<T> out;
  };

  DetectorConfig config_;
  ParamStore<T> store_;
  ConvBnMish<T> stem_;
  std::array<Stage, 5> stages_;
  std::array<ConvBnMish<T>, 3> fuse_;  // n3, n4, n5
  std::array<HeadScale, 3> head_;
};

/// Decodes one scale of one image:
///   cx = (j + sigmoid(tx)) * stride, cy = (i + sigmoid(ty)) * stride,
///   w = anchor_w * exp(tw), h = anchor_h * exp(th),
///   score = sigmoid(obj) * sigmoid(best class logit).
/// Keeps score >= conf_threshold and clips to [0,image_w] x [0,image_h].
std::vector<Detection> decode(const Tensor<float>& raw, std::size_t image, const std::array<AnchorSize, 3>& anchors,
                              double stride, std::size_t num_classes, double conf_threshold, double image_w,
                              double image_h);

/// All three scales of one image.
std::vector<Detection> decode_all(const RawPrediction<float>& raw, std::size_t image, const DetectorConfig& config,
                                  double conf_threshold);

/// Closed-form parameter count of one head scale with `channels` input channels.
std::size_t head_parameter_count(std::size_t channels, std::size_t num_classes);

extern template class Detector<float>;
extern template class Detector<double>;

}  // namespace yf

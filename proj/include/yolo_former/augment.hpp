#pragma once

// Box-aware augmentation on 8-bit RGB samples. Every op is a pure function of
// its inputs and the generator state, so a (sample, policy, seed) triple
// always yields the same bytes.
//
// Coordinates are continuous with pixel edges on integers: pixel (x, y)
// covers [x, x+1) x [y, y+1) and its center sits at (x + 0.5, y + 0.5).
// Boxes that leave the raster are clipped; clipped boxes under 1 px^2 are
// dropped and counted in the log.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "yolo_former/image.hpp"
#include "yolo_former/rng.hpp"

namespace yf {

inline constexpr std::uint8_t kFillGray = 114;

struct AugmentLog {
  std::vector<std::string> ops;
  std::size_t dropped_boxes = 0;
};

// ---- geometric ----------------------------------------------------------------

/// Padded-canvas rotation frame for a W x H raster.
struct RotationFrame {
  double width = 0, height = 0;          // source
  double canvas_w = 0, canvas_h = 0;     // W|cos| + H|sin|, W|sin| + H|cos|
  double cos_t = 1, sin_t = 0;

  RotationFrame(double w, double h, double degrees);
  /// Source point -> canvas point (counter-clockwise as displayed).
  std::array<double, 2> to_canvas(double x, double y) const;
  /// Canvas point -> source point.
  std::array<double, 2> to_source(double x, double y) const;
};

/// Rotates about the center onto the padded canvas and resizes the canvas
/// back to W x H in one bilinear pass (fill 114 outside the source). Boxes
/// become the hull of their rotated corners. |degrees| must not exceed
/// max_degrees. Angle 0 returns the input unchanged.
Sample constrained_rotate(const Sample& s, double degrees, AugmentLog* log = nullptr, double max_degrees = 45.0);

/// Shrinks to (round(f*W), round(f*H)) and pastes at (offset_x, offset_y) on
/// a gray canvas of the original size.
Sample zoom_out_at(const Sample& s, double factor, std::size_t offset_x, std::size_t offset_y,
                   AugmentLog* log = nullptr);
/// Offset drawn uniformly over every position that keeps the image inside.
Sample zoom_out(const Sample& s, double factor, SeededRng& rng, AugmentLog* log = nullptr);

/// Four sources stretched into the quadrants around junction (jx, jy) of an
/// out_size x out_size canvas: 0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right.
Sample mosaic_at(const std::array<const Sample*, 4>& sources, std::size_t out_size, std::size_t jx, std::size_t jy,
                 AugmentLog* log = nullptr);
/// Junction uniform over the central half of the canvas.
Sample mosaic(const std::array<const Sample*, 4>& sources, std::size_t out_size, SeededRng& rng,
              AugmentLog* log = nullptr);

/// Gray square of side `side` with its top-left corner at (x, y); boxes untouched.
Sample cutout_at(const Sample& s, std::size_t x, std::size_t y, std::size_t side, AugmentLog* log = nullptr);
/// Side uniform in [10%, 30%] of min(W, H), placed fully inside.
Sample cutout(const Sample& s, SeededRng& rng, AugmentLog* log = nullptr);

Sample horizontal_flip(const Sample& s, AugmentLog* log = nullptr);
/// Integer shift of up to 20% of each side, gray fill.
Sample translate(const Sample& s, SeededRng& rng, AugmentLog* log = nullptr);
/// Random crop of 60-100% of each side, resized back to W x H.
Sample crop(const Sample& s, SeededRng& rng, AugmentLog* log = nullptr);

// ---- photometric ----------------------------------------------------------------

// Magnitude M runs 0..30. Per-pixel rules (v in 0..255, luma
// L = 0.299 R + 0.587 G + 0.114 B, sat() rounds half up and clamps):
//   brightness  f = 1 +/- 0.03 M              v' = sat(f v)
//   contrast    f = 1 +/- 0.03 M, mu = mean L  v' = sat(mu + f (v - mu))
//   saturation  f = 1 +/- 0.03 M              v' = sat(L + f (v - L))
//   hue         rotate the YIQ chroma plane by +/- 6 M degrees
//   posterize   bits = 8 - floor(7 M / 30)    v' = v & ~(2^(8-bits) - 1)
//   solarize    t = 256 - round(256 M / 30)   v' = v >= t ? 255 - v : v
//   invert                                     v' = 255 - v
//   sharpen     f = 1 + 0.03 M, blended against the 3x3 smoothing kernel
//               [1 1 1; 1 5 1; 1 1 1] / 13 on interior pixels
//   equalize    per-channel cumulative-histogram lookup
// The sign of +/- is one fair coin from the generator.
enum class PhotoOp { brightness, contrast, saturation, hue, posterize, solarize, invert, sharpen, equalize, cutout };

inline constexpr std::array<PhotoOp, 10> kNonGeometricOps{
    PhotoOp::brightness, PhotoOp::contrast, PhotoOp::saturation, PhotoOp::hue,     PhotoOp::posterize,
    PhotoOp::solarize,   PhotoOp::invert,   PhotoOp::sharpen,    PhotoOp::equalize, PhotoOp::cutout};

std::string_view to_string(PhotoOp op);
/// Throws std::invalid_argument for unknown names, naming geometric ops as such.
PhotoOp parse_photo_op(std::string_view name);

Image brightness(const Image& im, double factor);
Image contrast(const Image& im, double factor);
Image saturation(const Image& im, double factor);
Image hue_rotate(const Image& im, double degrees);
Image posterize(const Image& im, int bits);
Image solarize(const Image& im, int threshold);
Image invert(const Image& im);
Image sharpen(const Image& im, double factor);
Image equalize(const Image& im);

Sample apply_op(const Sample& s, PhotoOp op, int magnitude, SeededRng& rng, AugmentLog* log = nullptr);

// ---- policies ---------------------------------------------------------------

enum class PolicyKind { none, randaugment, augmix };

std::string_view to_string(PolicyKind k);
PolicyKind parse_policy(std::string_view name);

struct AugmentPolicy {
  PolicyKind policy = PolicyKind::none;
  int randaug_n = 2;
  int randaug_m = 10;
  int augmix_chains = 3;
  int augmix_severity = 7;
  std::array<int, 2> augmix_depth_range{1, 3};
  double geometric_prob = 0.5;
  double max_rotation = 45.0;
  double mix_alpha = 1.0, mix_beta = 1.0;
  std::vector<std::string> randaug_ops = all_op_names();
  std::vector<std::string> augmix_ops = all_op_names(false);

  void validate() const;
  static std::vector<std::string> all_op_names(bool with_cutout = true);
};

/// N ops drawn uniformly with replacement from randaug_ops, applied at magnitude M.
Sample rand_augment(const Sample& s, const AugmentPolicy& policy, SeededRng& rng, AugmentLog* log = nullptr);

/// (1 - m) * original + m * sum_i w_i * chains[i], rounded per channel.
Image augmix_combine(const Image& original, const std::vector<Image>& chains, const std::vector<double>& weights,
                     double m);

/// Chains of depth uniform in the depth range at the configured severity,
/// Dirichlet(1,..,1) chain weights, Beta(alpha, beta) blend with the original.
Sample aug_mix(const Sample& s, const AugmentPolicy& policy, SeededRng& rng, AugmentLog* log = nullptr);

/// {translate, crop, zoom_out, horizontal_flip, constrained_rotate} shuffled,
/// each applied with probability geometric_prob.
Sample geometric_pipeline(const Sample& s, const AugmentPolicy& policy, SeededRng& rng, AugmentLog* log = nullptr);

/// Geometric pipeline (when enabled) followed by the colour policy.
Sample augment_sample(const Sample& s, const AugmentPolicy& policy, bool geometric, SeededRng& rng,
                      AugmentLog* log = nullptr);

}  // namespace yf

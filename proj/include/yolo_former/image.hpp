#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "yolo_former/box.hpp"
#include "yolo_former/tensor.hpp"

namespace yf {

/// 8-bit RGB raster, row-major, channels interleaved.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  bool empty() const { return pixels.empty(); }

  bool operator==(const Image&) const = default;
};

struct Sample {
  Image image;
  std::vector<LabeledBox> boxes;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PPM (P6, maxval 255). Comments after the magic are skipped.
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

/// Rounds to the nearest integer (halves up) and clamps to [0, 255].
std::uint8_t saturate_u8(double v);

/// Bilinear sample at continuous pixel coordinates (pixel centers at integer
/// positions); coordinates outside [0,W-1]x[0,H-1] read as `fill`.
double sample_bilinear(const Image& image, double x, double y, std::size_t channel, double fill);

/// Half-pixel-center bilinear resize with edge clamping.
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

/// Resizes the raster and scales box coordinates by the same factors.
Sample resize_sample(const Sample& sample, std::size_t width, std::size_t height);

/// 0 <= xmin < xmax <= W and 0 <= ymin < ymax <= H.
bool box_in_bounds(const Box& b, double width, double height);

/// Clips to the raster; returns false when the clipped area is below `min_area`.
bool clip_box(Box& b, double width, double height, double min_area = 1.0);

/// Stacks same-sized images into [N, 3, H, W] with values in [0, 1].
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images);

}  // namespace yf

#include "yolo_former/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace yf {

namespace {

struct PpmReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ImageError(std::string("ppm: missing ") + what);
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw ImageError(std::string("ppm: ") + what + " too large");
    }
    return v;
  }
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ImageError("ppm: not a binary P6 file");
  PpmReader r{bytes, 2};
  const std::size_t w = r.number("width");
  const std::size_t h = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) throw ImageError("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
  if (w == 0 || h == 0) throw ImageError("ppm: empty raster");
  if (r.pos >= bytes.size() || !std::isspace(bytes[r.pos])) throw ImageError("ppm: malformed header");
  ++r.pos;
  const std::size_t n = w * h * 3;
  if (bytes.size() - r.pos < n)
    throw ImageError("ppm: truncated pixel data (" + std::to_string(bytes.size() - r.pos) + " of " +
                     std::to_string(n) + " bytes)");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<long>(r.pos), n, img.pixels.begin());
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint8_t saturate_u8(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

double sample_bilinear(const Image& image, double x, double y, std::size_t channel, double fill) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const long W = static_cast<long>(image.width), H = static_cast<long>(image.height);
  auto px = [&](long xx, long yy) -> double {
    if (xx < 0 || yy < 0 || xx >= W || yy >= H) return fill;
    return image.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy), channel);
  };
  const double top = px(x0, y0) * (1 - ax) + px(x0 + 1, y0) * ax;
  const double bottom = px(x0, y0 + 1) * (1 - ax) + px(x0 + 1, y0 + 1) * ax;
  return top * (1 - ay) + bottom * ay;
}

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ImageError("resize: target must be non-empty");
  if (width == image.width && height == image.height) return image;
  Image out(width, height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double maxx = static_cast<double>(image.width - 1), maxy = static_cast<double>(image.height - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double src_y = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, maxy);
    for (std::size_t x = 0; x < width; ++x) {
      const double src_x = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, maxx);
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = saturate_u8(sample_bilinear(image, src_x, src_y, c, 0.0));
    }
  }
  return out;
}

Sample resize_sample(const Sample& sample, std::size_t width, std::size_t height) {
  Sample out{resize_bilinear(sample.image, width, height), sample.boxes};
  const double fx = static_cast<double>(width) / static_cast<double>(sample.image.width);
  const double fy = static_cast<double>(height) / static_cast<double>(sample.image.height);
  for (auto& lb : out.boxes) lb.box = Box{lb.box.xmin * fx, lb.box.ymin * fy, lb.box.xmax * fx, lb.box.ymax * fy};
  return out;
}

bool box_in_bounds(const Box& b, double width, double height) {
  return b.xmin >= 0 && b.xmin < b.xmax && b.xmax <= width && b.ymin >= 0 && b.ymin < b.ymax && b.ymax <= height;
}

bool clip_box(Box& b, double width, double height, double min_area) {
  b.xmin = std::clamp(b.xmin, 0.0, width);
  b.xmax = std::clamp(b.xmax, 0.0, width);
  b.ymin = std::clamp(b.ymin, 0.0, height);
  b.ymax = std::clamp(b.ymax, 0.0, height);
  return b.xmin < b.xmax && b.ymin < b.ymax && b.area() >= min_area;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const std::size_t W = images[0]->width, H = images[0]->height, hw = W * H;
  Tensor<T> out(Shape{images.size(), 3, H, W});
  T* d = out.data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = *images[n];
    if (im.width != W || im.height != H)
      throw ShapeError("images_to_tensor: image " + std::to_string(n) + " is " + std::to_string(im.width) + "x" +
                       std::to_string(im.height) + ", expected " + std::to_string(W) + "x" + std::to_string(H));
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < 3; ++c)
        d[(n * 3 + c) * hw + p] = static_cast<T>(im.pixels[p * 3 + c]) / T(255);
  }
  return out;
}

template Tensor<float> images_to_tensor<float>(const std::vector<const Image*>&);
template Tensor<double> images_to_tensor<double>(const std::vector<const Image*>&);

}  // namespace yf

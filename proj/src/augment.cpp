#include "yolo_former/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace yf {

namespace {

void note(AugmentLog* log, std::string entry) {
  if (log) log->ops.push_back(std::move(entry));
}

// Keeps boxes that still cover at least 1 px^2 after clipping.
std::vector<LabeledBox> keep_valid(std::vector<LabeledBox> boxes, double w, double h, AugmentLog* log) {
  std::vector<LabeledBox> out;
  out.reserve(boxes.size());
  for (auto& b : boxes) {
    if (clip_box(b.box, w, h)) out.push_back(b);
    else if (log) ++log->dropped_boxes;
  }
  return out;
}

double luma(const Image& im, std::size_t p) {
  const auto* px = &im.pixels[p * 3];
  return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
}

template <typename F>
Image map_channels(const Image& im, F f) {
  Image out = im;
  for (auto& v : out.pixels) v = f(v);
  return out;
}

double signed_factor(int magnitude, SeededRng& rng) {
  const double d = 0.03 * magnitude;
  return rng.bernoulli(0.5) ? 1.0 + d : 1.0 - d;
}

}  // namespace

RotationFrame::RotationFrame(double w, double h, double degrees) : width(w), height(h) {
  const double t = degrees * std::numbers::pi / 180.0;
  cos_t = std::cos(t);
  sin_t = std::sin(t);
  canvas_w = w * std::abs(cos_t) + h * std::abs(sin_t);
  canvas_h = w * std::abs(sin_t) + h * std::abs(cos_t);
}

std::array<double, 2> RotationFrame::to_canvas(double x, double y) const {
  const double dx = x - width / 2, dy = y - height / 2;
  return {cos_t * dx + sin_t * dy + canvas_w / 2, -sin_t * dx + cos_t * dy + canvas_h / 2};
}

std::array<double, 2> RotationFrame::to_source(double x, double y) const {
  const double dx = x - canvas_w / 2, dy = y - canvas_h / 2;
  return {cos_t * dx - sin_t * dy + width / 2, sin_t * dx + cos_t * dy + height / 2};
}

Sample constrained_rotate(const Sample& s, double degrees, AugmentLog* log, double max_degrees) {
  if (std::abs(degrees) > max_degrees)
    throw std::invalid_argument("constrained_rotate: angle " + std::to_string(degrees) + " exceeds the " +
                                std::to_string(max_degrees) + " degree cap");
  note(log, "rotate(" + std::to_string(degrees) + ")");
  if (degrees == 0.0) return s;
  const std::size_t W = s.image.width, H = s.image.height;
  const double w = static_cast<double>(W), h = static_cast<double>(H);
  const RotationFrame f(w, h, degrees);
  const double kx = f.canvas_w / w, ky = f.canvas_h / h;
  Sample out;
  out.image = Image(W, H);
  for (std::size_t v = 0; v < H; ++v)
    for (std::size_t u = 0; u < W; ++u) {
      const auto src = f.to_source((static_cast<double>(u) + 0.5) * kx, (static_cast<double>(v) + 0.5) * ky);
      for (std::size_t c = 0; c < 3; ++c)
        out.image.at(u, v, c) = saturate_u8(sample_bilinear(s.image, src[0] - 0.5, src[1] - 0.5, c, kFillGray));
    }
  std::vector<LabeledBox> boxes;
  for (const auto& lb : s.boxes) {
    const Box& b = lb.box;
    const std::array<std::array<double, 2>, 4> corners{
        {{b.xmin, b.ymin}, {b.xmax, b.ymin}, {b.xmin, b.ymax}, {b.xmax, b.ymax}}};
    Box hull{1e300, 1e300, -1e300, -1e300};
    for (const auto& c : corners) {
      const auto p = f.to_canvas(c[0], c[1]);
      const double x = p[0] / kx, y = p[1] / ky;
      hull = Box{std::min(hull.xmin, x), std::min(hull.ymin, y), std::max(hull.xmax, x), std::max(hull.ymax, y)};
    }
    boxes.push_back({hull, lb.class_id});
  }
  out.boxes = keep_valid(std::move(boxes), w, h, log);
  return out;
}

Sample zoom_out_at(const Sample& s, double factor, std::size_t ox, std::size_t oy, AugmentLog* log) {
  if (!(factor > 0.0 && factor <= 1.0))
    throw std::invalid_argument("zoom_out: factor " + std::to_string(factor) + " outside (0, 1]");
  const std::size_t W = s.image.width, H = s.image.height;
  const std::size_t nw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * W)));
  const std::size_t nh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * H)));
  if (ox + nw > W || oy + nh > H) throw std::invalid_argument("zoom_out: offset places the image off the canvas");
  note(log, "zoom_out(" + std::to_string(factor) + ")");
  if (nw == W && nh == H && ox == 0 && oy == 0) return s;
  const Image small = resize_bilinear(s.image, nw, nh);
  Sample out;
  out.image = Image(W, H, kFillGray);
  for (std::size_t y = 0; y < nh; ++y)
    std::copy_n(&small.pixels[y * nw * 3], nw * 3, &out.image.pixels[((oy + y) * W + ox) * 3]);
  const double fx = static_cast<double>(nw) / static_cast<double>(W);
  const double fy = static_cast<double>(nh) / static_cast<double>(H);
  std::vector<LabeledBox> boxes;
  for (const auto& lb : s.boxes) {
    const Box& b = lb.box;
    boxes.push_back({Box{b.xmin * fx + static_cast<double>(ox), b.ymin * fy + static_cast<double>(oy),
                         b.xmax * fx + static_cast<double>(ox), b.ymax * fy + static_cast<double>(oy)},
                     lb.class_id});
  }
  out.boxes = keep_valid(std::move(boxes), static_cast<double>(W), static_cast<double>(H), log);
  return out;
}

Sample zoom_out(const Sample& s, double factor, SeededRng& rng, AugmentLog* log) {
  if (!(factor > 0.0 && factor <= 1.0))
    throw std::invalid_argument("zoom_out: factor " + std::to_string(factor) + " outside (0, 1]");
  const std::size_t W = s.image.width, H = s.image.height;
  const std::size_t nw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * W)));
  const std::size_t nh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * H)));
  const std::size_t ox = rng.below(W - nw + 1), oy = rng.below(H - nh + 1);
  return zoom_out_at(s, factor, ox, oy, log);
}

Sample mosaic_at(const std::array<const Sample*, 4>& src, std::size_t S, std::size_t jx, std::size_t jy,
                 AugmentLog* log) {
  if (jx == 0 || jy == 0 || jx >= S || jy >= S)
    throw std::invalid_argument("mosaic: junction must lie strictly inside the canvas");
  note(log, "mosaic(" + std::to_string(jx) + "," + std::to_string(jy) + ")");
  Sample out;
  out.image = Image(S, S);
  const std::array<std::array<std::size_t, 4>, 4> quads{{{0, 0, jx, jy}, {jx, 0, S, jy}, {0, jy, jx, S}, {jx, jy, S, S}}};
  for (std::size_t q = 0; q < 4; ++q) {
    const auto [x0, y0, x1, y1] = quads[q];
    const Sample& s = *src[q];
    const Image tile = resize_bilinear(s.image, x1 - x0, y1 - y0);
    for (std::size_t y = y0; y < y1; ++y)
      std::copy_n(&tile.pixels[(y - y0) * tile.width * 3], tile.width * 3, &out.image.pixels[(y * S + x0) * 3]);
    const double fx = static_cast<double>(x1 - x0) / static_cast<double>(s.image.width);
    const double fy = static_cast<double>(y1 - y0) / static_cast<double>(s.image.height);
    for (const auto& lb : s.boxes) {
      Box b{lb.box.xmin * fx + static_cast<double>(x0), lb.box.ymin * fy + static_cast<double>(y0),
            lb.box.xmax * fx + static_cast<double>(x0), lb.box.ymax * fy + static_cast<double>(y0)};
      b.xmin = std::clamp(b.xmin, static_cast<double>(x0), static_cast<double>(x1));
      b.xmax = std::clamp(b.xmax, static_cast<double>(x0), static_cast<double>(x1));
      b.ymin = std::clamp(b.ymin, static_cast<double>(y0), static_cast<double>(y1));
      b.ymax = std::clamp(b.ymax, static_cast<double>(y0), static_cast<double>(y1));
      if (b.xmin < b.xmax && b.ymin < b.ymax && b.area() >= 1.0) out.boxes.push_back({b, lb.class_id});
      else if (log) ++log->dropped_boxes;
    }
  }
  return out;
}

Sample mosaic(const std::array<const Sample*, 4>& src, std::size_t S, SeededRng& rng, AugmentLog* log) {
  if (S < 4) throw std::invalid_argument("mosaic: output size must be at least 4");
  const std::size_t lo = (S + 3) / 4, hi = (3 * S) / 4;
  const std::size_t jx = lo + rng.below(hi - lo + 1);
  const std::size_t jy = lo + rng.below(hi - lo + 1);
  return mosaic_at(src, S, jx, jy, log);
}

Sample cutout_at(const Sample& s, std::size_t x, std::size_t y, std::size_t side, AugmentLog* log) {
  note(log, "cutout(" + std::to_string(side) + ")");
  if (side == 0) return s;
  if (x + side > s.image.width || y + side > s.image.height)
    throw std::invalid_argument("cutout: rectangle leaves the image");
  Sample out = s;
  for (std::size_t yy = y; yy < y + side; ++yy)
    std::fill_n(&out.image.pixels[(yy * s.image.width + x) * 3], side * 3, kFillGray);
  return out;
}

Sample cutout(const Sample& s, SeededRng& rng, AugmentLog* log) {
  const std::size_t m = std::min(s.image.width, s.image.height);
  const auto lo = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(m)));
  const auto hi = std::max(lo, static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(m))));
  const std::size_t side = std::min(m, lo + rng.below(hi - lo + 1));
  const std::size_t x = rng.below(s.image.width - side + 1), y = rng.below(s.image.height - side + 1);
  return cutout_at(s, x, y, side, log);
}

Sample horizontal_flip(const Sample& s, AugmentLog* log) {
  note(log, "hflip");
  const std::size_t W = s.image.width, H = s.image.height;
  Sample out;
  out.image = Image(W, H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.image.at(x, y, c) = s.image.at(W - 1 - x, y, c);
  const double w = static_cast<double>(W);
  for (const auto& lb : s.boxes)
    out.boxes.push_back({Box{w - lb.box.xmax, lb.box.ymin, w - lb.box.xmin, lb.box.ymax}, lb.class_id});
  return out;
}

Sample translate(const Sample& s, SeededRng& rng, AugmentLog* log) {
  const long W = static_cast<long>(s.image.width), H = static_cast<long>(s.image.height);
  const long mx = W / 5, my = H / 5;
  const long dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * mx + 1))) - mx;
  const long dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * my + 1))) - my;
  note(log, "translate(" + std::to_string(dx) + "," + std::to_string(dy) + ")");
  Sample out;
  out.image = Image(s.image.width, s.image.height, kFillGray);
  for (long y = 0; y < H; ++y) {
    const long sy = y - dy;
    if (sy < 0 || sy >= H) continue;
    for (long x = 0; x < W; ++x) {
      const long sx = x - dx;
      if (sx < 0 || sx >= W) continue;
      for (std::size_t c = 0; c < 3; ++c)
        out.image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) =
            s.image.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), c);
    }
  }
  std::vector<LabeledBox> boxes;
  const double fx = static_cast<double>(dx), fy = static_cast<double>(dy);
  for (const auto& lb : s.boxes)
    boxes.push_back({Box{lb.box.xmin + fx, lb.box.ymin + fy, lb.box.xmax + fx, lb.box.ymax + fy}, lb.class_id});
  out.boxes = keep_valid(std::move(boxes), static_cast<double>(W), static_cast<double>(H), log);
  return out;
}

Sample crop(const Sample& s, SeededRng& rng, AugmentLog* log) {
  const std::size_t W = s.image.width, H = s.image.height;
  const auto min_w = static_cast<std::size_t>(std::ceil(0.6 * static_cast<double>(W)));
  const auto min_h = static_cast<std::size_t>(std::ceil(0.6 * static_cast<double>(H)));
  const std::size_t cw = min_w + rng.below(W - min_w + 1), ch = min_h + rng.below(H - min_h + 1);
  const std::size_t x0 = rng.below(W - cw + 1), y0 = rng.below(H - ch + 1);
  note(log, "crop(" + std::to_string(cw) + "x" + std::to_string(ch) + ")");
  Image part(cw, ch);
  for (std::size_t y = 0; y < ch; ++y)
    std::copy_n(&s.image.pixels[((y0 + y) * W + x0) * 3], cw * 3, &part.pixels[y * cw * 3]);
  Sample out;
  out.image = resize_bilinear(part, W, H);
  const double fx = static_cast<double>(W) / static_cast<double>(cw);
  const double fy = static_cast<double>(H) / static_cast<double>(ch);
  std::vector<LabeledBox> boxes;
  for (const auto& lb : s.boxes) {
    Box b = lb.box;
    b = Box{(b.xmin - static_cast<double>(x0)) * fx, (b.ymin - static_cast<double>(y0)) * fy,
            (b.xmax - static_cast<double>(x0)) * fx, (b.ymax - static_cast<double>(y0)) * fy};
    boxes.push_back({b, lb.class_id});
  }
  out.boxes = keep_valid(std::move(boxes), static_cast<double>(W), static_cast<double>(H), log);
  return out;
}

// ---- photometric ----------------------------------------------------------------

Image brightness(const Image& im, double f) {
  return map_channels(im, [f](std::uint8_t v) { return saturate_u8(f * v); });
}

Image contrast(const Image& im, double f) {
  const std::size_t n = im.width * im.height;
  double mu = 0.0;
  for (std::size_t p = 0; p < n; ++p) mu += luma(im, p);
  mu /= static_cast<double>(std::max<std::size_t>(n, 1));
  return map_channels(im, [f, mu](std::uint8_t v) { return saturate_u8(mu + f * (v - mu)); });
}

Image saturation(const Image& im, double f) {
  Image out = im;
  for (std::size_t p = 0; p < im.width * im.height; ++p) {
    const double L = luma(im, p);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[p * 3 + c] = saturate_u8(L + f * (im.pixels[p * 3 + c] - L));
  }
  return out;
}

Image hue_rotate(const Image& im, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
  Image out = im;
  for (std::size_t p = 0; p < im.width * im.height; ++p) {
    const double r = im.pixels[p * 3], g = im.pixels[p * 3 + 1], b = im.pixels[p * 3 + 2];
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double i0 = 0.596 * r - 0.274 * g - 0.322 * b;
    const double q0 = 0.211 * r - 0.523 * g + 0.312 * b;
    const double i = c * i0 - s * q0, q = s * i0 + c * q0;
    out.pixels[p * 3] = saturate_u8(y + 0.956 * i + 0.621 * q);
    out.pixels[p * 3 + 1] = saturate_u8(y - 0.272 * i - 0.647 * q);
    out.pixels[p * 3 + 2] = saturate_u8(y - 1.106 * i + 1.703 * q);
  }
  return out;
}

Image posterize(const Image& im, int bits) {
  if (bits < 1 || bits > 8) throw std::invalid_argument("posterize: bits must be in 1..8");
  const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
  return map_channels(im, [mask](std::uint8_t v) { return static_cast<std::uint8_t>(v & mask); });
}

Image solarize(const Image& im, int threshold) {
  return map_channels(im, [threshold](std::uint8_t v) {
    return static_cast<std::uint8_t>(v >= threshold ? 255 - v : v);
  });
}

Image invert(const Image& im) {
  return map_channels(im, [](std::uint8_t v) { return static_cast<std::uint8_t>(255 - v); });
}

Image sharpen(const Image& im, double f) {
  Image out = im;
  const std::size_t W = im.width, H = im.height;
  for (std::size_t y = 1; y + 1 < H; ++y)
    for (std::size_t x = 1; x + 1 < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        int acc = 4 * im.at(x, y, c);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += im.at(x + dx, y + dy, c);
        const double smooth = static_cast<double>(saturate_u8(acc / 13.0));
        out.at(x, y, c) = saturate_u8(smooth + f * (im.at(x, y, c) - smooth));
      }
  return out;
}

Image equalize(const Image& im) {
  Image out = im;
  const std::size_t n = im.width * im.height;
  for (std::size_t c = 0; c < 3; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t p = 0; p < n; ++p) ++hist[im.pixels[p * 3 + c]];
    std::size_t last = 0;
    for (std::size_t v = 0; v < 256; ++v)
      if (hist[v]) last = hist[v];
    const std::size_t step = (n - last) / 255;
    if (step == 0) continue;
    std::array<std::uint8_t, 256> lut{};
    std::size_t acc = step / 2;
    for (std::size_t v = 0; v < 256; ++v) {
      lut[v] = static_cast<std::uint8_t>(std::min<std::size_t>(acc / step, 255));
      acc += hist[v];
    }
    for (std::size_t p = 0; p < n; ++p) out.pixels[p * 3 + c] = lut[im.pixels[p * 3 + c]];
  }
  return out;
}

std::string_view to_string(PhotoOp op) {
  switch (op) {
    case PhotoOp::brightness: return "brightness";
    case PhotoOp::contrast: return "contrast";
    case PhotoOp::saturation: return "saturation";
    case PhotoOp::hue: return "hue";
    case PhotoOp::posterize: return "posterize";
    case PhotoOp::solarize: return "solarize";
    case PhotoOp::invert: return "invert";
    case PhotoOp::sharpen: return "sharpen";
    case PhotoOp::equalize: return "equalize";
    case PhotoOp::cutout: return "cutout";
  }
  return "?";
}

PhotoOp parse_photo_op(std::string_view name) {
  for (PhotoOp op : kNonGeometricOps)
    if (to_string(op) == name) return op;
  for (std::string_view g : {"translate", "crop", "zoom_out", "hflip", "horizontal_flip", "rotate", "mosaic"})
    if (g == name)
      throw std::invalid_argument("augment: '" + std::string(name) + "' is geometric and cannot appear in a colour chain");
  throw std::invalid_argument("augment: unknown op '" + std::string(name) + "'");
}

Sample apply_op(const Sample& s, PhotoOp op, int m, SeededRng& rng, AugmentLog* log) {
  if (m < 0 || m > 30) throw std::invalid_argument("augment: magnitude " + std::to_string(m) + " outside 0..30");
  if (op == PhotoOp::cutout) return cutout(s, rng, log);
  Sample out{Image{}, s.boxes};
  switch (op) {
    case PhotoOp::brightness: out.image = brightness(s.image, signed_factor(m, rng)); break;
    case PhotoOp::contrast: out.image = contrast(s.image, signed_factor(m, rng)); break;
    case PhotoOp::saturation: out.image = saturation(s.image, signed_factor(m, rng)); break;
    case PhotoOp::hue: out.image = hue_rotate(s.image, (rng.bernoulli(0.5) ? 6.0 : -6.0) * m); break;
    case PhotoOp::posterize: out.image = posterize(s.image, 8 - (7 * m) / 30); break;
    case PhotoOp::solarize:
      out.image = solarize(s.image, 256 - static_cast<int>(std::lround(256.0 * m / 30.0)));
      break;
    case PhotoOp::invert: out.image = invert(s.image); break;
    case PhotoOp::sharpen: out.image = sharpen(s.image, 1.0 + 0.03 * m); break;
    case PhotoOp::equalize: out.image = equalize(s.image); break;
    case PhotoOp::cutout: break;
  }
  note(log, std::string(to_string(op)) + "(" + std::to_string(m) + ")");
  return out;
}

// ---- policies ---------------------------------------------------------------

std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::none: return "none";
    case PolicyKind::randaugment: return "randaugment";
    case PolicyKind::augmix: return "augmix";
  }
  return "?";
}

PolicyKind parse_policy(std::string_view name) {
  for (PolicyKind k : {PolicyKind::none, PolicyKind::randaugment, PolicyKind::augmix})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("augment: unknown policy '" + std::string(name) +
                              "' (expected none, randaugment or augmix)");
}

std::vector<std::string> AugmentPolicy::all_op_names(bool with_cutout) {
  std::vector<std::string> out;
  for (PhotoOp op : kNonGeometricOps)
    if (with_cutout || op != PhotoOp::cutout) out.emplace_back(to_string(op));
  return out;
}

void AugmentPolicy::validate() const {
  if (randaug_n < 0) throw std::invalid_argument("augment: randaug_n must be non-negative");
  if (randaug_m < 0 || randaug_m > 30) throw std::invalid_argument("augment: randaug_m must be in 0..30");
  if (augmix_severity < 0 || augmix_severity > 30)
    throw std::invalid_argument("augment: augmix_severity must be in 0..30");
  if (augmix_chains < 1) throw std::invalid_argument("augment: augmix_chains must be positive");
  if (augmix_depth_range[0] < 1 || augmix_depth_range[1] < augmix_depth_range[0])
    throw std::invalid_argument("augment: augmix_depth_range must satisfy 1 <= lo <= hi");
  if (!(geometric_prob >= 0.0 && geometric_prob <= 1.0))
    throw std::invalid_argument("augment: geometric_prob must be in [0, 1]");
  if (!(max_rotation >= 0.0 && max_rotation <= 90.0))
    throw std::invalid_argument("augment: max_rotation must be in [0, 90]");
  if (!(mix_alpha > 0 && mix_beta > 0)) throw std::invalid_argument("augment: mix_alpha, mix_beta must be positive");
  if (randaug_ops.empty() || augmix_ops.empty()) throw std::invalid_argument("augment: op lists must be non-empty");
  for (const auto& n : randaug_ops) parse_photo_op(n);
  for (const auto& n : augmix_ops) parse_photo_op(n);
}

Sample rand_augment(const Sample& s, const AugmentPolicy& policy, SeededRng& rng, AugmentLog* log) {
  Sample cur = s;
  for (int i = 0; i < policy.randaug_n; ++i) {
    const auto& name = policy.randaug_ops[rng.below(policy.randaug_ops.size())];
    cur = apply_op(cur, parse_photo_op(name), policy.randaug_m, rng, log);
  }
  return cur;
}

Image augmix_combine(const Image& original, const std::vector<Image>& chains, const std::vector<double>& weights,
                     double m) {
  if (chains.size() != weights.size()) throw std::invalid_argument("augmix: one weight per chain required");
  if (m == 0.0) return original;
  Image out = original;
  for (std::size_t k = 0; k < original.pixels.size(); ++k) {
    double mix = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) mix += weights[c] * chains[c].pixels[k];
    out.pixels[k] = saturate_u8((1.0 - m) * original.pixels[k] + m * mix);
  }
  return out;
}

Sample aug_mix(const Sample& s, const AugmentPolicy& policy, SeededRng& rng, AugmentLog* log) {
  std::vector<Image> chains;
  for (int c = 0; c < policy.augmix_chains; ++c) {
    const int depth = rng.uniform_int(policy.augmix_depth_range[0], policy.augmix_depth_range[1]);
    Sample cur = s;
    for (int d = 0; d < depth; ++d) {
      const auto& name = policy.augmix_ops[rng.below(policy.augmix_ops.size())];
      cur = apply_op(cur, parse_photo_op(name), policy.augmix_severity, rng, log);
    }
    chains.push_back(std::move(cur.image));
  }
  const std::vector<double> alpha(chains.size(), 1.0);
  const auto w = rng.dirichlet(alpha);
  const double m = rng.beta(policy.mix_alpha, policy.mix_beta);
  note(log, "augmix_blend(" + std::to_string(m) + ")");
  return Sample{augmix_combine(s.image, chains, w, m), s.boxes};
}

Sample geometric_pipeline(const Sample& s, const AugmentPolicy& policy, SeededRng& rng, AugmentLog* log) {
  enum Geo { kTranslate, kCrop, kZoom, kFlip, kRotate };
  std::array<Geo, 5> order{kTranslate, kCrop, kZoom, kFlip, kRotate};
  rng.shuffle(order.begin(), order.end());
  Sample cur = s;
  for (Geo g : order) {
    if (!rng.bernoulli(policy.geometric_prob)) continue;
    switch (g) {
      case kTranslate: cur = translate(cur, rng, log); break;
      case kCrop: cur = crop(cur, rng, log); break;
      case kZoom: cur = zoom_out(cur, rng.uniform(0.5, 1.0), rng, log); break;
      case kFlip: cur = horizontal_flip(cur, log); break;
      case kRotate: {
        const double a = rng.uniform(-policy.max_rotation, policy.max_rotation);
        cur = constrained_rotate(cur, a, log, policy.max_rotation);
        break;
      }
    }
  }
  return cur;
}

Sample augment_sample(const Sample& s, const AugmentPolicy& policy, bool geometric, SeededRng& rng,
                      AugmentLog* log) {
  Sample cur = geometric ? geometric_pipeline(s, policy, rng, log) : s;
  switch (policy.policy) {
    case PolicyKind::none: return cur;
    case PolicyKind::randaugment: return rand_augment(cur, policy, rng, log);
    case PolicyKind::augmix: return aug_mix(cur, policy, rng, log);
  }
  return cur;
}

}  // namespace yf

#include "yolo_former/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "yolo_former/rng.hpp"

namespace yf {

std::vector<ManifestRecord> parse_manifest(const std::string& text, std::size_t num_classes) {
  std::vector<ManifestRecord> out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw ManifestError("manifest line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("image") || !j["image"].is_string()) fail("missing string field \"image\"");
    ManifestRecord rec;
    rec.image = j["image"].get<std::string>();
    if (rec.image.empty()) fail("empty image path");
    if (j.contains("boxes")) {
      if (!j["boxes"].is_array()) fail("\"boxes\" must be an array");
      std::size_t bi = 0;
      for (const auto& b : j["boxes"]) {
        if (!b.is_array() || b.size() != 5) fail("box " + std::to_string(bi) + " must be [xmin, ymin, xmax, ymax, class_id]");
        for (std::size_t k = 0; k < 5; ++k)
          if (!b[k].is_number()) fail("box " + std::to_string(bi) + " has a non-numeric entry");
        if (!b[4].is_number_integer()) fail("box " + std::to_string(bi) + " class_id must be an integer");
        LabeledBox lb{Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                      b[4].get<int>()};
        if (!(lb.box.xmin >= 0 && lb.box.xmin < lb.box.xmax && lb.box.ymin >= 0 && lb.box.ymin < lb.box.ymax))
          fail("box " + std::to_string(bi) + " is not ordered (need 0 <= min < max)");
        if (lb.class_id < 0 || static_cast<std::size_t>(lb.class_id) >= num_classes)
          fail("box " + std::to_string(bi) + " class_id " + std::to_string(lb.class_id) + " outside 0.." +
               std::to_string(num_classes == 0 ? 0 : num_classes - 1));
        rec.boxes.push_back(lb);
        ++bi;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<std::string> load_class_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read classes file " + path.string());
  std::vector<std::string> names;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

Dataset load_manifest(const std::filesystem::path& manifest, const std::filesystem::path& classes) {
  Dataset d;
  d.root = manifest.parent_path();
  d.class_names = load_class_names(classes.empty() ? d.root / "classes.txt" : classes);
  std::ifstream in(manifest);
  if (!in) throw ManifestError("cannot read manifest " + manifest.string());
  std::stringstream ss;
  ss << in.rdbuf();
  d.records = parse_manifest(ss.str(), d.class_names.size());
  return d;
}

void save_manifest(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream m(dir / "manifest.jsonl");
  for (const auto& r : data.records) {
    nlohmann::ordered_json j;
    j["image"] = r.image;
    auto& boxes = j["boxes"] = nlohmann::ordered_json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.box.xmin, b.box.ymin, b.box.xmax, b.box.ymax, b.class_id});
    m << j.dump() << '\n';
  }
  std::ofstream c(dir / "classes.txt");
  for (const auto& n : data.class_names) c << n << '\n';
  if (!m || !c) throw ManifestError("cannot write manifest into " + dir.string());
}

std::vector<Sample> load_samples(const Dataset& data) {
  std::vector<Sample> out;
  out.reserve(data.records.size());
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    Sample s{read_ppm(data.image_path(i)), data.records[i].boxes};
    for (const auto& b : s.boxes)
      if (!box_in_bounds(b.box, static_cast<double>(s.image.width), static_cast<double>(s.image.height)))
        throw ManifestError("manifest record " + std::to_string(i + 1) + ": box outside the " +
                            std::to_string(s.image.width) + "x" + std::to_string(s.image.height) + " image");
    out.push_back(std::move(s));
  }
  return out;
}

// ---- synthetic corpus ---------------------------------------------------------

void SyntheticSpec::validate() const {
  if (n_images == 0) throw std::invalid_argument("synth: n_images must be positive");
  if (classes.empty()) throw std::invalid_argument("synth: at least one class required");
  for (const auto& c : classes)
    if (c != "circle" && c != "square" && c != "triangle")
      throw std::invalid_argument("synth: unknown shape '" + c + "' (circle, square, triangle)");
  if (min_objects == 0 || max_objects < min_objects)
    throw std::invalid_argument("synth: need 1 <= min_objects <= max_objects");
  if (min_size < 4 || max_size < min_size || max_size > image_size)
    throw std::invalid_argument("synth: need 4 <= min_size <= max_size <= image_size");
}

namespace {

std::array<std::uint8_t, 3> random_color(SeededRng& rng) {
  return {static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
          static_cast<std::uint8_t>(rng.below(256))};
}

int color_distance(const std::array<std::uint8_t, 3>& a, const std::array<std::uint8_t, 3>& b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d += std::abs(int(a[c]) - int(b[c]));
  return d;
}

}  // namespace

std::vector<Sample> synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  const std::size_t S = spec.image_size;
  for (std::size_t n = 0; n < spec.n_images; ++n) {
    SeededRng rng(derive_seed(spec.seed, 0, n), /*stream=*/0x5e7);
    const auto bg = random_color(rng);
    Sample s;
    s.image = Image(S, S);
    for (std::size_t p = 0; p < S * S; ++p)
      for (int c = 0; c < 3; ++c) s.image.pixels[p * 3 + c] = bg[c];
    const std::size_t count = spec.min_objects + rng.below(spec.max_objects - spec.min_objects + 1);
    for (std::size_t o = 0; o < count; ++o) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int cls = static_cast<int>(rng.below(spec.classes.size()));
        const std::string& shape = spec.classes[cls];
        std::size_t side = spec.min_size + rng.below(spec.max_size - spec.min_size + 1);
        if (shape == "circle") side &= ~std::size_t{1};  // even diameter, integer radius
        const std::size_t x0 = rng.below(S - side + 1), y0 = rng.below(S - side + 1);
        const Box box{double(x0), double(y0), double(x0 + side), double(y0 + side)};
        bool clash = false;
        for (const auto& b : s.boxes)
          if (intersection_area(b.box, box) > 0) clash = true;
        auto color = random_color(rng);
        if (clash || color_distance(color, bg) < 150) continue;
        const double cx = double(x0) + double(side) / 2, cy = double(y0) + double(side) / 2, r = double(side) / 2;
        for (std::size_t y = y0; y < y0 + side; ++y)
          for (std::size_t x = x0; x < x0 + side; ++x) {
            const double px = double(x) + 0.5, py = double(y) + 0.5;
            bool inside = true;
            if (shape == "circle") {
              inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
            } else if (shape == "triangle") {
              // apex at top centre, base on the bottom edge
              const double t = (py - double(y0)) / double(side);
              inside = std::abs(px - cx) <= t * r;
            }
            if (inside)
              for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = color[c];
          }
        s.boxes.push_back({box, cls});
        break;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

Dataset write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  const auto samples = synth_generate(spec);
  std::filesystem::create_directories(dir / "img");
  Dataset d;
  d.root = dir;
  d.class_names = spec.classes;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img/%04zu.ppm", i);
    write_ppm(samples[i].image, dir / name);
    d.records.push_back({name, samples[i].boxes});
  }
  save_manifest(d, dir);
  return d;
}

// ---- anchors ------------------------------------------------------------------

namespace {

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

}  // namespace

std::vector<AnchorSize> kmeans_anchors(const std::vector<LabeledBox>& boxes, std::size_t k, std::uint64_t seed,
                                       std::size_t max_iterations) {
  if (k == 0) throw std::invalid_argument("anchors: k must be positive");
  if (boxes.size() < k)
    throw std::invalid_argument("anchors: need at least " + std::to_string(k) + " boxes, have " +
                                std::to_string(boxes.size()));
  std::vector<AnchorSize> pts;
  for (const auto& b : boxes) pts.push_back({b.box.width(), b.box.height()});
  // k-means++ seeding under the IoU distance.
  SeededRng rng(seed, /*stream=*/0xa2c);
  std::vector<AnchorSize> centers{pts[rng.below(pts.size())]};
  std::vector<double> d(pts.size());
  while (centers.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = 1.0;
      for (const auto& c : centers) best = std::min(best, 1.0 - shape_iou(pts[i].w, pts[i].h, c.w, c.h));
      d[i] = best * best;
      total += d[i];
    }
    std::size_t pick = rng.below(pts.size());
    if (total > 0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        r -= d[i];
        if (r < 0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pts[pick]);
  }
  std::vector<std::size_t> label(pts.size(), k);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_iou = -1;
      for (std::size_t c = 0; c < k; ++c) {
        const double v = shape_iou(pts[i].w, pts[i].h, centers[c].w, centers[c].h);
        if (v > best_iou) {
          best_iou = v;
          best = c;
        }
      }
      if (label[i] != best) {
        label[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (std::size_t c = 0; c < k; ++c) {
      double sw = 0, sh = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (label[i] == c) {
          sw += pts[i].w;
          sh += pts[i].h;
          ++n;
        }
      if (n) centers[c] = {sw / double(n), sh / double(n)};
    }
  }
  std::sort(centers.begin(), centers.end(), [](const AnchorSize& a, const AnchorSize& b) {
    return a.w * a.h < b.w * b.h || (a.w * a.h == b.w * b.h && a.w < b.w);
  });
  return centers;
}

AnchorSet anchors_from_clusters(const std::vector<AnchorSize>& nine) {
  if (nine.size() != 9) throw std::invalid_argument("anchors: expected 9 clusters");
  AnchorSet a{};
  for (std::size_t i = 0; i < 9; ++i) a[i / 3][i % 3] = nine[i];
  return a;
}

}  // namespace yf

#pragma once

// Manifest-based datasets and the synthetic shapes corpus.
//
// A manifest is JSON Lines, one record per image:
//   {"image": "img/0001.ppm", "boxes": [[xmin, ymin, xmax, ymax, class_id], ...]}
// Image paths resolve against the manifest's directory. Class names live in
// a sidecar text file (default: classes.txt next to the manifest), one per
// line, class id = line index.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "yolo_former/detector.hpp"
#include "yolo_former/image.hpp"

namespace yf {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestRecord {
  std::string image;  // as written in the manifest
  std::vector<LabeledBox> boxes;
};

struct Dataset {
  std::filesystem::path root;  // directory of the manifest
  std::vector<std::string> class_names;
  std::vector<ManifestRecord> records;

  std::size_t num_classes() const { return class_names.size(); }
  std::filesystem::path image_path(std::size_t i) const { return root / records.at(i).image; }
};

/// Parses manifest text; errors name the 1-based line. Boxes are checked for
/// ordering and class range; image bounds are checked when images load.
std::vector<ManifestRecord> parse_manifest(const std::string& text, std::size_t num_classes);

std::vector<std::string> load_class_names(const std::filesystem::path& path);

/// Reads the manifest and its classes file (classes.txt beside the manifest
/// unless given).
Dataset load_manifest(const std::filesystem::path& manifest, const std::filesystem::path& classes = {});

/// Writes manifest.jsonl and classes.txt into `dir`; images are not touched.
void save_manifest(const Dataset& data, const std::filesystem::path& dir);

/// Loads every image and checks box bounds against it.
std::vector<Sample> load_samples(const Dataset& data);

// ---- synthetic corpus ---------------------------------------------------------

struct SyntheticSpec {
  std::size_t n_images = 16;
  std::size_t image_size = 96;
  std::vector<std::string> classes{"circle", "square"};  // subset of circle, square, triangle
  std::size_t min_objects = 1, max_objects = 3;
  std::size_t min_size = 16, max_size = 40;  // object extent in pixels
  std::uint64_t seed = 0;

  void validate() const;
};

/// Solid random background with non-overlapping solid shapes. Circles of
/// radius r at integer center (cx, cy) cover exactly the pixels whose centers
/// lie within r, so their box is (cx - r, cy - r, cx + r, cy + r); squares and
/// triangles have integer vertices on their boxes.
std::vector<Sample> synth_generate(const SyntheticSpec& spec);

/// Writes images as img/NNNN.ppm plus manifest.jsonl and classes.txt.
Dataset write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

// ---- anchors ------------------------------------------------------------------

/// k-means over box (w, h) with 1 - centered IoU as the distance. Returns k
/// anchors sorted by area.
std::vector<AnchorSize> kmeans_anchors(const std::vector<LabeledBox>& boxes, std::size_t k, std::uint64_t seed,
                                       std::size_t max_iterations = 300);

/// Nine anchors sorted by area, three per scale, finest first.
AnchorSet anchors_from_clusters(const std::vector<AnchorSize>& nine);

}  // namespace yf

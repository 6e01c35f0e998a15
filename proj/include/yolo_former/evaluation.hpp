#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "yolo_former/box.hpp"
#include "yolo_former/detector.hpp"
#include "yolo_former/image.hpp"

namespace yf {

enum class ApInterpolation { all_points, eleven_point };

struct EvalConfig {
  double iou_threshold = 0.5;
  double conf_threshold = 0.005;
  double nms_iou = 0.5;
  ApInterpolation interpolation = ApInterpolation::all_points;

  void validate() const;
};

/// Greedy per-class suppression. Candidates are visited by descending score,
/// ties broken by lexicographic (xmin, ymin, xmax, ymax); a candidate is kept
/// unless its IoU with an already kept box of the same class exceeds nms_iou.
/// Output is in visiting order.
std::vector<Detection> nms(std::vector<Detection> detections, double nms_iou);

/// Orders detections by score descending, then image, then box coordinates.
struct RankedDetection {
  Detection det;
  std::size_t image = 0;
};
bool ranks_before(const RankedDetection& a, const RankedDetection& b);

struct PrCurve {
  std::vector<double> scores;       // descending
  std::vector<std::uint8_t> tp;     // 1 = true positive
  std::vector<double> precision;    // cumulative
  std::vector<double> recall;       // cumulative, non-decreasing
  std::size_t num_gt = 0;
  double ap = 0.0;

  bool defined() const { return num_gt > 0; }
};

/// AP of one class over a set of images. Each detection, in rank order, is
/// matched to the highest-IoU still-unmatched ground truth of its class in
/// the same image; IoU >= iou_threshold makes it a true positive.
/// With no ground truth the curve is undefined (num_gt == 0, ap = 0).
PrCurve average_precision(const std::vector<std::vector<Detection>>& detections,
                          const std::vector<std::vector<LabeledBox>>& ground_truth, int class_id,
                          const EvalConfig& config);

/// Area under the precision envelope of cumulative (recall, precision) points.
double integrate_ap(const std::vector<double>& recall, const std::vector<double>& precision,
                    ApInterpolation interpolation);

struct MapReport {
  double map = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt: no ground truth
  std::vector<std::size_t> gt_counts;
  std::vector<std::size_t> det_counts;
  std::vector<std::string> notes;
};

MapReport mean_ap(const std::vector<std::vector<Detection>>& detections,
                  const std::vector<std::vector<LabeledBox>>& ground_truth, std::size_t num_classes,
                  const EvalConfig& config);

/// Eval-mode forward, decode and NMS for every sample. Samples must match the
/// detector input size.
std::vector<std::vector<Detection>> predict(const Detector<float>& model, const std::vector<Sample>& samples,
                                            const EvalConfig& config, std::size_t batch_size = 8);

MapReport evaluate(const Detector<float>& model, const std::vector<Sample>& samples, const EvalConfig& config);

std::string report_json(const MapReport& report, const EvalConfig& config, const std::vector<std::string>& class_names);
std::string report_table(const MapReport& report, const std::vector<std::string>& class_names);

struct FpsReport {
  std::size_t input_size = 0;
  std::size_t timed_images = 0;
  std::size_t warmup_images = 0;
  double total_seconds = 0.0;
  double fps = 0.0;
  double mean_latency_ms = 0.0;
  double p50_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  std::string hardware;
  std::string variant;
};

/// Times single-image eval forward + decode + NMS on random images, with
/// OpenMP pinned to one thread for the duration. The first `warmup` images
/// are not timed.
FpsReport fps_bench(const Detector<float>& model, std::size_t n_images, std::size_t warmup, std::uint64_t seed);

/// Nearest-rank quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);

/// CPU model name and logical core count, when the platform exposes them.
std::string hardware_descriptor();

std::string fps_json(const FpsReport& report);
std::string fps_table(const FpsReport& report);

}  // namespace yf

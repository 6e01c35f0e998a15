#include "yolo_former/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "json.hpp"

namespace yf {

void EvalConfig::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v > 0.0 && v <= 1.0))
      throw std::invalid_argument(std::string("EvalConfig: ") + name + " must lie in (0, 1], got " +
                                  std::to_string(v));
  };
  check(iou_threshold, "iou_threshold");
  check(conf_threshold, "conf_threshold");
  check(nms_iou, "nms_iou");
}

namespace {

auto box_key(const Box& b) { return std::tie(b.xmin, b.ymin, b.xmax, b.ymax); }

bool score_then_box(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return box_key(a.box) < box_key(b.box);
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> detections, double nms_iou) {
  std::stable_sort(detections.begin(), detections.end(), score_then_box);
  std::vector<Detection> kept;
  kept.reserve(detections.size());
  for (const auto& d : detections) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.class_id == d.class_id && iou(k.box, d.box) > nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

bool ranks_before(const RankedDetection& a, const RankedDetection& b) {
  if (a.det.score != b.det.score) return a.det.score > b.det.score;
  if (a.image != b.image) return a.image < b.image;
  return box_key(a.det.box) < box_key(b.det.box);
}

double integrate_ap(const std::vector<double>& recall, const std::vector<double>& precision,
                    ApInterpolation interpolation) {
  const std::size_t n = recall.size();
  if (n == 0) return 0.0;
  // Envelope: best precision at any recall >= the current one.
  std::vector<double> env(precision);
  for (std::size_t i = n - 1; i-- > 0;) env[i] = std::max(env[i], env[i + 1]);
  if (interpolation == ApInterpolation::eleven_point) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r);
      if (it != recall.end()) ap += env[static_cast<std::size_t>(it - recall.begin())];
    }
    return ap / 11.0;
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev) ap += (recall[i] - prev) * env[i];
    prev = recall[i];
  }
  return ap;
}

PrCurve average_precision(const std::vector<std::vector<Detection>>& detections,
                          const std::vector<std::vector<LabeledBox>>& ground_truth, int class_id,
                          const EvalConfig& config) {
  if (detections.size() != ground_truth.size())
    throw std::invalid_argument("average_precision: " + std::to_string(detections.size()) +
                                " detection lists for " + std::to_string(ground_truth.size()) + " images");
  PrCurve curve;
  std::vector<std::vector<const Box*>> gts(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i)
    for (const auto& g : ground_truth[i])
      if (g.class_id == class_id) gts[i].push_back(&g.box);
  for (const auto& g : gts) curve.num_gt += g.size();

  std::vector<RankedDetection> ranked;
  for (std::size_t i = 0; i < detections.size(); ++i)
    for (const auto& d : detections[i])
      if (d.class_id == class_id) ranked.push_back({d, i});
  std::sort(ranked.begin(), ranked.end(), ranks_before);

  std::vector<std::vector<bool>> used(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);
  std::size_t tp = 0, fp = 0;
  for (const auto& r : ranked) {
    const auto& cand = gts[r.image];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < cand.size(); ++j) {
      if (used[r.image][j]) continue;
      const double o = iou(r.det.box, *cand[j]);
      if (o > best) {
        best = o;
        best_j = j;
      }
    }
    const bool hit = best >= config.iou_threshold;
    if (hit) {
      used[r.image][best_j] = true;
      ++tp;
    } else {
      ++fp;
    }
    curve.scores.push_back(r.det.score);
    curve.tp.push_back(hit ? 1 : 0);
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    curve.recall.push_back(curve.num_gt ? static_cast<double>(tp) / static_cast<double>(curve.num_gt) : 0.0);
  }
  curve.ap = curve.defined() ? integrate_ap(curve.recall, curve.precision, config.interpolation) : 0.0;
  return curve;
}

MapReport mean_ap(const std::vector<std::vector<Detection>>& detections,
                  const std::vector<std::vector<LabeledBox>>& ground_truth, std::size_t num_classes,
                  const EvalConfig& config) {
  config.validate();
  MapReport rep;
  rep.per_class.resize(num_classes);
  rep.gt_counts.assign(num_classes, 0);
  rep.det_counts.assign(num_classes, 0);
  for (const auto& img : detections)
    for (const auto& d : img)
      if (d.class_id >= 0 && static_cast<std::size_t>(d.class_id) < num_classes) ++rep.det_counts[d.class_id];
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto curve = average_precision(detections, ground_truth, static_cast<int>(c), config);
    rep.gt_counts[c] = curve.num_gt;
    if (!curve.defined()) {
      rep.notes.push_back("class " + std::to_string(c) + " has no ground truth; excluded from mAP");
      continue;
    }
    rep.per_class[c] = curve.ap;
    sum += curve.ap;
    ++defined;
  }
  rep.map = defined ? sum / static_cast<double>(defined) : 0.0;
  return rep;
}

std::vector<std::vector<Detection>> predict(const Detector<float>& model, const std::vector<Sample>& samples,
                                            const EvalConfig& config, std::size_t batch_size) {
  config.validate();
  std::vector<std::vector<Detection>> out(samples.size());
  const std::size_t S = model.config().input_size;
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const Image*> imgs;
    for (std::size_t i = start; i < end; ++i) {
      if (samples[i].image.width != S || samples[i].image.height != S)
        throw ShapeError("predict: sample " + std::to_string(i) + " is not " + std::to_string(S) + "x" +
                         std::to_string(S));
      imgs.push_back(&samples[i].image);
    }
    Context<float> ctx;
    const auto raw = model.forward(ctx, images_to_tensor<float>(imgs));
    for (std::size_t i = start; i < end; ++i)
      out[i] = nms(decode_all(raw, i - start, model.config(), config.conf_threshold), config.nms_iou);
  }
  return out;
}

MapReport evaluate(const Detector<float>& model, const std::vector<Sample>& samples, const EvalConfig& config) {
  std::vector<std::vector<LabeledBox>> gts;
  gts.reserve(samples.size());
  for (const auto& s : samples) gts.push_back(s.boxes);
  return mean_ap(predict(model, samples, config), gts, model.config().num_classes, config);
}

namespace {

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : "class" + std::to_string(c);
}

const char* interpolation_name(ApInterpolation i) {
  return i == ApInterpolation::all_points ? "all_points" : "eleven_point";
}

}  // namespace

std::string report_json(const MapReport& report, const EvalConfig& config, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["map"] = report.map;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    nlohmann::ordered_json e;
    e["id"] = c;
    e["name"] = class_name(names, c);
    e["ap"] = report.per_class[c] ? nlohmann::ordered_json(*report.per_class[c]) : nlohmann::ordered_json();
    e["ground_truth"] = report.gt_counts[c];
    e["detections"] = report.det_counts[c];
    classes.push_back(e);
  }
  j["notes"] = report.notes;
  j["config"] = {{"iou_threshold", config.iou_threshold},
                 {"conf_threshold", config.conf_threshold},
                 {"nms_iou", config.nms_iou},
                 {"interpolation", interpolation_name(config.interpolation)}};
  return j.dump(2);
}

std::string report_table(const MapReport& report, const std::vector<std::string>& names) {
  std::size_t width = 5;
  for (std::size_t c = 0; c < report.per_class.size(); ++c) width = std::max(width, class_name(names, c).size());
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %8s %6s %6s\n", static_cast<int>(width), "class", "AP", "gt", "dets");
  os << line;
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const std::string ap = report.per_class[c] ? std::to_string(*report.per_class[c] * 100.0).substr(0, 6) : "n/a";
    std::snprintf(line, sizeof line, "%-*s %8s %6zu %6zu\n", static_cast<int>(width), class_name(names, c).c_str(),
                  ap.c_str(), report.gt_counts[c], report.det_counts[c]);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-*s %8.2f\n", static_cast<int>(width), "mAP", report.map * 100.0);
  os << line;
  return os.str();
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q * static_cast<double>(values.size()));
  const std::size_t idx = rank < 1 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(idx, values.size() - 1)];
}

std::string hardware_descriptor() {
  std::string model;
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  if (model.empty()) model = "unknown cpu";
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " logical cores, 1 thread used";
}

FpsReport fps_bench(const Detector<float>& model, std::size_t n_images, std::size_t warmup, std::uint64_t seed) {
  if (n_images == 0) throw std::invalid_argument("fps_bench: n_images must be positive");
  const std::size_t S = model.config().input_size;
  FpsReport rep;
  rep.input_size = S;
  rep.warmup_images = warmup;
  rep.timed_images = n_images;
  rep.hardware = hardware_descriptor();
  rep.variant = std::string(to_string(model.config().variant));

  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(1);
  SeededRng rng(seed, /*stream=*/0xf95);
  EvalConfig cfg;
  std::vector<double> latencies;
  Image img(S, S);
  for (std::size_t i = 0; i < warmup + n_images; ++i) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const auto t0 = std::chrono::steady_clock::now();
    Context<float> ctx;
    const auto raw = model.forward(ctx, images_to_tensor<float>({&img}));
    const auto dets = nms(decode_all(raw, 0, model.config(), cfg.conf_threshold), cfg.nms_iou);
    const auto t1 = std::chrono::steady_clock::now();
    (void)dets;
    if (i >= warmup) latencies.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  omp_set_num_threads(saved_threads);

  rep.total_seconds = std::accumulate(latencies.begin(), latencies.end(), 0.0);
  rep.fps = static_cast<double>(n_images) / rep.total_seconds;
  rep.mean_latency_ms = 1000.0 * rep.total_seconds / static_cast<double>(n_images);
  rep.p50_latency_ms = 1000.0 * quantile(latencies, 0.50);
  rep.p95_latency_ms = 1000.0 * quantile(latencies, 0.95);
  return rep;
}

std::string fps_json(const FpsReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["input_size"] = r.input_size;
  j["timed_images"] = r.timed_images;
  j["warmup_images"] = r.warmup_images;
  j["total_seconds"] = r.total_seconds;
  j["fps"] = r.fps;
  j["latency_ms"] = {{"mean", r.mean_latency_ms}, {"p50", r.p50_latency_ms}, {"p95", r.p95_latency_ms}};
  j["hardware"] = r.hardware;
  return j.dump(2);
}

std::string fps_table(const FpsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "variant    %s\ninput      %zux%zu\nimages     %zu timed, %zu warmup\nfps        %.3f\n"
                "latency    mean %.2f ms  p50 %.2f ms  p95 %.2f ms\nhardware   %s\n",
                r.variant.c_str(), r.input_size, r.input_size, r.timed_images, r.warmup_images, r.fps,
                r.mean_latency_ms, r.p50_latency_ms, r.p95_latency_ms, r.hardware.c_str());
  return buf;
}

}  // namespace yf

// yoloformer: command-line front end.
//
// Exit codes: 0 success, 1 usage, 2 invalid input or configuration,
// 3 numerical failure (non-finite loss, failed gradient check).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "yolo_former/augment.hpp"
#include "yolo_former/dataset.hpp"
#include "yolo_former/evaluation.hpp"
#include "yolo_former/gradcheck.hpp"
#include "yolo_former/kernels.hpp"
#include "yolo_former/training.hpp"

namespace fs = std::filesystem;
using namespace yf;

namespace {

constexpr int kUsage = 1, kValidation = 2, kNumerical = 3;

struct ModelFlags {
  std::string variant = "sh";
  std::string size = "custom";
  std::size_t input_size = 96;
  std::string depth = "desk";
  bool shake = false;

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "CSAM variant")->check(CLI::IsMember({"sh", "mb", "mh", "mhmb"}));
    app->add_option("--size", size, "Input resolution preset")->check(CLI::IsMember({"320", "416", "512", "custom"}));
    app->add_option("--input-size", input_size, "Input resolution when --size custom");
    app->add_option("--depth", depth, "Stage depths: desk [1,1,2,2,1] or full [1,2,8,8,4]")
        ->check(CLI::IsMember({"desk", "full"}));
    app->add_flag("--shake", shake, "Shake-shake on the multi-branch CSAM gates");
  }

  DetectorConfig config(std::size_t num_classes) const {
    DetectorConfig c = depth == "full" ? DetectorConfig::full_depth() : DetectorConfig::desk();
    c.variant = parse_variant(variant);
    c.input_size = size == "custom" ? input_size : std::stoul(size);
    c.num_classes = num_classes;
    c.shake_shake = shake;
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<Sample> resized(std::vector<Sample> samples, std::size_t S) {
  for (auto& s : samples)
    if (s.image.width != S || s.image.height != S) s = resize_sample(s, S, S);
  return samples;
}

// ---- synth --------------------------------------------------------------------

int run_synth(const SyntheticSpec& spec, const fs::path& out) {
  const auto d = write_synthetic(spec, out);
  std::size_t boxes = 0;
  for (const auto& r : d.records) boxes += r.boxes.size();
  std::printf("wrote %zu images, %zu boxes to %s\n", d.records.size(), boxes, out.string().c_str());
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainFlags {
  fs::path manifest, config, out, checkpoint;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;
  ModelFlags model;
};

int run_train(const TrainFlags& f) {
  TrainConfig cfg;
  if (!f.config.empty()) cfg = load_train_config(f.config);
  if (f.epochs) cfg.epochs = *f.epochs;
  cfg.validate();
  const Dataset data = load_manifest(f.manifest);
  DetectorConfig mc = f.model.config(data.num_classes());
  if (cfg.shake_shake) mc.shake_shake = true;
  mc.validate();
  const auto samples = resized(load_samples(data), mc.input_size);

  Detector<float> model(mc, derive_seed(f.seed, 0, 0xd37));
  if (!f.checkpoint.empty()) load_checkpoint(model.params(), f.checkpoint);
  fs::create_directories(f.out);
  write_text(f.out / "train_config.txt", format_train_config(cfg));

  TrainOutputs outputs;
  outputs.dir = f.out;
  outputs.on_epoch = [](const EpochMetrics& m) { std::printf("%s\n", metrics_json_line(m).c_str()); };
  const auto result = train(model, samples, cfg, f.seed, outputs);
  if (result.best_map)
    std::printf("best mAP %.4f at epoch %zu%s\n", *result.best_map, result.best_epoch,
                result.stopped_early ? " (stopped early)" : "");
  std::printf("checkpoints in %s\n", f.out.string().c_str());
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalFlags {
  fs::path manifest, checkpoint, predictions, out;
  std::string interpolation = "all_points";
  double conf = 0.005;
  std::uint64_t seed = 0;
  ModelFlags model;
};

// JSONL, one line per manifest record in order:
//   {"detections": [[xmin, ymin, xmax, ymax, class_id, score], ...]}
std::vector<std::vector<Detection>> read_predictions(const fs::path& path, std::size_t expected) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read predictions " + path.string());
  std::vector<std::vector<Detection>> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ManifestError("predictions line " + std::to_string(line_no) + ": malformed JSON");
    }
    std::vector<Detection> dets;
    for (const auto& d : j.value("detections", nlohmann::json::array())) {
      if (!d.is_array() || d.size() != 6)
        throw ManifestError("predictions line " + std::to_string(line_no) + ": detection needs 6 numbers");
      dets.push_back({Box{d[0].get<double>(), d[1].get<double>(), d[2].get<double>(), d[3].get<double>()},
                      d[4].get<int>(), d[5].get<double>()});
    }
    out.push_back(std::move(dets));
  }
  if (out.size() != expected)
    throw ManifestError("predictions hold " + std::to_string(out.size()) + " images, manifest has " +
                        std::to_string(expected));
  return out;
}

int run_eval(const EvalFlags& f) {
  EvalConfig ec;
  ec.conf_threshold = f.conf;
  ec.interpolation = f.interpolation == "eleven_point" ? ApInterpolation::eleven_point : ApInterpolation::all_points;
  ec.validate();
  const Dataset data = load_manifest(f.manifest);
  auto samples = load_samples(data);
  std::vector<std::vector<Detection>> dets;
  if (!f.predictions.empty()) {
    dets = read_predictions(f.predictions, samples.size());
  } else {
    if (f.checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint or --predictions is required");
    const DetectorConfig mc = f.model.config(data.num_classes());
    Detector<float> model(mc, f.seed);
    load_checkpoint(model.params(), f.checkpoint);
    samples = resized(std::move(samples), mc.input_size);
    dets = predict(model, samples, ec);
  }
  std::vector<std::vector<LabeledBox>> gts;
  for (const auto& s : samples) gts.push_back(s.boxes);
  const auto report = mean_ap(dets, gts, data.num_classes(), ec);
  std::printf("%s", report_table(report, data.class_names).c_str());
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_text(f.out / "eval.json", report_json(report, ec, data.class_names) + "\n");
  }
  return 0;
}

// ---- augment ------------------------------------------------------------------

struct AugmentFlags {
  fs::path manifest, out;
  std::string policy = "randaugment";
  bool geometric = false, mosaic = false;
  std::size_t preview = 0;
  std::uint64_t seed = 0;
};

void draw_box(Image& im, const Box& b, const std::array<std::uint8_t, 3>& color) {
  const auto clampi = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi - 1)));
  };
  const std::size_t x0 = clampi(b.xmin, im.width), x1 = clampi(b.xmax - 1, im.width);
  const std::size_t y0 = clampi(b.ymin, im.height), y1 = clampi(b.ymax - 1, im.height);
  for (std::size_t x = x0; x <= x1; ++x)
    for (std::size_t c = 0; c < 3; ++c) im.at(x, y0, c) = im.at(x, y1, c) = color[c];
  for (std::size_t y = y0; y <= y1; ++y)
    for (std::size_t c = 0; c < 3; ++c) im.at(x0, y, c) = im.at(x1, y, c) = color[c];
}

int run_augment(const AugmentFlags& f) {
  AugmentPolicy policy;
  policy.policy = parse_policy(f.policy);
  policy.validate();
  const Dataset data = load_manifest(f.manifest);
  const auto samples = load_samples(data);
  fs::create_directories(f.out / "img");
  Dataset out;
  out.root = f.out;
  out.class_names = data.class_names;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SeededRng rng(derive_seed(f.seed, 0, i), /*stream=*/0xa06);
    AugmentLog log;
    Sample s = samples[i];
    if (f.mosaic && samples.size() >= 1) {
      std::array<const Sample*, 4> four{};
      four[0] = &samples[i];
      for (std::size_t q = 1; q < 4; ++q) four[q] = &samples[rng.below(samples.size())];
      s = mosaic(four, std::max(s.image.width, s.image.height), rng, &log);
    }
    s = augment_sample(s, policy, f.geometric, rng, &log);
    dropped += log.dropped_boxes;
    char name[32];
    std::snprintf(name, sizeof name, "img/%04zu.ppm", i);
    write_ppm(s.image, f.out / name);
    out.records.push_back({name, s.boxes});
    if (i < f.preview) {
      Image vis = s.image;
      for (const auto& b : s.boxes)
        draw_box(vis, b.box, b.class_id % 2 ? std::array<std::uint8_t, 3>{255, 0, 255}
                                            : std::array<std::uint8_t, 3>{0, 255, 0});
      std::snprintf(name, sizeof name, "preview_%04zu.ppm", i);
      write_ppm(vis, f.out / name);
    }
    std::string ops;
    for (const auto& o : log.ops) ops += (ops.empty() ? "" : " ") + o;
    std::printf("%04zu %s\n", i, ops.empty() ? "(identity)" : ops.c_str());
  }
  save_manifest(out, f.out);
  std::printf("wrote %zu samples, dropped %zu boxes\n", samples.size(), dropped);
  return 0;
}

// ---- bench / gradcheck / anchors ----------------------------------------------

struct BenchFlags {
  std::size_t images = 20, warmup = 3, classes = 20;
  std::uint64_t seed = 0;
  fs::path checkpoint, out;
  ModelFlags model;
};

int run_bench(const BenchFlags& f) {
  const DetectorConfig mc = f.model.config(f.classes);
  Detector<float> model(mc, f.seed);
  if (!f.checkpoint.empty()) load_checkpoint(model.params(), f.checkpoint);
  const auto rep = fps_bench(model, f.images, f.warmup, f.seed);
  std::printf("%s", fps_table(rep).c_str());
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_text(f.out / "bench.json", fps_json(rep) + "\n");
  }
  return 0;
}

int run_gradcheck_cmd(const std::vector<std::string>& only, std::uint64_t seed) {
  GradcheckOptions opt;
  opt.seed = seed;
  const auto names = only.empty() ? gradcheck_suites() : only;
  bool ok = true;
  double total = 0;
  for (const auto& n : names) {
    const auto r = run_gradcheck(n, opt);
    total += r.seconds;
    ok = ok && r.passed;
    std::printf("%-4s %-20s max_rel_err %.3e  (%zu checks, worst %s, %.2fs)\n", r.passed ? "ok" : "FAIL",
                r.name.c_str(), r.max_rel_error, r.checked, r.worst.c_str(), r.seconds);
  }
  std::printf("%s in %.1fs\n", ok ? "all suites passed" : "gradient check FAILED", total);
  return ok ? 0 : kNumerical;
}

int run_anchors(const fs::path& manifest, std::size_t k, std::uint64_t seed) {
  const Dataset data = load_manifest(manifest);
  std::vector<LabeledBox> boxes;
  for (const auto& r : data.records) boxes.insert(boxes.end(), r.boxes.begin(), r.boxes.end());
  const auto anchors = kmeans_anchors(boxes, k, seed);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : anchors) j.push_back({a.w, a.h});
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::flush_denormals();
  CLI::App app{"YOLO-style detector with convolutional self-attention"};
  app.require_subcommand(1);

  SyntheticSpec synth;
  fs::path synth_out;
  std::string synth_classes = "circle,square";
  auto* s = app.add_subcommand("synth", "Generate a synthetic shapes corpus");
  s->add_option("--out", synth_out, "Output directory")->required();
  s->add_option("--images", synth.n_images, "Number of images");
  s->add_option("--image-size", synth.image_size, "Square image side");
  s->add_option("--classes", synth_classes, "Comma-separated shapes (circle, square, triangle)");
  s->add_option("--min-objects", synth.min_objects);
  s->add_option("--max-objects", synth.max_objects);
  s->add_option("--min-size", synth.min_size);
  s->add_option("--max-size", synth.max_size);
  s->add_option("--seed", synth.seed);

  TrainFlags tf;
  std::size_t epochs_override = 0;
  auto* t = app.add_subcommand("train", "Train a detector on a manifest");
  t->add_option("--manifest", tf.manifest)->required();
  t->add_option("--config", tf.config, "key = value training config");
  t->add_option("--out", tf.out, "Output directory for checkpoints and metrics")->required();
  t->add_option("--checkpoint", tf.checkpoint, "Initial weights");
  t->add_option("--seed", tf.seed);
  auto* epochs_opt = t->add_option("--epochs", epochs_override, "Override the config's epoch count");
  tf.model.add(t);

  EvalFlags ef;
  auto* e = app.add_subcommand("eval", "mAP@0.5 of a checkpoint or a predictions file");
  e->add_option("--manifest", ef.manifest)->required();
  e->add_option("--checkpoint", ef.checkpoint);
  e->add_option("--predictions", ef.predictions, "JSONL detections instead of a model");
  e->add_option("--out", ef.out, "Directory for eval.json");
  e->add_option("--interpolation", ef.interpolation)->check(CLI::IsMember({"all_points", "eleven_point"}));
  e->add_option("--conf", ef.conf, "Score threshold");
  e->add_option("--seed", ef.seed);
  ef.model.add(e);

  AugmentFlags af;
  auto* a = app.add_subcommand("augment", "Write an augmented copy of a manifest");
  a->add_option("--manifest", af.manifest)->required();
  a->add_option("--out", af.out)->required();
  a->add_option("--policy", af.policy)->check(CLI::IsMember({"none", "randaugment", "augmix"}));
  a->add_flag("--geometric", af.geometric, "Run the geometric pipeline first");
  a->add_flag("--mosaic", af.mosaic, "Compose each output from four samples");
  a->add_option("--preview", af.preview, "Also write box overlays for the first N samples");
  a->add_option("--seed", af.seed);

  BenchFlags bf;
  auto* b = app.add_subcommand("bench", "Single-threaded inference throughput");
  b->add_option("--images", bf.images);
  b->add_option("--warmup", bf.warmup);
  b->add_option("--classes", bf.classes);
  b->add_option("--checkpoint", bf.checkpoint);
  b->add_option("--out", bf.out, "Directory for bench.json");
  b->add_option("--seed", bf.seed);
  bf.model.add(b);

  std::vector<std::string> suites;
  std::uint64_t gc_seed = 0;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference checks of every backward rule");
  g->add_option("--suite", suites, "Run only these suites");
  g->add_option("--seed", gc_seed);

  fs::path anchor_manifest;
  std::size_t anchor_k = 9;
  std::uint64_t anchor_seed = 0;
  auto* k = app.add_subcommand("anchors", "k-means anchors over manifest boxes");
  k->add_option("--manifest", anchor_manifest)->required();
  k->add_option("--k", anchor_k);
  k->add_option("--seed", anchor_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*s) {
      synth.classes.clear();
      std::stringstream ss(synth_classes);
      for (std::string c; std::getline(ss, c, ',');) synth.classes.push_back(c);
      return run_synth(synth, synth_out);
    }
    if (*t) {
      if (*epochs_opt) tf.epochs = epochs_override;
      return run_train(tf);
    }
    if (*e) return run_eval(ef);
    if (*a) return run_augment(af);
    if (*b) return run_bench(bf);
    if (*g) return run_gradcheck_cmd(suites, gc_seed);
    if (*k) return run_anchors(anchor_manifest, anchor_k, anchor_seed);
  } catch (const NumericError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kValidation;
  } catch (const std::runtime_error& err) {
    // ConfigError, ManifestError, ImageError and unreadable files
    std::cerr << "error: " << err.what() << "\n";
    return kValidation;
  }
  return kUsage;
}

#include "yolo_former/training.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "yolo_former/regularization.hpp"

namespace yf {

double lr_at(std::size_t step, const LrSchedule& s) {
  if (s.total_steps == 0 || step + 1 >= s.total_steps) return 0.0;
  if (step < s.warmup_steps) return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double span = static_cast<double>(s.total_steps - 1 - s.warmup_steps);
  const double progress = static_cast<double>(step - s.warmup_steps) / span;
  return 0.5 * s.peak * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (epochs > 0 && warmup_epochs >= epochs) fail("warmup_epochs", "must be smaller than epochs");
  if (!(peak_lr > 0)) fail("peak_lr", "must be positive");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight_decay", "must be non-negative");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) fail("label_smoothing", "must be in [0, 1)");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (accumulation == 0) fail("accumulation", "must be positive");
  if (!(focal_gamma >= 0)) fail("focal_gamma", "must be non-negative");
  if (!(focal_alpha < 1)) fail("focal_alpha", "must be below 1 (negative disables the weighting)");
  if (dropblock.block_size == 0) fail("dropblock.block_size", "must be positive");
  if (!(dropblock.keep_end > 0 && dropblock.keep_end <= dropblock.keep_start && dropblock.keep_start <= 1))
    fail("dropblock.keep_end", "need 0 < keep_end <= keep_start <= 1");
  if (!(loss_weights.giou >= 0 && loss_weights.obj >= 0 && loss_weights.cls >= 0))
    fail("loss_weights", "must be non-negative");
  try {
    parse_policy(augment);
  } catch (const std::invalid_argument& e) {
    fail("augment", e.what());
  }
  if (!(stop_at_map >= 0 && stop_at_map <= 1)) fail("stop_at_map", "must be in [0, 1]");
}

std::size_t TrainConfig::steps_per_epoch(std::size_t samples) const {
  const std::size_t per_step = batch_size * accumulation;
  return (samples + per_step - 1) / per_step;
}

LrSchedule TrainConfig::schedule(std::size_t samples) const {
  const std::size_t spe = steps_per_epoch(samples);
  return LrSchedule{peak_lr, warmup_epochs * spe, epochs * spe};
}

LossOptions TrainConfig::loss_options() const {
  return LossOptions{loss_weights, focal_gamma, focal_alpha, label_smoothing};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

using Setter = void (*)(TrainConfig&, const std::string&, const std::string&);

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table{
      {"epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs = parse_count(k, v); }},
      {"warmup_epochs",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.warmup_epochs = parse_count(k, v); }},
      {"peak_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.peak_lr = parse_double(k, v); }},
      {"momentum",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_double(k, v); }},
      {"weight_decay",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
      {"label_smoothing",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.label_smoothing = parse_double(k, v); }},
      {"batch_size",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_count(k, v); }},
      {"accumulation",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.accumulation = parse_count(k, v); }},
      {"focal_gamma",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.focal_gamma = parse_double(k, v); }},
      {"focal_alpha",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.focal_alpha = parse_double(k, v); }},
      {"dropblock.enabled",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropblock.enabled = parse_bool(k, v); }},
      {"dropblock.block_size",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropblock.block_size = parse_count(k, v); }},
      {"dropblock.keep_start",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropblock.keep_start = parse_double(k, v); }},
      {"dropblock.keep_end",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropblock.keep_end = parse_double(k, v); }},
      {"shake_shake",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.shake_shake = parse_bool(k, v); }},
      {"loss_weights.giou",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss_weights.giou = parse_double(k, v); }},
      {"loss_weights.obj",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss_weights.obj = parse_double(k, v); }},
      {"loss_weights.cls",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss_weights.cls = parse_double(k, v); }},
      {"augment", [](TrainConfig& c, const std::string&, const std::string& v) { c.augment = v; }},
      {"geometric",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.geometric = parse_bool(k, v); }},
      {"eval_interval",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_interval = parse_count(k, v); }},
      {"stop_at_map",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.stop_at_map = parse_double(k, v); }},
  };
  return table;
}

}  // namespace

TrainConfig parse_train_config(std::string_view text, TrainConfig cfg) {
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(key + ": unknown configuration key (line " + std::to_string(line_no) + ")");
    if (value.empty()) throw ConfigError(key + ": missing value (line " + std::to_string(line_no) + ")");
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "epochs = " << c.epochs << "\nwarmup_epochs = " << c.warmup_epochs << "\npeak_lr = " << c.peak_lr
     << "\nmomentum = " << c.momentum << "\nweight_decay = " << c.weight_decay
     << "\nlabel_smoothing = " << c.label_smoothing << "\nbatch_size = " << c.batch_size
     << "\naccumulation = " << c.accumulation << "\nfocal_gamma = " << c.focal_gamma
     << "\nfocal_alpha = " << c.focal_alpha << "\ndropblock.enabled = " << (c.dropblock.enabled ? "true" : "false")
     << "\ndropblock.block_size = " << c.dropblock.block_size << "\ndropblock.keep_start = " << c.dropblock.keep_start
     << "\ndropblock.keep_end = " << c.dropblock.keep_end << "\nshake_shake = " << (c.shake_shake ? "true" : "false")
     << "\nloss_weights.giou = " << c.loss_weights.giou << "\nloss_weights.obj = " << c.loss_weights.obj
     << "\nloss_weights.cls = " << c.loss_weights.cls << "\naugment = " << c.augment
     << "\ngeometric = " << (c.geometric ? "true" : "false") << "\neval_interval = " << c.eval_interval
     << "\nstop_at_map = " << c.stop_at_map << "\n";
  return os.str();
}

// ---- epoch loop -------------------------------------------------------------

std::string metrics_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["steps"] = m.steps;
  j["loss"] = m.loss;
  j["giou"] = m.giou;
  j["obj"] = m.obj;
  j["cls"] = m.cls;
  j["lr"] = m.lr;
  j["keep_prob"] = m.keep_prob;
  j["map"] = m.map ? nlohmann::ordered_json(*m.map) : nlohmann::ordered_json();
  j["seconds"] = m.seconds;
  return j.dump();
}

Trainer::Trainer(Detector<float>& model, TrainConfig config, std::uint64_t seed)
    : model_(model), config_(std::move(config)), seed_(seed) {
  config_.validate();
  if (config_.shake_shake != model_.config().shake_shake)
    throw ConfigError("shake_shake: config says " + std::string(config_.shake_shake ? "true" : "false") +
                      " but the model was built with " + (model_.config().shake_shake ? "true" : "false"));
}

std::vector<Sample> Trainer::prepare_batch(const std::vector<Sample>& data, const std::vector<std::size_t>& order,
                                           std::size_t begin, std::size_t end, std::size_t epoch) const {
  AugmentPolicy policy;
  policy.policy = parse_policy(config_.augment);
  const std::size_t S = model_.config().input_size;
  std::vector<Sample> out;
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t idx = order[i];
    SeededRng rng(derive_seed(seed_, epoch, idx), /*stream=*/0xa06);
    Sample s = data[idx];
    if (s.image.width != S || s.image.height != S) s = resize_sample(s, S, S);
    if (policy.policy != PolicyKind::none || config_.geometric) s = augment_sample(s, policy, config_.geometric, rng);
    out.push_back(std::move(s));
  }
  return out;
}

EpochMetrics Trainer::train_epoch(const std::vector<Sample>& data, std::size_t epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  EpochMetrics m;
  m.epoch = epoch;
  if (data.empty()) return m;
  const auto sched = config_.schedule(data.size());
  m.keep_prob = config_.dropblock.enabled ? scheduled_keep_prob(epoch, config_.epochs, config_.dropblock.keep_start,
                                                                config_.dropblock.keep_end)
                                          : 1.0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  SeededRng shuffler(derive_seed(seed_, epoch, 0), /*stream=*/0x5f1);
  shuffler.shuffle(order.begin(), order.end());

  const auto loss_opts = config_.loss_options();
  const auto& mc = model_.config();
  auto params = model_.params().param_list();
  const std::size_t B = config_.batch_size, per_step = B * config_.accumulation;
  double loss_sum = 0, giou_sum = 0, obj_sum = 0, cls_sum = 0;
  std::size_t micro = 0;
  for (std::size_t start = 0; start < data.size(); start += per_step) {
    const std::size_t stop = std::min(data.size(), start + per_step);
    const std::size_t n_micro = (stop - start + B - 1) / B;
    for (std::size_t k = 0; k < n_micro; ++k) {
      const std::size_t b0 = start + k * B, b1 = std::min(stop, b0 + B);
      const auto batch = prepare_batch(data, order, b0, b1, epoch);
      std::vector<const Image*> imgs;
      std::vector<TargetAssignment> targets;
      for (const auto& s : batch) {
        imgs.push_back(&s.image);
        targets.push_back(assign_targets(s.boxes, mc.anchors, mc.input_size, mc.num_classes));
      }
      Tape<float> tape;
      SeededRng reg_rng(seed_, /*stream=*/0x7e9, step_ * 1024 + k);
      Context<float> ctx;
      ctx.tape = &tape;
      ctx.mode = Mode::train;
      ctx.rng = &reg_rng;
      ctx.dropblock_keep = m.keep_prob;
      ctx.dropblock_block = config_.dropblock.block_size;
      const auto raw = model_.forward(ctx, images_to_tensor<float>(imgs));
      auto loss = detection_loss(&tape, raw, targets, mc, loss_opts);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b0 / B));
      const Tensor<float> scaled = ops::scale(&tape, loss.total, 1.0f / static_cast<float>(n_micro));
      tape.backward(scaled);
      loss_sum += value;
      giou_sum += loss.giou;
      obj_sum += loss.obj;
      cls_sum += loss.cls;
      ++micro;
    }
    const double lr = lr_at(step_, sched);
    lr_trace_.push_back(lr);
    sgd_step(params, lr, config_.momentum, config_.weight_decay);
    m.lr = lr;
    ++step_;
    ++m.steps;
  }
  const double inv = 1.0 / static_cast<double>(micro);
  m.loss = loss_sum * inv;
  m.giou = giou_sum * inv;
  m.obj = obj_sum * inv;
  m.cls = cls_sum * inv;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

TrainResult train(Detector<float>& model, const std::vector<Sample>& data, const TrainConfig& config,
                  std::uint64_t seed, const TrainOutputs& outputs, const std::vector<Sample>* eval_data) {
  Trainer trainer(model, config, seed);
  TrainResult result;
  std::ofstream metrics;
  if (!outputs.dir.empty()) {
    std::filesystem::create_directories(outputs.dir);
    save_checkpoint(model.params(), outputs.dir / "checkpoint_init.yfck");
    metrics.open(outputs.dir / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("cannot write " + (outputs.dir / "metrics.jsonl").string());
  }
  const auto& eval_set = eval_data ? *eval_data : data;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto m = trainer.train_epoch(data, epoch);
    const bool last = epoch + 1 == config.epochs;
    if (config.eval_interval > 0 && ((epoch + 1) % config.eval_interval == 0 || last)) {
      const auto t0 = std::chrono::steady_clock::now();
      m.map = evaluate(model, eval_set, EvalConfig{}).map;
      m.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!result.best_map || *m.map > *result.best_map) {
        result.best_map = m.map;
        result.best_epoch = epoch;
        if (!outputs.dir.empty()) save_checkpoint(model.params(), outputs.dir / "checkpoint_best.yfck");
      }
    }
    if (metrics) metrics << metrics_json_line(m) << '\n' << std::flush;
    if (outputs.on_epoch) outputs.on_epoch(m);
    result.history.push_back(m);
    if (config.stop_at_map > 0 && m.map && *m.map >= config.stop_at_map) {
      result.stopped_early = true;
      break;
    }
  }
  if (!outputs.dir.empty()) save_checkpoint(model.params(), outputs.dir / "checkpoint_final.yfck");
  return result;
}

}  // namespace yf

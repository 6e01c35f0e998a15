#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "yolo_former/augment.hpp"
#include "yolo_former/detector.hpp"
#include "yolo_former/evaluation.hpp"

namespace yf {

// ---- losses -----------------------------------------------------------------

/// IoU - (enclosing - union) / enclosing, in (-1, 1]. Throws on zero-area boxes.
double giou(const Box& a, const Box& b);

struct GiouLossGrad {
  double loss = 0.0;                // 1 - giou
  std::array<double, 4> d_pred{};   // d loss / d (xmin, ymin, xmax, ymax) of the prediction
};
GiouLossGrad giou_loss_grad(const Box& pred, const Box& target);

/// -alpha_t (1 - p_t)^gamma log(p_t), p = sigmoid(logit), p_t = p for y = 1
/// and 1 - p otherwise; alpha_t = alpha for y = 1 and 1 - alpha otherwise.
/// A negative alpha disables the weighting (alpha_t = 1). Soft targets
/// y in [0, 1] interpolate the two cases linearly.
double focal_loss(double logit, double y, double gamma, double alpha);
double focal_loss_grad(double logit, double y, double gamma, double alpha);

/// Numerically stable binary cross-entropy on a logit.
double bce_with_logits(double logit, double target);

/// y * (1 - s) + s / 2.
double smooth_label(double y, double smoothing);

namespace ops {

/// Mean focal loss over all elements; targets are 0/1 per element.
template <typename T>
Tensor<T> focal_loss(Tape<T>* tape, const Tensor<T>& logits, std::vector<T> targets, double gamma, double alpha);

/// logits [P, C]; per row the sum over classes of BCE against smoothed
/// one-hot targets, averaged over rows.
template <typename T>
Tensor<T> classification_loss(Tape<T>* tape, const Tensor<T>& logits, const std::vector<int>& classes,
                              double smoothing);

/// boxes [P, 4] as (xmin, ymin, xmax, ymax); mean of 1 - GIoU against targets.
template <typename T>
Tensor<T> giou_loss(Tape<T>* tape, const Tensor<T>& boxes, const std::vector<Box>& targets);

}  // namespace ops

// ---- target assignment ------------------------------------------------------

struct Positive {
  std::size_t slot = 0;   // anchor * H * W + row * W + col
  std::size_t row = 0, col = 0, anchor = 0;
  double tx = 0, ty = 0;  // logits of the fractional cell offsets
  double tw = 0, th = 0;  // ln(gt / anchor)
  int class_id = 0;
  Box box;
};

struct ScaleTargets {
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<std::uint8_t> objectness;  // per slot
  std::vector<Positive> positives;
};

struct TargetAssignment {
  std::array<ScaleTargets, 3> scales;
  std::size_t skipped_small = 0;  // boxes under 2 px
  std::size_t skipped_full = 0;   // every candidate slot already taken
};

/// Each box goes to the (scale, anchor) pair with the highest centered
/// shape IoU, in the cell holding its center. Ties prefer the finer scale,
/// then the lower anchor index. When the preferred slot already holds an
/// earlier box, the next pair in the same ranking is tried. Boxes narrower
/// or shorter than 2 px are skipped.
TargetAssignment assign_targets(const std::vector<LabeledBox>& boxes, const AnchorSet& anchors,
                                std::size_t input_size, std::size_t num_classes);

/// Inverse of the assignment encoding, as the detector decodes it.
Box decode_positive(const Positive& p, const AnchorSize& anchor, double stride);

// ---- composite loss ---------------------------------------------------------

struct LossWeights {
  double giou = 1.0, obj = 1.0, cls = 1.0;
};

struct LossOptions {
  LossWeights weights;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double label_smoothing = 0.01;
};

struct LossBreakdown {
  Tensor<float> total;
  double giou = 0, obj = 0, cls = 0;
  std::size_t positives = 0;
};

/// Weighted sum of: mean 1 - GIoU over positives, mean focal objectness over
/// every anchor slot, and mean (over positives) of the summed smoothed BCE
/// over classes. Records one backward rule into all three raw tensors.
LossBreakdown detection_loss(Tape<float>* tape, const RawPrediction<float>& raw,
                             const std::vector<TargetAssignment>& targets, const DetectorConfig& config,
                             const LossOptions& options);

// ---- schedules and config ---------------------------------------------------

struct LrSchedule {
  double peak = 0.0026;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
};

/// peak * step / warmup during warmup, then 0.5 * peak * (1 + cos(pi * progress))
/// with progress = (step - warmup) / (total - 1 - warmup); exactly 0 at the
/// final step (total - 1) and beyond.
double lr_at(std::size_t step, const LrSchedule& schedule);

struct DropBlockConfig {
  bool enabled = true;
  std::size_t block_size = 3;
  double keep_start = 1.0;
  double keep_end = 0.90;
};

struct TrainConfig {
  std::size_t epochs = 225;
  std::size_t warmup_epochs = 20;
  double peak_lr = 0.0026;
  double momentum = 0.996;
  double weight_decay = 0.0005;
  double label_smoothing = 0.01;
  std::size_t batch_size = 32;
  std::size_t accumulation = 1;  // micro-batches per optimizer step
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  DropBlockConfig dropblock;
  bool shake_shake = false;
  LossWeights loss_weights;
  std::string augment = "none";  // none | randaugment | augmix
  bool geometric = false;
  std::size_t eval_interval = 1;  // epochs between mAP evaluations; 0 disables
  double stop_at_map = 0.0;       // stop once mAP reaches this; 0 disables

  void validate() const;
  std::size_t steps_per_epoch(std::size_t samples) const;
  LrSchedule schedule(std::size_t samples) const;
  LossOptions loss_options() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `key = value` lines; `#` starts a comment. Keys are the TrainConfig field
/// names, nested ones dotted (dropblock.keep_end, loss_weights.giou).
/// Unknown keys and unparsable values throw ConfigError naming the key.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& config);

// ---- epoch loop -------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss = 0, giou = 0, obj = 0, cls = 0;
  double lr = 0;  // at the last step
  double keep_prob = 1.0;
  std::optional<double> map;
  double seconds = 0;
};

std::string metrics_json_line(const EpochMetrics& m);

class Trainer {
 public:
  /// The model's shake-shake flag must match the config.
  Trainer(Detector<float>& model, TrainConfig config, std::uint64_t seed);

  /// One pass over `data` in a seed-derived order. Throws NumericError naming
  /// the batch when the loss is not finite.
  EpochMetrics train_epoch(const std::vector<Sample>& data, std::size_t epoch);

  const TrainConfig& config() const { return config_; }
  std::size_t global_step() const { return step_; }
  const std::vector<double>& lr_trace() const { return lr_trace_; }

 private:
  std::vector<Sample> prepare_batch(const std::vector<Sample>& data, const std::vector<std::size_t>& order,
                                    std::size_t begin, std::size_t end, std::size_t epoch) const;

  Detector<float>& model_;
  TrainConfig config_;
  std::uint64_t seed_;
  std::size_t step_ = 0;
  std::vector<double> lr_trace_;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: nothing written
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::optional<double> best_map;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Full run: writes checkpoint_init.yfck before training, metrics.jsonl as it
/// goes, checkpoint_best.yfck whenever mAP improves and checkpoint_final.yfck
/// at the end. Evaluation runs on `eval_data` (the training data when null).
TrainResult train(Detector<float>& model, const std::vector<Sample>& data, const TrainConfig& config,
                  std::uint64_t seed, const TrainOutputs& outputs = {},
                  const std::vector<Sample>* eval_data = nullptr);

}  // namespace yf

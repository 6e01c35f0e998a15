#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "yolo_former/kernels.hpp"
#include "yolo_former/training.hpp"

namespace yf {

namespace {

void require_proper(const Box& b, const char* what) {
  if (!(b.xmax > b.xmin && b.ymax > b.ymin))
    throw std::invalid_argument(std::string(what) + ": degenerate box (" + std::to_string(b.xmin) + ", " +
                                std::to_string(b.ymin) + ", " + std::to_string(b.xmax) + ", " +
                                std::to_string(b.ymax) + ")");
}

double softplus(double z) { return kernels::softplus<double>(z); }

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

double giou(const Box& a, const Box& b) {
  require_proper(a, "giou");
  require_proper(b, "giou");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enc = (std::max(a.xmax, b.xmax) - std::min(a.xmin, b.xmin)) *
                     (std::max(a.ymax, b.ymax) - std::min(a.ymin, b.ymin));
  return inter / uni - (enc - uni) / enc;
}

GiouLossGrad giou_loss_grad(const Box& p, const Box& g) {
  require_proper(p, "giou_loss");
  require_proper(g, "giou_loss");
  const double pw = p.width(), ph = p.height();
  const double iw = std::min(p.xmax, g.xmax) - std::max(p.xmin, g.xmin);
  const double ih = std::min(p.ymax, g.ymax) - std::max(p.ymin, g.ymin);
  const bool overlap = iw > 0 && ih > 0;
  const double I = overlap ? iw * ih : 0.0;
  const double U = pw * ph + g.area() - I;
  const double ew = std::max(p.xmax, g.xmax) - std::min(p.xmin, g.xmin);
  const double eh = std::max(p.ymax, g.ymax) - std::min(p.ymin, g.ymin);
  const double E = ew * eh;

  GiouLossGrad r;
  r.loss = 2.0 - I / U - U / E;
  const double dI = -(U + I) / (U * U) + 1.0 / E;
  const double dA = I / (U * U) - 1.0 / E;
  const double dE = U / (E * E);

  // d area(pred)
  std::array<double, 4> g4{-ph * dA, -pw * dA, ph * dA, pw * dA};
  if (overlap) {
    if (p.xmin > g.xmin) g4[0] -= ih * dI;
    if (p.xmax < g.xmax) g4[2] += ih * dI;
    if (p.ymin > g.ymin) g4[1] -= iw * dI;
    if (p.ymax < g.ymax) g4[3] += iw * dI;
  }
  if (p.xmin < g.xmin) g4[0] -= eh * dE;
  if (p.xmax > g.xmax) g4[2] += eh * dE;
  if (p.ymin < g.ymin) g4[1] -= ew * dE;
  if (p.ymax > g.ymax) g4[3] += ew * dE;
  r.d_pred = g4;
  return r;
}

double focal_loss(double z, double y, double gamma, double alpha) {
  const double p = logistic(z);
  const double log_p = -softplus(-z), log_q = -softplus(z);
  const double a_pos = alpha < 0 ? 1.0 : alpha, a_neg = alpha < 0 ? 1.0 : 1.0 - alpha;
  const double pos = -a_pos * std::pow(1.0 - p, gamma) * log_p;
  const double neg = -a_neg * std::pow(p, gamma) * log_q;
  return y * pos + (1.0 - y) * neg;
}

double focal_loss_grad(double z, double y, double gamma, double alpha) {
  const double p = logistic(z), q = 1.0 - p;
  const double log_p = -softplus(-z), log_q = -softplus(z);
  const double a_pos = alpha < 0 ? 1.0 : alpha, a_neg = alpha < 0 ? 1.0 : 1.0 - alpha;
  const double pos = a_pos * std::pow(q, gamma) * (gamma * p * log_p - q);
  const double neg = a_neg * std::pow(p, gamma) * (p - gamma * q * log_q);
  return y * pos + (1.0 - y) * neg;
}

double bce_with_logits(double z, double t) { return softplus(z) - t * z; }

double smooth_label(double y, double s) { return y * (1.0 - s) + s / 2.0; }

namespace ops {

template <typename T>
Tensor<T> focal_loss(Tape<T>* tape, const Tensor<T>& logits, std::vector<T> targets, double gamma, double alpha) {
  if (targets.size() != logits.numel()) throw ShapeError("focal_loss: target count mismatch");
  if (logits.numel() == 0) throw ShapeError("focal_loss: empty input");
  const double inv = 1.0 / static_cast<double>(logits.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += yf::focal_loss(logits.data()[i], targets[i], gamma, alpha);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s * inv));
  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = logits.node(), on = out.node();
    tape->record({xn}, on, [xn, on, t = std::move(targets), gamma, alpha, inv] {
      auto d = xn->ensure_grad();
      const double g = on->grad[0] * inv;
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] += static_cast<T>(g * focal_loss_grad(xn->data[i], t[i], gamma, alpha));
    });
  }
  return out;
}

template <typename T>
Tensor<T> classification_loss(Tape<T>* tape, const Tensor<T>& logits, const std::vector<int>& classes,
                              double smoothing) {
  if (logits.rank() != 2 || logits.dim(0) != classes.size() || classes.empty())
    throw ShapeError("classification_loss: expected [P, C] logits for " + std::to_string(classes.size()) +
                     " targets, got " + shape_str(logits.shape()));
  const std::size_t P = logits.dim(0), C = logits.dim(1);
  std::vector<double> target(P * C);
  for (std::size_t i = 0; i < P; ++i) {
    if (classes[i] < 0 || static_cast<std::size_t>(classes[i]) >= C)
      throw std::invalid_argument("classification_loss: class id out of range");
    for (std::size_t c = 0; c < C; ++c)
      target[i * C + c] = smooth_label(static_cast<std::size_t>(classes[i]) == c ? 1.0 : 0.0, smoothing);
  }
  const double inv = 1.0 / static_cast<double>(P);
  double s = 0.0;
  for (std::size_t k = 0; k < P * C; ++k) s += bce_with_logits(logits.data()[k], target[k]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s * inv));
  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = logits.node(), on = out.node();
    tape->record({xn}, on, [xn, on, target = std::move(target), inv] {
      auto d = xn->ensure_grad();
      const double g = on->grad[0] * inv;
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += static_cast<T>(g * (logistic(xn->data[k]) - target[k]));
    });
  }
  return out;
}

template <typename T>
Tensor<T> giou_loss(Tape<T>* tape, const Tensor<T>& boxes, const std::vector<Box>& targets) {
  if (boxes.rank() != 2 || boxes.dim(1) != 4 || boxes.dim(0) != targets.size() || targets.empty())
    throw ShapeError("giou_loss: expected [P, 4] boxes for " + std::to_string(targets.size()) + " targets, got " +
                     shape_str(boxes.shape()));
  const std::size_t P = targets.size();
  const double inv = 1.0 / static_cast<double>(P);
  std::vector<double> grads(P * 4);
  double s = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    const T* b = boxes.data() + i * 4;
    const auto r = giou_loss_grad(Box{b[0], b[1], b[2], b[3]}, targets[i]);
    s += r.loss;
    std::copy(r.d_pred.begin(), r.d_pred.end(), grads.begin() + static_cast<long>(i * 4));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s * inv));
  if (tape && boxes.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = boxes.node(), on = out.node();
    tape->record({xn}, on, [xn, on, grads = std::move(grads), inv] {
      auto d = xn->ensure_grad();
      const double g = on->grad[0] * inv;
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += static_cast<T>(g * grads[k]);
    });
  }
  return out;
}

#define YF_LOSSES(T)                                                                                          \
  template Tensor<T> focal_loss<T>(Tape<T>*, const Tensor<T>&, std::vector<T>, double, double);               \
  template Tensor<T> classification_loss<T>(Tape<T>*, const Tensor<T>&, const std::vector<int>&, double);     \
  template Tensor<T> giou_loss<T>(Tape<T>*, const Tensor<T>&, const std::vector<Box>&);

YF_LOSSES(float)
YF_LOSSES(double)
#undef YF_LOSSES

}  // namespace ops

TargetAssignment assign_targets(const std::vector<LabeledBox>& boxes, const AnchorSet& anchors,
                                std::size_t input_size, std::size_t num_classes) {
  TargetAssignment out;
  for (std::size_t s = 0; s < 3; ++s) {
    auto& st = out.scales[s];
    st.grid_h = st.grid_w = input_size / kStrides[s];
    st.objectness.assign(3 * st.grid_h * st.grid_w, 0);
  }
  for (const auto& lb : boxes) {
    if (lb.class_id < 0 || static_cast<std::size_t>(lb.class_id) >= num_classes)
      throw std::invalid_argument("assign_targets: class id " + std::to_string(lb.class_id) + " out of range");
    const double w = lb.box.width(), h = lb.box.height();
    if (w < 2.0 || h < 2.0) {
      ++out.skipped_small;
      continue;
    }
    struct Candidate {
      double iou;
      std::size_t scale, anchor;
    };
    std::array<Candidate, 9> cand{};
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t a = 0; a < 3; ++a) {
        const auto& an = anchors[s][a];
        const double inter = std::min(w, an.w) * std::min(h, an.h);
        cand[s * 3 + a] = {inter / (w * h + an.w * an.h - inter), s, a};
      }
    std::stable_sort(cand.begin(), cand.end(), [](const Candidate& x, const Candidate& y) { return x.iou > y.iou; });
    bool placed = false;
    for (const auto& c : cand) {
      auto& st = out.scales[c.scale];
      const double stride = static_cast<double>(kStrides[c.scale]);
      const double gx = lb.box.cx() / stride, gy = lb.box.cy() / stride;
      const std::size_t col = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(gx))), st.grid_w - 1);
      const std::size_t row = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(gy))), st.grid_h - 1);
      const std::size_t slot = (c.anchor * st.grid_h + row) * st.grid_w + col;
      if (st.objectness[slot]) continue;
      st.objectness[slot] = 1;
      Positive p;
      p.slot = slot;
      p.row = row;
      p.col = col;
      p.anchor = c.anchor;
      auto logit = [](double f) {
        f = std::clamp(f, 1e-6, 1.0 - 1e-6);
        return std::log(f / (1.0 - f));
      };
      p.tx = logit(gx - static_cast<double>(col));
      p.ty = logit(gy - static_cast<double>(row));
      p.tw = std::log(w / anchors[c.scale][c.anchor].w);
      p.th = std::log(h / anchors[c.scale][c.anchor].h);
      p.class_id = lb.class_id;
      p.box = lb.box;
      st.positives.push_back(p);
      placed = true;
      break;
    }
    if (!placed) ++out.skipped_full;
  }
  return out;
}

Box decode_positive(const Positive& p, const AnchorSize& anchor, double stride) {
  const double cx = (static_cast<double>(p.col) + logistic(p.tx)) * stride;
  const double cy = (static_cast<double>(p.row) + logistic(p.ty)) * stride;
  const double w = anchor.w * std::exp(p.tw), h = anchor.h * std::exp(p.th);
  return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

LossBreakdown detection_loss(Tape<float>* tape, const RawPrediction<float>& raw,
                             const std::vector<TargetAssignment>& targets, const DetectorConfig& config,
                             const LossOptions& opt) {
  const std::size_t N = targets.size(), per = config.outputs_per_anchor(), nc = config.num_classes;
  std::array<std::vector<double>, 3> grads;
  std::size_t slots = 0, positives = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& r = raw[s];
    if (r.rank() != 4 || r.dim(0) != N || r.dim(1) != 3 * per)
      throw ShapeError("detection_loss: scale " + std::to_string(s) + " prediction " + shape_str(r.shape()) +
                       " does not match " + std::to_string(N) + " targets");
    for (const auto& t : targets)
      if (t.scales[s].grid_h != r.dim(2) || t.scales[s].grid_w != r.dim(3))
        throw ShapeError("detection_loss: target grid does not match prediction at scale " + std::to_string(s));
    grads[s].assign(r.numel(), 0.0);
    slots += N * 3 * r.dim(2) * r.dim(3);
    for (const auto& t : targets) positives += t.scales[s].positives.size();
  }

  // Raw sums first; normalization is applied when the gradient is scaled below.
  double giou_sum = 0, obj_sum = 0, cls_sum = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t H = raw[s].dim(2), W = raw[s].dim(3), hw = H * W;
    const double stride = static_cast<double>(kStrides[s]);
    const float* base = raw[s].data();
    for (std::size_t n = 0; n < N; ++n) {
      const auto& st = targets[n].scales[s];
      const std::size_t img = n * 3 * per * hw;
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t idx = img + (a * per + 4) * hw + p;
          const double y = st.objectness[a * hw + p];
          obj_sum += focal_loss(base[idx], y, opt.focal_gamma, opt.focal_alpha);
          grads[s][idx] = focal_loss_grad(base[idx], y, opt.focal_gamma, opt.focal_alpha);
        }
      for (const auto& pos : st.positives) {
        const std::size_t p = pos.row * W + pos.col;
        auto at = [&](std::size_t k) { return img + (pos.anchor * per + k) * hw + p; };
        const auto& anchor = config.anchors[s][pos.anchor];
        const double sx = logistic(base[at(0)]), sy = logistic(base[at(1)]);
        const double tw = base[at(2)], th = base[at(3)];
        constexpr double kMaxLog = 10.0;
        const double w = anchor.w * std::exp(std::clamp(tw, -kMaxLog, kMaxLog));
        const double h = anchor.h * std::exp(std::clamp(th, -kMaxLog, kMaxLog));
        const double cx = (static_cast<double>(pos.col) + sx) * stride;
        const double cy = (static_cast<double>(pos.row) + sy) * stride;
        const auto gl = giou_loss_grad(Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, pos.box);
        giou_sum += gl.loss;
        const auto& d = gl.d_pred;
        grads[s][at(0)] = (d[0] + d[2]) * stride * sx * (1 - sx);
        grads[s][at(1)] = (d[1] + d[3]) * stride * sy * (1 - sy);
        grads[s][at(2)] = std::abs(tw) < kMaxLog ? 0.5 * (d[2] - d[0]) * w : 0.0;
        grads[s][at(3)] = std::abs(th) < kMaxLog ? 0.5 * (d[3] - d[1]) * h : 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
          const double t = smooth_label(static_cast<int>(c) == pos.class_id ? 1.0 : 0.0, opt.label_smoothing);
          const double z = base[at(5 + c)];
          cls_sum += bce_with_logits(z, t);
          grads[s][at(5 + c)] = logistic(z) - t;
        }
      }
    }
  }

  const double obj_scale = opt.weights.obj / static_cast<double>(slots);
  const double pos_scale = positives ? 1.0 / static_cast<double>(positives) : 0.0;
  LossBreakdown out;
  out.positives = positives;
  out.obj = obj_sum / static_cast<double>(slots);
  out.giou = giou_sum * pos_scale;
  out.cls = cls_sum * pos_scale;
  out.total = Tensor<float>::scalar(
      static_cast<float>(opt.weights.giou * out.giou + opt.weights.obj * out.obj + opt.weights.cls * out.cls));

  // Fold the term weights and normalizers into the stored gradients.
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t hw = raw[s].dim(2) * raw[s].dim(3);
    for (std::size_t k = 0; k < grads[s].size(); ++k) {
      const std::size_t field = (k / hw) % per;
      if (field == 4) grads[s][k] *= obj_scale;
      else if (field < 4) grads[s][k] *= opt.weights.giou * pos_scale;
      else grads[s][k] *= opt.weights.cls * pos_scale;
    }
  }

  bool any = false;
  for (const auto& r : raw) any = any || r.requires_grad();
  if (tape && any) {
    out.total.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode<float>>> inputs{raw[0].node(), raw[1].node(), raw[2].node()};
    auto on = out.total.node();
    tape->record(inputs, on, [inputs, on, grads = std::move(grads)] {
      const double g = on->grad[0];
      for (std::size_t s = 0; s < 3; ++s) {
        if (!inputs[s]->requires_grad) continue;
        auto d = inputs[s]->ensure_grad();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += static_cast<float>(g * grads[s][k]);
      }
    });
  }
  return out;
}

}  // namespace yf

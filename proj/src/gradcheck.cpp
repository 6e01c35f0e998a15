#include "yolo_former/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "yolo_former/attention.hpp"
#include "yolo_former/regularization.hpp"
#include "yolo_former/training.hpp"

namespace yf {

GradcheckResult check_gradients(const std::string& name, std::vector<GradInput> inputs,
                                const std::function<Tensor<double>(Tape<double>*)>& f,
                                const GradcheckOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckResult res;
  res.name = name;
  for (auto& in : inputs) {
    if (!in.tensor.requires_grad()) throw std::logic_error("gradcheck: input " + in.name + " does not require grad");
    in.tensor.clear_grad();
  }
  {
    Tape<double> tape;
    const Tensor<double> loss = f(&tape);
    tape.backward(loss);
  }
  SeededRng pick(opt.seed, /*stream=*/0x6c);
  for (auto& in : inputs) {
    const std::size_t n = in.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (in.tensor.has_grad()) {
      const auto g = in.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opt.max_checks_per_tensor) {
      pick.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_checks_per_tensor);
    }
    auto values = in.tensor.values();
    for (std::size_t i : idx) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double fp = f(nullptr).item();
      values[i] = saved - opt.step;
      const double fm = f(nullptr).item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2 * opt.step);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
      if (rel > res.max_rel_error || res.worst.empty()) {
        res.max_rel_error = rel;
        res.worst = in.name + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  res.passed = res.max_rel_error < opt.tolerance;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

namespace {

Tensor<double> random_tensor(Shape shape, SeededRng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  t.set_requires_grad(true);
  return t;
}

std::vector<double> random_weights(std::size_t n, SeededRng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.normal();
  return w;
}

// Projects an output onto a fixed random direction.
struct Projector {
  std::vector<double> w;
  Tensor<double> operator()(Tape<double>* tape, const Tensor<double>& y) {
    if (w.empty()) throw std::logic_error("gradcheck: projector not initialised");
    return ops::dot_constant(tape, y, w);
  }
};

std::vector<GradInput> param_inputs(ParamStore<double>& store) {
  std::vector<GradInput> out;
  for (auto& p : store.params()) out.push_back({p.name, p.value});
  return out;
}

// Batch-norm affine parameters start at (1, 0); randomising them exercises
// every term of the backward rules.
void randomise_affine(ParamStore<double>& store, SeededRng& rng) {
  for (auto& p : store.params()) {
    const auto& n = p.name;
    if (n.size() > 6 && n.compare(n.size() - 6, 6, ".gamma") == 0)
      for (auto& v : p.value.values()) v = 1.0 + 0.3 * rng.normal();
    else if (n.size() > 5 && n.compare(n.size() - 5, 5, ".beta") == 0)
      for (auto& v : p.value.values()) v = 0.3 * rng.normal();
  }
}

constexpr std::size_t N = 2, C = 8, H = 6, W = 6;

GradcheckResult suite_conv2d(const GradcheckOptions& o, std::size_t stride) {
  SeededRng rng(o.seed, 1 + stride);
  auto x = random_tensor({N, 4, H, W}, rng);
  auto w = random_tensor({C, 4, 3, 3}, rng, 0.3);
  auto b = random_tensor({C}, rng);
  const std::size_t oh = stride == 1 ? H : H / 2;
  Projector proj{random_weights(N * C * oh * oh, rng)};
  return check_gradients(stride == 1 ? "conv2d" : "conv2d_stride2", {{"x", x}, {"weight", w}, {"bias", b}},
                         [&](Tape<double>* t) { return proj(t, ops::conv2d(t, x, w, b, stride, 1)); }, o);
}

GradcheckResult suite_unary(const GradcheckOptions& o, const std::string& name) {
  SeededRng rng(o.seed, 3);
  auto x = random_tensor({N, C, H, W}, rng, 2.0);
  Projector proj{random_weights(x.numel(), rng)};
  return check_gradients(name, {{"x", x}}, [&](Tape<double>* t) {
    return proj(t, name == "mish" ? ops::mish(t, x) : ops::sigmoid(t, x));
  }, o);
}

GradcheckResult suite_batch_norm(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 4);
  auto x = random_tensor({N, C, H, W}, rng, 1.5);
  auto gamma = random_tensor({C}, rng);
  auto beta = random_tensor({C}, rng);
  std::vector<double> rm(C, 0.0), rv(C, 1.0);
  Projector proj{random_weights(x.numel(), rng)};
  BatchNormOptions bo;
  bo.update_running_stats = false;
  return check_gradients("batch_norm", {{"x", x}, {"gamma", gamma}, {"beta", beta}}, [&](Tape<double>* t) {
    return proj(t, ops::batch_norm(t, x, gamma, beta, std::span<double>(rm), std::span<double>(rv), Mode::train, bo));
  }, o);
}

// Train-mode forward with shake coefficients pinned so repeated evaluations
// see the same function.
Context<double> fixed_context(Tape<double>* tape, CsamVariant v, SeededRng& rng) {
  Context<double> ctx;
  ctx.tape = tape;
  ctx.mode = Mode::train;
  ctx.bn.update_running_stats = false;
  if (has_branches(v)) {
    const std::array<double, 2> pair{0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform()};
    ctx.shake_override = ShakeCoefficients{pair, pair, Mode::train};
  }
  return ctx;
}

GradcheckResult suite_csam(const GradcheckOptions& o, CsamVariant v) {
  SeededRng rng(o.seed, 10 + static_cast<std::uint64_t>(v));
  ParamStore<double> store;
  SeededRng init(o.seed, 20 + static_cast<std::uint64_t>(v));
  Csam<double> csam(store, "csam", CsamConfig{v, C, 4, has_branches(v)}, init);
  randomise_affine(store, rng);
  auto x = random_tensor({N, C, H, W}, rng);
  Projector proj{random_weights(x.numel(), rng)};
  SeededRng shake(o.seed, 30);
  auto inputs = param_inputs(store);
  inputs.insert(inputs.begin(), GradInput{"x", x});
  const auto base = fixed_context(nullptr, v, shake);
  return check_gradients("csam_" + std::string(to_string(v)), inputs, [&](Tape<double>* t) {
    Context<double> ctx = base;
    ctx.tape = t;
    return proj(t, csam(ctx, x));
  }, o);
}

GradcheckResult suite_transformer(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 40);
  ParamStore<double> store;
  SeededRng init(o.seed, 41);
  TransformerConfig tc;
  tc.in_channels = 4;
  tc.out_channels = C;
  tc.csam = CsamConfig{CsamVariant::single_head, C, 4, false};
  TransformerModule<double> tm(store, "tf", tc, init);
  randomise_affine(store, rng);
  auto x = random_tensor({N, 4, H, W}, rng);
  Projector proj{random_weights(N * C * H * W, rng)};
  auto inputs = param_inputs(store);
  inputs.insert(inputs.begin(), GradInput{"x", x});
  return check_gradients("transformer", inputs, [&](Tape<double>* t) {
    Context<double> ctx;
    ctx.tape = t;
    ctx.mode = Mode::train;
    ctx.bn.update_running_stats = false;
    return proj(t, tm(ctx, x));
  }, o);
}

Box random_box(SeededRng& rng) {
  const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
  return Box{x, y, x + rng.uniform(2, 15), y + rng.uniform(2, 15)};
}

GradcheckResult suite_giou(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 50);
  constexpr std::size_t P = 24;
  Tensor<double> boxes(Shape{P, 4});
  std::vector<Box> targets;
  for (std::size_t i = 0; i < P; ++i) {
    const Box t = random_box(rng);
    // Half the pairs overlap their target, half are disjoint.
    Box p = i % 2 ? random_box(rng)
                  : Box{t.xmin + rng.uniform(-2, 2), t.ymin + rng.uniform(-2, 2), t.xmax + rng.uniform(-2, 2),
                        t.ymax + rng.uniform(-2, 2)};
    if (i % 2 == 1) p = Box{p.xmin + 40, p.ymin, p.xmax + 40, p.ymax};
    targets.push_back(t);
    auto v = boxes.values();
    v[i * 4] = p.xmin;
    v[i * 4 + 1] = p.ymin;
    v[i * 4 + 2] = std::max(p.xmax, p.xmin + 1);
    v[i * 4 + 3] = std::max(p.ymax, p.ymin + 1);
  }
  boxes.set_requires_grad(true);
  return check_gradients("giou_loss", {{"boxes", boxes}},
                         [&](Tape<double>* t) { return ops::giou_loss(t, boxes, targets); }, o);
}

GradcheckResult suite_focal(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 60);
  auto x = random_tensor({N, C, H, W}, rng, 2.0);
  std::vector<double> y(x.numel());
  for (auto& v : y) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  return check_gradients("focal_loss", {{"logits", x}},
                         [&](Tape<double>* t) { return ops::focal_loss(t, x, y, 2.0, 0.25); }, o);
}

GradcheckResult suite_bce(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 70);
  constexpr std::size_t P = 16, K = 5;
  auto x = random_tensor({P, K}, rng, 2.0);
  std::vector<int> cls(P);
  for (auto& c : cls) c = static_cast<int>(rng.below(K));
  return check_gradients("bce_smoothing", {{"logits", x}},
                         [&](Tape<double>* t) { return ops::classification_loss(t, x, cls, 0.01); }, o);
}

GradcheckResult suite_upsample(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 80);
  auto x = random_tensor({N, C, 3, 3}, rng);
  Projector proj{random_weights(N * C * 36, rng)};
  return check_gradients("upsample_bilinear2x", {{"x", x}},
                         [&](Tape<double>* t) { return proj(t, ops::upsample_bilinear2x(t, x)); }, o);
}

GradcheckResult suite_concat_split(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 90);
  auto a = random_tensor({N, 4, H, W}, rng);
  auto b = random_tensor({N, 4, H, W}, rng);
  Projector proj{random_weights(N * 8 * H * W, rng)};
  return check_gradients("concat_split", {{"a", a}, {"b", b}}, [&](Tape<double>* t) {
    auto parts = ops::split_channels(t, ops::concat_channels(t, {a, b}), 4);
    auto mixed = ops::concat_channels(t, {ops::mul(t, parts[0], parts[3]), parts[1], parts[2], parts[3]});
    return proj(t, mixed);
  }, o);
}

GradcheckResult suite_dropblock(const GradcheckOptions& o) {
  SeededRng rng(o.seed, 100);
  auto x = random_tensor({N, C, H, W}, rng);
  Projector proj{random_weights(x.numel(), rng)};
  return check_gradients("dropblock", {{"x", x}}, [&](Tape<double>* t) {
    SeededRng mask(o.seed, 101);  // same mask on every evaluation
    return proj(t, dropblock(t, x, 0.8, 3, Mode::train, mask));
  }, o);
}

using Suite = std::function<GradcheckResult(const GradcheckOptions&)>;

const std::vector<std::pair<std::string, Suite>>& suites() {
  static const std::vector<std::pair<std::string, Suite>> all{
      {"conv2d", [](const GradcheckOptions& o) { return suite_conv2d(o, 1); }},
      {"conv2d_stride2", [](const GradcheckOptions& o) { return suite_conv2d(o, 2); }},
      {"mish", [](const GradcheckOptions& o) { return suite_unary(o, "mish"); }},
      {"sigmoid", [](const GradcheckOptions& o) { return suite_unary(o, "sigmoid"); }},
      {"batch_norm", suite_batch_norm},
      {"csam_sh", [](const GradcheckOptions& o) { return suite_csam(o, CsamVariant::single_head); }},
      {"csam_mb", [](const GradcheckOptions& o) { return suite_csam(o, CsamVariant::multi_branch); }},
      {"csam_mh", [](const GradcheckOptions& o) { return suite_csam(o, CsamVariant::multi_head); }},
      {"csam_mhmb", [](const GradcheckOptions& o) { return suite_csam(o, CsamVariant::multi_head_multi_branch); }},
      {"transformer", suite_transformer},
      {"giou_loss", suite_giou},
      {"focal_loss", suite_focal},
      {"bce_smoothing", suite_bce},
      {"upsample_bilinear2x", suite_upsample},
      {"concat_split", suite_concat_split},
      {"dropblock", suite_dropblock},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradcheck_suites() {
  std::vector<std::string> names;
  for (const auto& [n, f] : suites()) names.push_back(n);
  return names;
}

GradcheckResult run_gradcheck(const std::string& suite, const GradcheckOptions& options) {
  for (const auto& [n, f] : suites())
    if (n == suite) return f(options);
  throw std::invalid_argument("gradcheck: unknown suite '" + suite + "'");
}

std::vector<GradcheckResult> run_all_gradchecks(const GradcheckOptions& options) {
  std::vector<GradcheckResult> out;
  for (const auto& [n, f] : suites()) out.push_back(f(options));
  return out;
}

}  // namespace yf

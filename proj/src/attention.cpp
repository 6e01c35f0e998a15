#include "yolo_former/attention.hpp"

#include <stdexcept>

namespace yf {

std::string_view to_string(CsamVariant v) {
  switch (v) {
    case CsamVariant::single_head: return "sh";
    case CsamVariant::multi_branch: return "mb";
    case CsamVariant::multi_head: return "mh";
    case CsamVariant::multi_head_multi_branch: return "mhmb";
  }
  return "?";
}

CsamVariant parse_variant(std::string_view text) {
  if (text == "sh" || text == "single_head") return CsamVariant::single_head;
  if (text == "mb" || text == "multi_branch") return CsamVariant::multi_branch;
  if (text == "mh" || text == "multi_head") return CsamVariant::multi_head;
  if (text == "mhmb" || text == "multi_head_multi_branch") return CsamVariant::multi_head_multi_branch;
  throw std::invalid_argument("unknown CSAM variant '" + std::string(text) + "' (expected sh|mb|mh|mhmb)");
}

bool has_branches(CsamVariant v) {
  return v == CsamVariant::multi_branch || v == CsamVariant::multi_head_multi_branch;
}

bool has_heads(CsamVariant v) {
  return v == CsamVariant::multi_head || v == CsamVariant::multi_head_multi_branch;
}

void CsamConfig::validate() const {
  if (channels == 0) throw std::invalid_argument("CsamConfig: channels must be positive");
  if (has_heads(variant)) {
    if (heads == 0 || channels % heads != 0)
      throw std::invalid_argument("CsamConfig: " + std::to_string(channels) + " channels not divisible by " +
                                  std::to_string(heads) + " heads");
  }
  if (shake_shake && !has_branches(variant))
    throw std::invalid_argument("CsamConfig: shake-shake requires a multi-branch variant, got " +
                                std::string(to_string(variant)));
}

void TransformerConfig::validate() const {
  if (in_channels == 0 || out_channels == 0)
    throw std::invalid_argument("TransformerConfig: channel counts must be positive");
  if (csam.channels != out_channels)
    throw std::invalid_argument("TransformerConfig: csam.channels (" + std::to_string(csam.channels) +
                                ") must equal out_channels (" + std::to_string(out_channels) + ")");
  csam.validate();
}

std::array<double, 2> sample_shake_pair(SeededRng& rng, ShakePhase phase) {
  switch (phase) {
    case ShakePhase::eval: return {0.5, 0.5};
    case ShakePhase::train_forward: {
      const double a = rng.uniform();
      return {a, rng.uniform()};
    }
    case ShakePhase::train_backward: {
      const double a = rng.beta(1.0, 1.0);
      return {a, rng.beta(1.0, 1.0)};
    }
  }
  return {0.5, 0.5};
}

ShakeCoefficients sample_shake_coefficients(SeededRng& rng, Mode mode) {
  ShakeCoefficients c;
  c.mode = mode;
  if (mode == Mode::eval) return c;
  c.forward = sample_shake_pair(rng, ShakePhase::train_forward);
  c.backward = sample_shake_pair(rng, ShakePhase::train_backward);
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
Psi<T>::Psi(ParamStore<T>& store, const std::string& prefix, const CsamConfig& config, SeededRng& init)
    : config_(config) {
  config_.validate();
  const std::size_t C = config_.channels;
  if (has_branches(config_.variant)) {
    for (const char* b : {"a", "b", "c"}) {
      conv1_.emplace_back(store, prefix + ".conv1." + b, C, C, 1, 1, init);
      bn_.emplace_back(store, prefix + ".bn1." + b, C);
    }
  } else {
    conv1_.emplace_back(store, prefix + ".conv1", C, C, 1, 1, init);
    bn_.emplace_back(store, prefix + ".bn1", C);
  }
  if (has_heads(config_.variant)) {
    const std::size_t hc = C / config_.heads;
    for (std::size_t h = 0; h < config_.heads; ++h)
      heads_.emplace_back(store, prefix + ".conv2.head" + std::to_string(h), hc, hc, 3, 1, init);
  } else {
    conv2_ = Conv2d<T>(store, prefix + ".conv2", C, C, 3, 1, init);
  }
}

template <typename T>
Tensor<T> Psi<T>::spatial(Context<T>& ctx, const Tensor<T>& x) const {
  if (heads_.empty()) return conv2_(ctx, x);
  auto parts = ops::split_channels(ctx.tape, x, heads_.size());
  for (std::size_t h = 0; h < parts.size(); ++h) parts[h] = heads_[h](ctx, parts[h]);
  return ops::concat_channels(ctx.tape, parts);
}

template <typename T>
Tensor<T> Psi<T>::operator()(Context<T>& ctx, const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.channels)
    throw ShapeError("psi: expected " + std::to_string(config_.channels) + " channels, got " + shape_str(x.shape()));
  const bool branched = has_branches(config_.variant);
  if (ctx.shake_override && !branched)
    throw std::invalid_argument("psi: shake coefficients supplied to non-branch variant " +
                                std::string(to_string(config_.variant)));

  auto unit = [&](std::size_t i) { return ops::mish(ctx.tape, bn_[i](ctx, conv1_[i](ctx, x))); };
  if (!branched) return spatial(ctx, unit(0));

  const Tensor<T> a = spatial(ctx, unit(0));
  const Tensor<T> b = unit(1);
  const Tensor<T> c = unit(2);
  std::array<double, 2> fwd{1.0, 1.0}, bwd{1.0, 1.0};
  if (config_.shake_shake) {
    ShakeCoefficients coeff;
    if (ctx.mode == Mode::eval) {
      coeff = ShakeCoefficients{};
    } else if (ctx.shake_override) {
      coeff = *ctx.shake_override;
    } else {
      if (!ctx.rng) throw std::logic_error("psi: shake-shake training requires an rng in the context");
      coeff = sample_shake_coefficients(*ctx.rng, Mode::train);
    }
    fwd = coeff.forward;
    bwd = coeff.backward;
  }
  return ops::shake_combine(ctx.tape, a, b, c, fwd, bwd);
}

template <typename T>
Csam<T>::Csam(ParamStore<T>& store, const std::string& prefix, const CsamConfig& config, SeededRng& init)
    : config_(config),
      q_(store, prefix + ".q", config, init),
      k_(store, prefix + ".k", config, init),
      v_(store, prefix + ".v", config, init),
      v_bn_(store, prefix + ".v.bn_out", config.channels),
      conv3_(store, prefix + ".conv3", config.channels, config.channels, 1, 1, init),
      conv4_(store, prefix + ".conv4", config.channels, config.channels, 3, 1, init) {}

template <typename T>
Tensor<T> Csam<T>::operator()(Context<T>& ctx, const Tensor<T>& x, CsamTrace<T>* trace) const {
  if (x.rank() != 4 || x.dim(1) != config_.channels)
    throw ShapeError("csam: expected " + std::to_string(config_.channels) + " channels, got " + shape_str(x.shape()));
  auto* tape = ctx.tape;
  const Tensor<T> q = q_(ctx, x);
  const Tensor<T> k = k_(ctx, x);
  const Tensor<T> v = ops::mish(tape, v_bn_(ctx, v_(ctx, x)));
  const Tensor<T> attn = ops::sigmoid(tape, ops::mul(tape, q, k));
  const Tensor<T> gated = ops::mul(tape, v, attn);
  if (trace) *trace = CsamTrace<T>{attn, v, gated};
  const Tensor<T> z = ops::mish(tape, conv3_(ctx, gated));
  const Tensor<T> branch = ops::mish(tape, conv4_(ctx, z));
  return ops::add(tape, branch, x);
}

template <typename T>
TransformerModule<T>::TransformerModule(ParamStore<T>& store, const std::string& prefix,
                                        const TransformerConfig& config, SeededRng& init)
    : config_(config) {
  config_.validate();
  const std::size_t C = config_.out_channels;
  conv1_ = Conv2d<T>(store, prefix + ".conv1", config_.in_channels, C, 1, 1, init);
  bn1_ = BatchNorm2d<T>(store, prefix + ".bn1", C);
  csam_ = Csam<T>(store, prefix + ".csam", config_.csam, init);
  bn2_ = BatchNorm2d<T>(store, prefix + ".bn2", C);
  conv2_ = Conv2d<T>(store, prefix + ".conv2", C, C, 1, 1, init);
  conv3_ = Conv2d<T>(store, prefix + ".conv3", C, C, 1, 1, init);
}

template <typename T>
Tensor<T> TransformerModule<T>::operator()(Context<T>& ctx, const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels)
    throw ShapeError("transformer: expected " + std::to_string(config_.in_channels) + " channels, got " +
                     shape_str(x.shape()));
  auto* tape = ctx.tape;
  const Tensor<T> p = conv1_(ctx, x);
  const Tensor<T> r1 = ops::add(tape, csam_(ctx, bn1_(ctx, p)), p);
  const Tensor<T> h = ops::mish(tape, conv2_(ctx, bn2_(ctx, r1)));
  const Tensor<T> w = ops::mish(tape, conv3_(ctx, h));
  return ops::add(tape, w, r1);
}

template class Psi<float>;
template class Psi<double>;
template class Csam<float>;
template class Csam<double>;
template class TransformerModule<float>;
template class TransformerModule<double>;

}  // namespace yf

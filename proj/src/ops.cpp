#include "yolo_former/ops.hpp"

#include <cmath>
#include <string>

#include "yolo_former/kernels.hpp"

namespace yf {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool wants_grad(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape) return false;
  for (const auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_nchw(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW input, got " + shape_str(x.shape()));
}

}  // namespace

template <typename T>
void require_finite(const Tensor<T>& x, const char* what) {
  for (T v : x.values())
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

namespace ops {

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  const auto g = kernels::conv_geometry(x.shape(), weight.shape(), stride, pad);
  if (bias.defined() && bias.numel() != g.out_channels)
    throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " values for " +
                     std::to_string(g.out_channels) + " output channels");
  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  kernels::conv2d_forward(g, x.data(), weight.data(), bias.defined() ? bias.data() : nullptr, out.data());
  if (wants_grad(tape, {&x, &weight, &bias})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr, on = out.node();
    std::vector<NodePtr<T>> inputs{xn, wn};
    if (bn) inputs.push_back(bn);
    tape->record(std::move(inputs), on, [g, xn, wn, bn, on] {
      T* dx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      T* dw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
      T* db = (bn && bn->requires_grad) ? bn->ensure_grad().data() : nullptr;
      kernels::conv2d_backward(g, xn->data.data(), wn->data.data(), on->grad.data(), dx, dw, db);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mish(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  kernels::mish_forward(x.numel(), x.data(), out.data());
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      kernels::mish_backward(xn->data.size(), xn->data.data(), on->grad.data(), xn->ensure_grad().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* in = x.data();
  T* o = out.data();
  const long n = static_cast<long>(x.numel());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) o[i] = kernels::sigmoid(in[i]);
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      auto dx = xn->ensure_grad();
      const long n = static_cast<long>(dx.size());
#pragma omp parallel for schedule(static)
      for (long i = 0; i < n; ++i) {
        const T s = on->data[i];
        dx[i] += on->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const long n = static_cast<long>(a.numel());
  const T *pa = a.data(), *pb = b.data();
  T* o = out.data();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  if (wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    tape->record({an, bn}, on, [an, bn, on] {
      for (const auto& in : {an, bn}) {
        if (!in->requires_grad) continue;
        auto d = in->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const long n = static_cast<long>(a.numel());
  const T *pa = a.data(), *pb = b.data();
  T* o = out.data();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
  if (wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    tape->record({an, bn}, on, [an, bn, on] {
      if (an->requires_grad) {
        auto d = an->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto d = bn->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * factor;
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on, factor] {
      auto d = xn->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_constant(Tape<T>* tape, const Tensor<T>& x, std::vector<T> mask) {
  if (mask.size() != x.numel()) throw ShapeError("mul_constant: mask size mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * mask[i];
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on, m = std::move(mask)] {
      auto d = xn->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i] * m[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& x : xs) require_nchw(x, "concat_channels");
  const std::size_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  std::size_t C = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
      throw ShapeError("concat_channels: " + shape_str(x.shape()) + " incompatible with " + shape_str(xs[0].shape()));
    C += x.dim(1);
  }
  const std::size_t hw = H * W;
  Tensor<T> out(Shape{N, C, H, W});
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.dim(1);
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(x.data() + n * c * hw, c * hw, out.data() + (n * C + offset) * hw);
    offset += c;
  }
  bool any = false;
  for (const auto& x : xs) any = any || x.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<NodePtr<T>> inputs;
    for (const auto& x : xs) inputs.push_back(x.node());
    NodePtr<T> on = out.node();
    tape->record(inputs, on, [inputs, on, N, C, hw] {
      std::size_t off = 0;
      for (const auto& in : inputs) {
        const std::size_t c = in->shape[1];
        if (in->requires_grad) {
          auto d = in->ensure_grad();
          for (std::size_t n = 0; n < N; ++n) {
            const T* src = on->grad.data() + (n * C + off) * hw;
            T* dst = d.data() + n * c * hw;
            for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
          }
        }
        off += c;
      }
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t parts) {
  require_nchw(x, "split_channels");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), hw = H * W;
  if (parts == 0 || C % parts != 0)
    throw ShapeError("split_channels: " + std::to_string(C) + " channels not divisible into " +
                     std::to_string(parts) + " parts");
  const std::size_t c = C / parts;
  std::vector<Tensor<T>> outs;
  for (std::size_t p = 0; p < parts; ++p) {
    Tensor<T> out(Shape{N, c, H, W});
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(x.data() + (n * C + p * c) * hw, c * hw, out.data() + n * c * hw);
    if (wants_grad(tape, {&x})) {
      out.set_requires_grad(true);
      NodePtr<T> xn = x.node(), on = out.node();
      tape->record({xn}, on, [xn, on, N, C, c, p, hw] {
        auto d = xn->ensure_grad();
        for (std::size_t n = 0; n < N; ++n) {
          const T* src = on->grad.data() + n * c * hw;
          T* dst = d.data() + (n * C + p * c) * hw;
          for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
      });
    }
    outs.push_back(std::move(out));
  }
  return outs;
}

template <typename T>
Tensor<T> upsample_bilinear2x(Tape<T>* tape, const Tensor<T>& x) {
  require_nchw(x, "upsample_bilinear2x");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
  kernels::upsample2x_forward(N * C, H, W, x.data(), out.data());
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on, N, C, H, W] {
      kernels::upsample2x_backward(N * C, H, W, on->grad.data(), xn->ensure_grad().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::span<T> running_mean, std::span<T> running_var, Mode mode,
                     const BatchNormOptions& opt) {
  require_nchw(x, "batch_norm");
  const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.size() != C || running_var.size() != C)
    throw ShapeError("batch_norm: per-channel parameters must have " + std::to_string(C) + " entries");
  const std::size_t m = N * hw;
  if (mode == Mode::train && m < 2)
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel, got " + std::to_string(m));

  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::train) {
    std::vector<double> sums(C + 1, 0.0);
#pragma omp parallel for schedule(static)
    for (long c = 0; c < static_cast<long>(C); ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + static_cast<std::size_t>(c)) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      sums[static_cast<std::size_t>(c)] = s;
    }
    sums[C] = static_cast<double>(m);
    if (opt.reducer && *opt.reducer) (*opt.reducer)(sums);
    const double count = sums[C];
    std::vector<double> sq(C + 1, 0.0);
#pragma omp parallel for schedule(static)
    for (long c = 0; c < static_cast<long>(C); ++c) {
      const double mu = sums[static_cast<std::size_t>(c)] / count;
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + static_cast<std::size_t>(c)) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          s += d * d;
        }
      }
      sq[static_cast<std::size_t>(c)] = s;
    }
    sq[C] = 0.0;
    if (opt.reducer && *opt.reducer) (*opt.reducer)(sq);
    for (std::size_t c = 0; c < C; ++c) {
      const double mu = sums[c] / count;
      const double var = sq[c] / count;
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      if (opt.update_running_stats) {
        running_mean[c] = static_cast<T>(opt.momentum * running_mean[c] + (1.0 - opt.momentum) * mu);
        running_var[c] = static_cast<T>(opt.momentum * running_var[c] + (1.0 - opt.momentum) * var);
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.eps));
    }
  }

  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
#pragma omp parallel for schedule(static)
  for (long nc = 0; nc < static_cast<long>(N * C); ++nc) {
    const std::size_t c = static_cast<std::size_t>(nc) % C;
    const T* p = x.data() + static_cast<std::size_t>(nc) * hw;
    T* h = xhat.data() + static_cast<std::size_t>(nc) * hw;
    T* o = out.data() + static_cast<std::size_t>(nc) * hw;
    const T g = gamma.data()[c], b = beta.data()[c];
    for (std::size_t i = 0; i < hw; ++i) {
      h[i] = (p[i] - mean[c]) * inv_std[c];
      o[i] = g * h[i] + b;
    }
  }

  if (wants_grad(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), hn = xhat.node();
    const bool train = mode == Mode::train;
    tape->record({xn, gn, bn}, on, [xn, gn, bn, on, hn, inv_std, N, C, hw, m, train] {
      const T* dy = on->grad.data();
      const T* h = hn->data.data();
      std::vector<double> sum_dy(C, 0.0), sum_dy_h(C, 0.0);
#pragma omp parallel for schedule(static)
      for (long cc = 0; cc < static_cast<long>(C); ++cc) {
        const std::size_t c = static_cast<std::size_t>(cc);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t off = (n * C + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            s1 += dy[off + i];
            s2 += static_cast<double>(dy[off + i]) * h[off + i];
          }
        }
        sum_dy[c] = s1;
        sum_dy_h[c] = s2;
      }
      if (gn->requires_grad) {
        auto dg = gn->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) dg[c] += static_cast<T>(sum_dy_h[c]);
      }
      if (bn->requires_grad) {
        auto db = bn->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) db[c] += static_cast<T>(sum_dy[c]);
      }
      if (xn->requires_grad) {
        auto dx = xn->ensure_grad();
        const double inv_m = 1.0 / static_cast<double>(m);
#pragma omp parallel for schedule(static)
        for (long nc = 0; nc < static_cast<long>(N * C); ++nc) {
          const std::size_t c = static_cast<std::size_t>(nc) % C;
          const std::size_t off = static_cast<std::size_t>(nc) * hw;
          const double g = gn->data[c];
          const double is = inv_std[c];
          if (train) {
            const double mdy = sum_dy[c] * inv_m, mdyh = sum_dy_h[c] * inv_m;
            for (std::size_t i = 0; i < hw; ++i)
              dx[off + i] += static_cast<T>(g * is * (dy[off + i] - mdy - h[off + i] * mdyh));
          } else {
            for (std::size_t i = 0; i < hw; ++i) dx[off + i] += static_cast<T>(g * is * dy[off + i]);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      auto d = xn->ensure_grad();
      const T g = on->grad[0];
      for (auto& v : d) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> dot_constant(Tape<T>* tape, const Tensor<T>& x, std::vector<T> weights) {
  if (weights.size() != x.numel()) throw ShapeError("dot_constant: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(weights[i]) * x.data()[i];
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  if (wants_grad(tape, {&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on, w = std::move(weights)] {
      auto d = xn->ensure_grad();
      const T g = on->grad[0];
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * w[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> shake_combine(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                        std::array<double, 2> fwd, std::array<double, 2> bwd) {
  require_same_shape(a, b, "shake_combine");
  require_same_shape(a, c, "shake_combine");
  Tensor<T> out(a.shape());
  const T f0 = static_cast<T>(fwd[0]), f1 = static_cast<T>(fwd[1]);
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + f0 * b.data()[i] + f1 * c.data()[i];
  if (wants_grad(tape, {&a, &b, &c})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), cn = c.node(), on = out.node();
    const T b0 = static_cast<T>(bwd[0]), b1 = static_cast<T>(bwd[1]);
    tape->record({an, bn, cn}, on, [an, bn, cn, on, b0, b1] {
      const std::array<std::pair<TensorNode<T>*, T>, 3> routes{{{an.get(), T(1)}, {bn.get(), b0}, {cn.get(), b1}}};
      for (const auto& [node, k] : routes) {
        if (!node->requires_grad) continue;
        auto d = node->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += k * on->grad[i];
      }
    });
  }
  return out;
}

#define YF_OPS(T)                                                                                        \
  template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                               std::size_t);                                                             \
  template Tensor<T> mish<T>(Tape<T>*, const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(Tape<T>*, const Tensor<T>&);                                             \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, T);                                            \
  template Tensor<T> mul_constant<T>(Tape<T>*, const Tensor<T>&, std::vector<T>);                        \
  template Tensor<T> concat_channels<T>(Tape<T>*, const std::vector<Tensor<T>>&);                        \
  template std::vector<Tensor<T>> split_channels<T>(Tape<T>*, const Tensor<T>&, std::size_t);            \
  template Tensor<T> upsample_bilinear2x<T>(Tape<T>*, const Tensor<T>&);                                 \
  template Tensor<T> batch_norm<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                   std::span<T>, std::span<T>, Mode, const BatchNormOptions&);           \
  template Tensor<T> sum<T>(Tape<T>*, const Tensor<T>&);                                                 \
  template Tensor<T> dot_constant<T>(Tape<T>*, const Tensor<T>&, std::vector<T>);                        \
  template Tensor<T> shake_combine<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      std::array<double, 2>, std::array<double, 2>);

YF_OPS(float)
YF_OPS(double)
#undef YF_OPS

}  // namespace ops

template void require_finite<float>(const Tensor<float>&, const char*);
template void require_finite<double>(const Tensor<double>&, const char*);

}  // namespace yf

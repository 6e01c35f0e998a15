#include "yolo_former/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace yf::kernels {

namespace {

std::size_t out_extent(const char* dim, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (padded < k)
    throw ShapeError(std::string("conv2d: padded ") + dim + " extent " + std::to_string(padded) +
                     " is smaller than kernel " + std::to_string(k));
  const std::size_t rem = (padded - k) % stride;
  if (rem > pad)
    throw ShapeError(std::string("conv2d: ") + dim + " extent " + std::to_string(in) + " with pad " +
                     std::to_string(pad) + ", kernel " + std::to_string(k) + ", stride " +
                     std::to_string(stride) + " leaves " + std::to_string(rem - pad) +
                     " input row(s) uncovered");
  return (padded - k) / stride + 1;
}

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(input));
  if (weight.size() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(weight));
  if (weight[1] != input[1])
    throw ShapeError("conv2d: input channels " + std::to_string(input[1]) + " != weight channels " +
                     std::to_string(weight[1]));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  for (std::size_t k : {weight[2], weight[3]})
    if (k != 1 && k != 3) throw ShapeError("conv2d: kernel extents must be 1 or 3, got " + shape_str(weight));
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.pad = pad;
  g.out_h = out_extent("height", g.height, g.kernel_h, stride, pad);
  g.out_w = out_extent("width", g.width, g.kernel_w, stride, pad);
  return g;
}

namespace {

// Register-blocked update of an MR x (2 * lanes) tile of C over kb steps of k.
#if defined(__AVX512F__)
inline constexpr std::size_t kVecBytes = 64;
#else
inline constexpr std::size_t kVecBytes = 32;
#endif

template <typename T, std::size_t MR>
inline void micro_kernel(std::size_t kb, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  typedef T vec __attribute__((vector_size(kVecBytes)));
  constexpr std::size_t L = sizeof(vec) / sizeof(T);
  vec acc[MR][2];
  for (std::size_t r = 0; r < MR; ++r) {
    std::memcpy(&acc[r][0], C + r * N, sizeof(vec));
    std::memcpy(&acc[r][1], C + r * N + L, sizeof(vec));
  }
  for (std::size_t k = 0; k < kb; ++k) {
    vec b0, b1;
    std::memcpy(&b0, B + k * N, sizeof(vec));
    std::memcpy(&b1, B + k * N + L, sizeof(vec));
    for (std::size_t r = 0; r < MR; ++r) {
      const T a = A[r * K + k];
      acc[r][0] += a * b0;
      acc[r][1] += a * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    std::memcpy(C + r * N, &acc[r][0], sizeof(vec));
    std::memcpy(C + r * N + L, &acc[r][1], sizeof(vec));
  }
}

template <typename T>
inline void micro_dispatch(std::size_t rows, std::size_t kb, std::size_t K, std::size_t N, const T* A, const T* B,
                           T* C) {
  switch (rows) {
    case 6: micro_kernel<T, 6>(kb, K, N, A, B, C); break;
    case 5: micro_kernel<T, 5>(kb, K, N, A, B, C); break;
    case 4: micro_kernel<T, 4>(kb, K, N, A, B, C); break;
    case 3: micro_kernel<T, 3>(kb, K, N, A, B, C); break;
    case 2: micro_kernel<T, 2>(kb, K, N, A, B, C); break;
    default: micro_kernel<T, 1>(kb, K, N, A, B, C); break;
  }
}

}  // namespace

template <typename T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T(0));
  if (M == 0 || N == 0 || K == 0) return;
  constexpr std::size_t MR = 6;
  constexpr std::size_t NR = 2 * kVecBytes / sizeof(T);
  constexpr std::size_t NB = 512;
  constexpr std::size_t KB = 256;
  const long nblocks = static_cast<long>((N + NB - 1) / NB);

#pragma omp parallel for schedule(static)
  for (long jb = 0; jb < nblocks; ++jb) {
    const std::size_t j0 = static_cast<std::size_t>(jb) * NB;
    const std::size_t j1 = std::min(N, j0 + NB);
    const std::size_t jv = j0 + (j1 - j0) / NR * NR;
    for (std::size_t k0 = 0; k0 < K; k0 += KB) {
      const std::size_t kb = std::min(K, k0 + KB) - k0;
      for (std::size_t i = 0; i < M; i += MR) {
        const std::size_t rows = std::min(MR, M - i);
        for (std::size_t j = j0; j < jv; j += NR)
          micro_dispatch<T>(rows, kb, K, N, A + i * K + k0, B + k0 * N + j, C + i * N + j);
        for (std::size_t r = i; r < i + rows && jv < j1; ++r) {
          T* c = C + r * N;
          for (std::size_t k = 0; k < kb; ++k) {
            const T a = A[r * K + k0 + k];
            const T* b = B + (k0 + k) * N;
            for (std::size_t jj = jv; jj < j1; ++jj) c[jj] += a * b[jj];
          }
        }
      }
    }
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t B = 32;
  const long rb = static_cast<long>((rows + B - 1) / B);
#pragma omp parallel for schedule(static)
  for (long bi = 0; bi < rb; ++bi) {
    const std::size_t r0 = static_cast<std::size_t>(bi) * B;
    const std::size_t r1 = std::min(rows, r0 + B);
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* input, T* col) {
  const std::size_t P = g.columns();
  const std::size_t ohw = g.out_h * g.out_w;
  const long rows = static_cast<long>(g.patch());
#pragma omp parallel for schedule(static)
  for (long row = 0; row < rows; ++row) {
    const std::size_t r = static_cast<std::size_t>(row);
    const std::size_t kj = r % g.kernel_w;
    const std::size_t ki = (r / g.kernel_w) % g.kernel_h;
    const std::size_t c = r / (g.kernel_w * g.kernel_h);
    T* dst = col + r * P;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* plane = input + (n * g.in_channels + c) * g.height * g.width;
      T* d = dst + n * ohw;
      for (std::size_t y = 0; y < g.out_h; ++y) {
        const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.pad);
        T* drow = d + y * g.out_w;
        if (iy < 0 || iy >= static_cast<long>(g.height)) {
          std::fill(drow, drow + g.out_w, T(0));
          continue;
        }
        const T* srow = plane + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t x = 0; x < g.out_w; ++x) {
          const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.pad);
          drow[x] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0) : srow[ix];
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* input_grad) {
  const std::size_t P = g.columns();
  const std::size_t ohw = g.out_h * g.out_w;
  const long planes = static_cast<long>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / g.in_channels;
    const std::size_t c = static_cast<std::size_t>(pl) % g.in_channels;
    T* plane = input_grad + static_cast<std::size_t>(pl) * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* src = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * P + n * ohw;
        for (std::size_t y = 0; y < g.out_h; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * g.width;
          const T* srow = src + y * g.out_w;
          for (std::size_t x = 0; x < g.out_w; ++x) {
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) drow[ix] += srow[x];
          }
        }
      }
    }
  }
}

void flush_denormals() {
#if defined(__SSE__)
  const auto set = [] { _mm_setcsr(_mm_getcsr() | 0x8040); };
  set();
#pragma omp parallel
  set();
#endif
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  const std::size_t K = g.patch();
  const std::size_t P = g.columns();
  const std::size_t ohw = g.out_h * g.out_w;
  std::vector<T> col(K * P);
  im2col(g, input, col.data());
  std::vector<T> tmp(g.out_channels * P);
  gemm(g.out_channels, P, K, weight, col.data(), tmp.data(), false);
  const long planes = static_cast<long>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / g.out_channels;
    const std::size_t o = static_cast<std::size_t>(pl) % g.out_channels;
    const T b = bias ? bias[o] : T(0);
    const T* src = tmp.data() + o * P + n * ohw;
    T* dst = output + static_cast<std::size_t>(pl) * ohw;
    for (std::size_t p = 0; p < ohw; ++p) dst[p] = src[p] + b;
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight, const T* output_grad,
                     T* input_grad, T* weight_grad, T* bias_grad) {
  const std::size_t K = g.patch();
  const std::size_t P = g.columns();
  const std::size_t ohw = g.out_h * g.out_w;
  const std::size_t Cout = g.out_channels;

  // dy permuted to [Cout, N*oh*ow] to match the column layout.
  std::vector<T> dy(Cout * P);
  {
    const long planes = static_cast<long>(g.batch * Cout);
#pragma omp parallel for schedule(static)
    for (long pl = 0; pl < planes; ++pl) {
      const std::size_t n = static_cast<std::size_t>(pl) / Cout;
      const std::size_t o = static_cast<std::size_t>(pl) % Cout;
      std::copy_n(output_grad + static_cast<std::size_t>(pl) * ohw, ohw, dy.data() + o * P + n * ohw);
    }
  }

  if (bias_grad) {
#pragma omp parallel for schedule(static)
    for (long o = 0; o < static_cast<long>(Cout); ++o) {
      const T* row = dy.data() + static_cast<std::size_t>(o) * P;
      T s = T(0);
      for (std::size_t p = 0; p < P; ++p) s += row[p];
      bias_grad[o] += s;
    }
  }

  if (weight_grad) {
    std::vector<T> col(K * P);
    im2col(g, input, col.data());
    std::vector<T> colT(P * K);
    transpose(K, P, col.data(), colT.data());
    gemm(Cout, K, P, dy.data(), colT.data(), weight_grad, true);
  }

  if (input_grad) {
    std::vector<T> wT(K * Cout);
    transpose(Cout, K, weight, wT.data());
    std::vector<T> dcol(K * P);
    gemm(K, P, Cout, wT.data(), dy.data(), dcol.data(), false);
    col2im(g, dcol.data(), input_grad);
  }
}

namespace {

// Source index pair and weight for output coordinate `o` along an axis of
// input length `n` under half-pixel-center 2x upsampling.
template <typename T>
inline void upsample_taps(std::size_t o, std::size_t n, std::size_t& i0, std::size_t& i1, T& frac) {
  T src = (static_cast<T>(o) + T(0.5)) * T(0.5) - T(0.5);
  if (src < T(0)) src = T(0);
  i0 = static_cast<std::size_t>(src);
  if (i0 > n - 1) i0 = n - 1;
  i1 = std::min(i0 + 1, n - 1);
  frac = src - static_cast<T>(i0);
}

}  // namespace

template <typename T>
void upsample2x_forward(std::size_t planes, std::size_t h, std::size_t w, const T* input, T* output) {
  const std::size_t oh = 2 * h, ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < static_cast<long>(planes); ++pl) {
    const T* src = input + static_cast<std::size_t>(pl) * h * w;
    T* dst = output + static_cast<std::size_t>(pl) * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      std::size_t y0, y1;
      T fy;
      upsample_taps(y, h, y0, y1, fy);
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t x0, x1;
        T fx;
        upsample_taps(x, w, x0, x1, fx);
        const T top = src[y0 * w + x0] * (T(1) - fx) + src[y0 * w + x1] * fx;
        const T bot = src[y1 * w + x0] * (T(1) - fx) + src[y1 * w + x1] * fx;
        dst[y * ow + x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

template <typename T>
void upsample2x_backward(std::size_t planes, std::size_t h, std::size_t w, const T* output_grad,
                         T* input_grad) {
  const std::size_t oh = 2 * h, ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < static_cast<long>(planes); ++pl) {
    const T* g = output_grad + static_cast<std::size_t>(pl) * oh * ow;
    T* dst = input_grad + static_cast<std::size_t>(pl) * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      std::size_t y0, y1;
      T fy;
      upsample_taps(y, h, y0, y1, fy);
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t x0, x1;
        T fx;
        upsample_taps(x, w, x0, x1, fx);
        const T v = g[y * ow + x];
        dst[y0 * w + x0] += v * (T(1) - fy) * (T(1) - fx);
        dst[y0 * w + x1] += v * (T(1) - fy) * fx;
        dst[y1 * w + x0] += v * fy * (T(1) - fx);
        dst[y1 * w + x1] += v * fy * fx;
      }
    }
  }
}

template <typename T>
T softplus(T x) {
  if (x > T(20)) return x + std::log1p(std::exp(-x));
  if (x < T(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  T s;
  if (x >= T(0)) {
    s = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    s = e / (T(1) + e);
  }
  // Keep the open interval (0,1) even where the type would round to an endpoint.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::clamp(s, lo, hi);
}

template <typename T>
void mish_forward(std::size_t n, const T* x, T* y) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) y[i] = x[i] * std::tanh(softplus(x[i]));
}

template <typename T>
void mish_backward(std::size_t n, const T* x, const T* dy, T* dx) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const T v = x[i];
    const T t = std::tanh(softplus(v));
    // d/dx x*tanh(sp(x)) = tanh(sp) + x * (1 - tanh^2(sp)) * sigmoid(x)
    const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    dx[i] += dy[i] * (t + v * (T(1) - t * t) * s);
  }
}

#define YF_INSTANTIATE(T)                                                                            \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);        \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);                                \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                        \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                        \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);            \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*, T*);   \
  template void upsample2x_forward<T>(std::size_t, std::size_t, std::size_t, const T*, T*);          \
  template void upsample2x_backward<T>(std::size_t, std::size_t, std::size_t, const T*, T*);         \
  template void mish_forward<T>(std::size_t, const T*, T*);                                          \
  template void mish_backward<T>(std::size_t, const T*, const T*, T*);                               \
  template T softplus<T>(T);                                                                         \
  template T sigmoid<T>(T);

YF_INSTANTIATE(float)
YF_INSTANTIATE(double)
#undef YF_INSTANTIATE

}  // namespace yf::kernels

namespace yf::reference {

template <typename T>
void conv2d(const kernels::ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < g.out_h; ++y)
        for (std::size_t x = 0; x < g.out_w; ++x) {
          T acc = bias ? bias[o] : T(0);
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t i = 0; i < g.kernel_h; ++i)
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long iy = static_cast<long>(y * g.stride + i) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(x * g.stride + j) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) || ix >= static_cast<long>(g.width))
                  continue;
                acc += input[((n * g.in_channels + c) * g.height + iy) * g.width + ix] *
                       weight[((o * g.in_channels + c) * g.kernel_h + i) * g.kernel_w + j];
              }
          output[((n * g.out_channels + o) * g.out_h + y) * g.out_w + x] = acc;
        }
}

template <typename T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] = acc;
    }
}

template <typename T>
void upsample2x(std::size_t planes, std::size_t h, std::size_t w, const T* input, T* output) {
  // Each output pixel center sits at ((x + 0.5) / 2) in input pixel units;
  // weight each of the (clamped) neighbouring input centers by tent distance.
  const auto at = [&](std::size_t p, long y, long x) {
    y = std::clamp(y, 0L, static_cast<long>(h) - 1);
    x = std::clamp(x, 0L, static_cast<long>(w) - 1);
    return input[(p * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        double cy = (static_cast<double>(oy) + 0.5) / 2.0 - 0.5;
        double cx = (static_cast<double>(ox) + 0.5) / 2.0 - 0.5;
        cy = std::clamp(cy, 0.0, static_cast<double>(h - 1));
        cx = std::clamp(cx, 0.0, static_cast<double>(w - 1));
        const long by = static_cast<long>(std::floor(cy));
        const long bx = static_cast<long>(std::floor(cx));
        double acc = 0.0;
        for (long dy = 0; dy <= 1; ++dy)
          for (long dx = 0; dx <= 1; ++dx) {
            const double wy = 1.0 - std::abs(cy - static_cast<double>(by + dy));
            const double wx = 1.0 - std::abs(cx - static_cast<double>(bx + dx));
            if (wy <= 0.0 || wx <= 0.0) continue;
            acc += wy * wx * static_cast<double>(at(p, by + dy, bx + dx));
          }
        output[(p * 2 * h + oy) * 2 * w + ox] = static_cast<T>(acc);
      }
}

template <typename T>
void mish(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<T>(v * std::tanh(std::log1p(std::exp(v))));
  }
}

template void conv2d<float>(const kernels::ConvGeometry&, const float*, const float*, const float*, float*);
template void conv2d<double>(const kernels::ConvGeometry&, const double*, const double*, const double*, double*);
template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void upsample2x<float>(std::size_t, std::size_t, std::size_t, const float*, float*);
template void upsample2x<double>(std::size_t, std::size_t, std::size_t, const double*, double*);
template void mish<float>(std::size_t, const float*, float*);
template void mish<double>(std::size_t, const double*, double*);

}  // namespace yf::reference

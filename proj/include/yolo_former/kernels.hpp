#pragma once

// Data-parallel kernels behind the differentiable ops. Every kernel assigns
// each output element to exactly one thread and reduces in a fixed order, so
// results are bit-identical for any OMP_NUM_THREADS.

#include <cstddef>

#include "yolo_former/tensor.hpp"

namespace yf::kernels {

struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, pad = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t columns() const { return batch * out_h * out_w; }
};

/// Validates input/weight shapes and computes the output extent
/// floor((H + 2*pad - k) / stride) + 1. The rows dropped by the floor must be
/// padding only; a stride that would skip real input pixels is rejected.
ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad);

/// Sets flush-to-zero and denormals-are-zero on the calling thread and on every
/// OpenMP worker. Untrained batch-norm statistics push activations into the
/// subnormal range, where x86 arithmetic is an order of magnitude slower.
void flush_denormals();

/// C[M,N] (+)= A[M,K] * B[K,N], all row-major and dense.
template <typename T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

/// col[(c*kh + i)*kw + j][n*oh*ow + y*ow + x]
template <typename T>
void im2col(const ConvGeometry& g, const T* input, T* col);

/// Scatter-adds columns back into an NCHW gradient buffer.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* input_grad);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);

/// Accumulates into whichever of input_grad / weight_grad / bias_grad is non-null.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* input, const T* weight, const T* output_grad,
                     T* input_grad, T* weight_grad, T* bias_grad);

/// Bilinear 2x upsampling with half-pixel centers (align_corners = false).
template <typename T>
void upsample2x_forward(std::size_t planes, std::size_t h, std::size_t w, const T* input, T* output);
template <typename T>
void upsample2x_backward(std::size_t planes, std::size_t h, std::size_t w, const T* output_grad,
                         T* input_grad);

template <typename T>
void mish_forward(std::size_t n, const T* x, T* y);
template <typename T>
void mish_backward(std::size_t n, const T* x, const T* dy, T* dx);

template <typename T>
T softplus(T x);
template <typename T>
T sigmoid(T x);

}  // namespace yf::kernels

// Straightforward serial loops kept as test oracles and benchmark baselines.
namespace yf::reference {

template <typename T>
void conv2d(const kernels::ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);

template <typename T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C);

template <typename T>
void upsample2x(std::size_t planes, std::size_t h, std::size_t w, const T* input, T* output);

template <typename T>
void mish(std::size_t n, const T* x, T* y);

}  // namespace yf::reference

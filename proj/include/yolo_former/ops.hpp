#pragma once

// Differentiable tensor operations. Each op takes the tape to record on; a
// null tape (or inputs that do not require gradients) runs forward only.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "yolo_former/tensor.hpp"

namespace yf {

enum class Mode { train, eval };

/// Combines per-channel partial sums across workers before batch statistics
/// are formed. Single-device training leaves it empty.
using StatsReducer = std::function<void(std::span<double>)>;

struct BatchNormOptions {
  double momentum = 0.99;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
  bool update_running_stats = true;
  const StatsReducer* reducer = nullptr;
};

namespace ops {

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> mish(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor);

/// x * mask with a constant (non-differentiable) mask of identical shape.
template <typename T>
Tensor<T> mul_constant(Tape<T>* tape, const Tensor<T>& x, std::vector<T> mask);

/// Concatenates NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs);

/// Splits an NCHW tensor into `parts` equal channel groups.
template <typename T>
std::vector<Tensor<T>> split_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t parts);

template <typename T>
Tensor<T> upsample_bilinear2x(Tape<T>* tape, const Tensor<T>& x);

/// Per-channel normalization of NCHW input. Train mode uses batch statistics
/// over N,H,W and updates running_mean/var; eval mode uses the running values.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::span<T> running_mean, std::span<T> running_var, Mode mode,
                     const BatchNormOptions& options = {});

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

/// sum_i weights[i] * x[i]; used to project outputs onto a scalar.
template <typename T>
Tensor<T> dot_constant(Tape<T>* tape, const Tensor<T>& x, std::vector<T> weights);

/// a + fwd[0]*b + fwd[1]*c in the forward pass; during backward the branch
/// gradients are scaled by bwd instead of fwd (shake-shake).
template <typename T>
Tensor<T> shake_combine(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c,
                        std::array<double, 2> fwd, std::array<double, 2> bwd);

}  // namespace ops

/// Throws NumericError if any element is NaN or infinite.
template <typename T>
void require_finite(const Tensor<T>& x, const char* what);

}  // namespace yf

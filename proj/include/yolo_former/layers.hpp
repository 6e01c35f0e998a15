#pragma once

#include <array>
#include <optional>
#include <string>

#include "yolo_former/ops.hpp"
#include "yolo_former/params.hpp"
#include "yolo_former/rng.hpp"

namespace yf {

/// Forward/backward multipliers for the two 1x1 shake-shake branches.
struct ShakeCoefficients {
  std::array<double, 2> forward{0.5, 0.5};
  std::array<double, 2> backward{0.5, 0.5};
  Mode mode = Mode::eval;
};

/// Everything a forward pass needs besides the input.
template <typename T>
struct Context {
  Tape<T>* tape = nullptr;
  Mode mode = Mode::eval;
  SeededRng* rng = nullptr;  // shake-shake and DropBlock draws (train mode)
  std::optional<ShakeCoefficients> shake_override;
  double dropblock_keep = 1.0;
  std::size_t dropblock_block = 3;
  BatchNormOptions bn;

  bool training() const { return mode == Mode::train; }
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, SeededRng& init, double init_std = -1.0);

  Tensor<T> operator()(Context<T>& ctx, const Tensor<T>& x) const;

  Param<T>& weight() const { return *weight_; }
  Param<T>& bias() const { return *bias_; }
  std::size_t kernel() const { return kernel_; }

 private:
  Param<T>* weight_ = nullptr;
  Param<T>* bias_ = nullptr;
  std::size_t kernel_ = 1, stride_ = 1;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels);

  Tensor<T> operator()(Context<T>& ctx, const Tensor<T>& x) const;

  Param<T>& gamma() const { return *gamma_; }
  Param<T>& beta() const { return *beta_; }
  Buffer<T>& running_mean() const { return *mean_; }
  Buffer<T>& running_var() const { return *var_; }

 private:
  Param<T>* gamma_ = nullptr;
  Param<T>* beta_ = nullptr;
  Buffer<T>* mean_ = nullptr;
  Buffer<T>* var_ = nullptr;
};

/// conv -> BN -> mish, the common unit of backbone, neck and head.
template <typename T>
class ConvBnMish {
 public:
  ConvBnMish() = default;
  ConvBnMish(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
             std::size_t stride, SeededRng& init);

  Tensor<T> operator()(Context<T>& ctx, const Tensor<T>& x) const;

  const Conv2d<T>& conv() const { return conv_; }
  const BatchNorm2d<T>& bn() const { return bn_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

}  // namespace yf

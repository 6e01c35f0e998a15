#include "yolo_former/layers.hpp"

#include <cmath>

namespace yf {

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride, SeededRng& init, double init_std)
    : kernel_(kernel), stride_(stride) {
  weight_ = &store.add_param(name + ".weight", Shape{out, in, kernel, kernel});
  bias_ = &store.add_param(name + ".bias", Shape{out});
  const double std_dev = init_std >= 0.0 ? init_std : std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  for (auto& w : weight_->value.values()) w = static_cast<T>(std_dev * init.normal());
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(Context<T>& ctx, const Tensor<T>& x) const {
  return ops::conv2d(ctx.tape, x, weight_->value, bias_->value, stride_, kernel_ / 2);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  gamma_ = &store.add_param(name + ".gamma", Shape{channels}, T(1));
  beta_ = &store.add_param(name + ".beta", Shape{channels}, T(0));
  mean_ = &store.add_buffer(name + ".running_mean", Shape{channels}, T(0));
  var_ = &store.add_buffer(name + ".running_var", Shape{channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(Context<T>& ctx, const Tensor<T>& x) const {
  return ops::batch_norm(ctx.tape, x, gamma_->value, beta_->value, std::span<T>(mean_->values),
                         std::span<T>(var_->values), ctx.mode, ctx.bn);
}

template <typename T>
ConvBnMish<T>::ConvBnMish(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                          std::size_t kernel, std::size_t stride, SeededRng& init)
    : conv_(store, name + ".conv", in, out, kernel, stride, init), bn_(store, name + ".bn", out) {}

template <typename T>
Tensor<T> ConvBnMish<T>::operator()(Context<T>& ctx, const Tensor<T>& x) const {
  return ops::mish(ctx.tape, bn_(ctx, conv_(ctx, x)));
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnMish<float>;
template class ConvBnMish<double>;

}  // namespace yf

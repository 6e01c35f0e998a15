#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "yolo_former/tensor.hpp"

namespace yf {

/// Trainable tensor plus its SGD momentum buffer.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  std::vector<T> momentum;
};

/// Non-trainable state such as batch-norm running statistics.
template <typename T>
struct Buffer {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

/// Owns every parameter and buffer of a model under unique names.
/// Storage is a deque, so references handed out stay valid as entries are added.
template <typename T>
class ParamStore {
 public:
  Param<T>& add_param(const std::string& name, Shape shape, T fill = T(0));
  Buffer<T>& add_buffer(const std::string& name, Shape shape, T fill = T(0));

  Param<T>* find_param(const std::string& name);
  Buffer<T>* find_buffer(const std::string& name);

  std::deque<Param<T>>& params() { return params_; }
  const std::deque<Param<T>>& params() const { return params_; }
  std::deque<Buffer<T>>& buffers() { return buffers_; }
  const std::deque<Buffer<T>>& buffers() const { return buffers_; }

  std::vector<Param<T>*> param_list();
  std::size_t parameter_count() const;

  /// Gives every parameter an all-zero gradient buffer.
  void zero_grad();

  /// Copies values, momentum and buffers from a store with identical names and shapes.
  template <typename U>
  void copy_from(const ParamStore<U>& other);

 private:
  void claim(const std::string& name);
  std::deque<Param<T>> params_;
  std::deque<Buffer<T>> buffers_;
  std::vector<std::string> names_;
};

/// buf <- momentum*buf + grad + weight_decay*value; value <- value - lr*buf; grad cleared.
/// Throws if a parameter has no gradient buffer.
template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, double lr, double momentum, double weight_decay);

// Binary checkpoint: "YFCK", u32 version, u32 count, then per tensor a
// length-prefixed UTF-8 name, u32 rank, u32 extents and float32 values, all
// little-endian. Momentum buffers are stored as "<param>.momentum".
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore<float>& store);
void deserialize_checkpoint(ParamStore<float>& store, const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const ParamStore<float>& store, const std::filesystem::path& path);
void load_checkpoint(ParamStore<float>& store, const std::filesystem::path& path);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace yf

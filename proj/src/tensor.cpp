#include "yolo_former/tensor.hpp"

#include <sstream>

namespace yf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<TensorNode<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(node_->shape, node_->data);
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("reshape: " + shape_str(node_->shape) + " -> " + shape_str(shape));
  return Tensor(std::move(shape), node_->data);
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
long Tape<T>::producer_of(const TensorNode<T>* node) const {
  for (std::size_t i = entries_.size(); i-- > 0;)
    if (entries_[i].output.get() == node) return static_cast<long>(i);
  return -1;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  const long start = producer_of(loss.node().get());
  if (start < 0) throw std::invalid_argument("backward: loss tensor was not produced on this tape");
  auto g = loss.node()->ensure_grad();
  g[0] += T(1);
  for (long i = start; i >= 0; --i) {
    auto& e = entries_[static_cast<std::size_t>(i)];
    if (e.output->grad.empty()) continue;  // not reachable from the loss
    e.backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace yf

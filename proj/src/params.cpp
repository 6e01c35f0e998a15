#include "yolo_former/params.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

namespace yf {

template <typename T>
void ParamStore<T>::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end())
    throw std::invalid_argument("duplicate parameter/buffer name: " + name);
  names_.push_back(name);
}

template <typename T>
Param<T>& ParamStore<T>::add_param(const std::string& name, Shape shape, T fill) {
  claim(name);
  Tensor<T> value(std::move(shape), fill);
  value.set_requires_grad(true);
  std::vector<T> momentum(value.numel(), T(0));
  params_.push_back(Param<T>{name, std::move(value), std::move(momentum)});
  return params_.back();
}

template <typename T>
Buffer<T>& ParamStore<T>::add_buffer(const std::string& name, Shape shape, T fill) {
  claim(name);
  const auto n = shape_numel(shape);
  buffers_.push_back(Buffer<T>{name, std::move(shape), std::vector<T>(n, fill)});
  return buffers_.back();
}

template <typename T>
Param<T>* ParamStore<T>::find_param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
Buffer<T>* ParamStore<T>::find_buffer(const std::string& name) {
  for (auto& b : buffers_)
    if (b.name == name) return &b;
  return nullptr;
}

template <typename T>
std::vector<Param<T>*> ParamStore<T>::param_list() {
  std::vector<Param<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
template <typename U>
void ParamStore<T>::copy_from(const ParamStore<U>& other) {
  if (other.params().size() != params_.size() || other.buffers().size() != buffers_.size())
    throw std::invalid_argument("copy_from: stores have different layouts");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params()[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape())
      throw std::invalid_argument("copy_from: parameter mismatch at " + dst.name);
    std::transform(src.value.values().begin(), src.value.values().end(), dst.value.values().begin(),
                   [](U v) { return static_cast<T>(v); });
    std::transform(src.momentum.begin(), src.momentum.end(), dst.momentum.begin(),
                   [](U v) { return static_cast<T>(v); });
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    const auto& src = other.buffers()[i];
    auto& dst = buffers_[i];
    if (src.name != dst.name || src.shape != dst.shape)
      throw std::invalid_argument("copy_from: buffer mismatch at " + dst.name);
    std::transform(src.values.begin(), src.values.end(), dst.values.begin(),
                   [](U v) { return static_cast<T>(v); });
  }
}

template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, double lr, double momentum, double weight_decay) {
  for (auto* p : params) {
    if (!p->value.has_grad()) throw std::logic_error("sgd_step: parameter " + p->name + " has no gradient");
    auto v = p->value.values();
    auto g = p->value.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double buf = momentum * p->momentum[i] + g[i] + weight_decay * v[i];
      p->momentum[i] = static_cast<T>(buf);
      v[i] = static_cast<T>(v[i] - lr * p->momentum[i]);
    }
    p->value.clear_grad();
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void ParamStore<double>::copy_from<float>(const ParamStore<float>&);
template void ParamStore<float>::copy_from<double>(const ParamStore<double>&);
template void ParamStore<float>::copy_from<float>(const ParamStore<float>&);
template void sgd_step<float>(const std::vector<Param<float>*>&, double, double, double);
template void sgd_step<double>(const std::vector<Param<double>*>&, double, double, double);

namespace {

static_assert(std::numeric_limits<float>::is_iec559);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Shape& shape,
                std::span<const float> values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) put_u32(out, static_cast<std::uint32_t>(e));
  for (float v : values) put_f32(out, v);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<long>(pos_), b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw std::runtime_error("checkpoint: truncated data");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore<float>& store) {
  std::vector<std::uint8_t> out{'Y', 'F', 'C', 'K'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(2 * store.params().size() + store.buffers().size()));
  for (const auto& p : store.params()) {
    put_tensor(out, p.name, p.value.shape(), p.value.values());
    put_tensor(out, p.name + ".momentum", p.value.shape(), p.momentum);
  }
  for (const auto& b : store.buffers()) put_tensor(out, b.name, b.shape, b.values);
  return out;
}

void deserialize_checkpoint(ParamStore<float>& store, const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != "YFCK") throw std::runtime_error("checkpoint: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  struct Entry {
    Shape shape;
    std::vector<float> values;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.str(r.u32());
    Entry e;
    const std::uint32_t rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.u32());
    e.values.resize(shape_numel(e.shape));
    for (auto& v : e.values) v = r.f32();
    if (!entries.emplace(name, std::move(e)).second) throw std::runtime_error("checkpoint: duplicate tensor " + name);
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");

  auto take = [&](const std::string& name, const Shape& shape) -> std::vector<float> {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (it->second.shape != shape)
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + shape_str(it->second.shape) +
                               ", model expects " + shape_str(shape));
    auto values = std::move(it->second.values);
    entries.erase(it);
    return values;
  };
  for (auto& p : store.params()) {
    auto v = take(p.name, p.value.shape());
    std::copy(v.begin(), v.end(), p.value.values().begin());
    p.momentum = take(p.name + ".momentum", p.value.shape());
  }
  for (auto& b : store.buffers()) b.values = take(b.name, b.shape);
  if (!entries.empty()) throw std::runtime_error("checkpoint: unexpected tensor " + entries.begin()->first);
}

void save_checkpoint(const ParamStore<float>& store, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(store);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void load_checkpoint(ParamStore<float>& store, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  deserialize_checkpoint(store, bytes);
}

}  // namespace yf

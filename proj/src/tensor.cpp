#include "mixnet/tensor.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "mixnet/error.hpp"

namespace mixnet {

namespace {

std::size_t checked_product(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw ShapeError("shape must have at least one extent");
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("shape extent must be >= 1");
    if (__builtin_mul_overflow(n, d, &n)) throw ShapeError("shape element count overflows");
  }
  return n;
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), numel_(checked_product(dims_)) {}

std::size_t Shape::flatten(std::span<const std::size_t> index) const {
  if (index.size() != dims_.size()) throw ShapeError("index rank mismatch");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (index[i] >= dims_[i]) throw ShapeError("index out of range");
    offset = offset * dims_[i] + index[i];
  }
  return offset;
}

std::vector<std::size_t> Shape::unflatten(std::size_t offset) const {
  if (offset >= numel_) throw ShapeError("offset out of range");
  std::vector<std::size_t> index(dims_.size());
  for (std::size_t i = dims_.size(); i-- > 0;) {
    index[i] = offset % dims_[i];
    offset /= dims_[i];
  }
  return index;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ')';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) throw ShapeError("reshape " + shape_.str() + " -> " + shape.str());
  return BasicTensor<T>(std::move(shape), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw ParameterError("he_init: fan_in must be >= 1");
  Tensor t(shape);
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = static_cast<float>(dist(engine));
  return t;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T{0} ? a[i] : T{0};
  return out;
}

template <typename T>
bool all_finite(const BasicTensor<T>& a) {
  for (T v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

#define MIXNET_INSTANTIATE(T)                                                  \
  template class BasicTensor<T>;                                               \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                     \
  template BasicTensor<T> relu(const BasicTensor<T>&);                         \
  template bool all_finite(const BasicTensor<T>&);

MIXNET_INSTANTIATE(float)
MIXNET_INSTANTIATE(double)
#undef MIXNET_INSTANTIATE

}  // namespace mixnet

#include "csunet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace csunet {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(static_cast<std::size_t>(csunet::numel(shape_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (static_cast<std::int64_t>(data_.size()) != csunet::numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

template <typename T>
std::int64_t Tensor<T>::size(std::int64_t axis) const {
  if (axis < 0) axis += dim();
  if (axis < 0 || axis >= dim()) throw ShapeError("axis out of range");
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
std::int64_t Tensor<T>::offset(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != dim()) throw ShapeError("index rank mismatch");
  std::int64_t off = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[a]) throw ShapeError("index out of range");
    off = off * shape_[a] + i;
    ++a;
  }
  return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::int64_t> index) {
  return data_[static_cast<std::size_t>(offset(index))];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  return data_[static_cast<std::size_t>(offset(index))];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (csunet::numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
VolumeDims volume_dims(const Tensor<T>& t, const char* what) {
  if (t.dim() != 5) {
    throw ShapeError(std::string(what) + ": expected (N,C,D,H,W) tensor, got " + to_string(t.shape()));
  }
  const auto& s = t.shape();
  return {s[0], s[1], s[2], s[3], s[4]};
}

template class Tensor<float>;
template class Tensor<double>;
template VolumeDims volume_dims(const Tensor<float>&, const char*);
template VolumeDims volume_dims(const Tensor<double>&, const char*);

}  // namespace csunet

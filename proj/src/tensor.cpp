#include "segnext/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace segnext {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

namespace {
void check_shape(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw Error("negative tensor dimension in " + s.str());
}
}  // namespace

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  check_shape(shape);
  data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(shape.numel()), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : shape_(shape) {
  check_shape(shape);
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw Error("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                shape.str());
  }
  data_ = std::make_shared<std::vector<T>>(std::move(values));
}

template <class T>
std::span<const T> BasicTensor<T>::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

template <class T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!data_) return {};
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
  return {data_->data(), data_->size()};
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshape(Shape shape) const {
  if (shape.numel() != numel()) {
    throw Error("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  BasicTensor out = *this;
  out.shape_ = shape;
  return out;
}

template <class T>
bool BasicTensor<T>::bitwise_equal(const BasicTensor& other) const {
  if (!(shape_ == other.shape_)) return false;
  if (numel() == 0) return true;
  return std::memcmp(ptr(), other.ptr(), sizeof(T) * static_cast<size_t>(numel())) == 0;
}

template <class T>
double max_rel_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double floor) {
  if (!(a.shape() == b.shape())) throw Error("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double diff = 0.0;
  double scale = floor;
  for (int64_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / scale;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template double max_rel_error(const BasicTensor<float>&, const BasicTensor<float>&, double);
template double max_rel_error(const BasicTensor<double>&, const BasicTensor<double>&, double);

}  // namespace segnext

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segnext {

/// Library-wide error type. Messages are single-line so the CLI can forward
/// them verbatim.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch, channel, height, width.
struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  constexpr int64_t numel() const { return n * c * h * w; }
  constexpr int64_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW tensor with shared, copy-on-write storage. Copies are cheap and
/// a value never observes mutation through another handle.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(Shape shape) { return BasicTensor(shape); }
  static BasicTensor full(Shape shape, T value) { return BasicTensor(shape, value); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_ == nullptr; }

  std::span<const T> data() const;
  /// Detaches from other handles before returning writable storage.
  std::span<T> mutable_data();

  const T* ptr() const { return data_ ? data_->data() : nullptr; }
  T* mutable_ptr() { return mutable_data().data(); }

  T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return (*data_)[static_cast<size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }
  T operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  /// Same storage, new shape; element count must match.
  BasicTensor reshape(Shape shape) const;

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(static_cast<size_t>(numel()));
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool bitwise_equal(const BasicTensor& other) const;

 private:
  Shape shape_{};
  std::shared_ptr<std::vector<T>> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

/// Largest relative deviation max|a-b| / max(max|b|, floor).
template <class T>
double max_rel_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double floor = 1e-12);

}  // namespace segnext

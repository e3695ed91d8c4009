#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "lesinr/errors.hpp"

namespace lesinr::numkit {

using Shape = std::vector<std::size_t>;

// Scalar width used by training and inference. Tests run the same code at
// f64 to compare against finite differences.
enum class Precision { f32, f64 };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array. A rank-0 tensor is a scalar. Rank-1 tensors act as
// a single row wherever a matrix is expected.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), T{0});
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<T> v) {
    auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor vector(std::initializer_list<T> v) { return vector(std::vector<T>(v)); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }
  static Tensor filled(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

  // Matrix view: rank-2 as is, rank-1 as one row, rank-0 as 1x1.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  std::span<const T> row(std::size_t r) const { return data().subspan(r * cols(), cols()); }
  std::span<T> row(std::size_t r) { return data().subspan(r * cols(), cols()); }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("zero extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

// Bitwise comparison, distinguishing -0.0 from 0.0 and treating identical NaN
// payloads as equal.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
extern template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace lesinr::numkit

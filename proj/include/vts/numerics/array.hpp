#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vts {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major array of doubles. Rank 0..2 is what the model uses;
/// higher ranks are storable but the ops only operate on rank <= 2.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array zeros(std::size_t rows, std::size_t cols) { return Array({rows, cols}); }
  static Array matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Array row(std::initializer_list<double> values);
  static Array scalar(double v) { return Array({1, 1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  /// Rows/cols view: rank-1 arrays are treated as a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable tensor: value plus an accumulated gradient of the same shape.
struct ParamTensor {
  std::string name;
  Array value;
  Array grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Array v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

}  // namespace vts

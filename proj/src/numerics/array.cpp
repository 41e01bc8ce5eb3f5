#include "vts/numerics/array.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "vts/error.hpp"

namespace vts {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("array shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
  }
}

Array Array::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Array({r, c}, std::move(data));
}

Array Array::row(std::initializer_list<double> values) {
  return Array({1, values.size()}, std::vector<double>(values));
}

std::size_t Array::rows() const noexcept {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return shape_[0];
}

std::size_t Array::cols() const noexcept {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace vts

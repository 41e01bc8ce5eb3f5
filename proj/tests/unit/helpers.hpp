#pragma once

#include <cmath>
#include <vector>

#include "vts/numerics/array.hpp"
#include "vts/numerics/rng.hpp"

namespace vts::test {

inline Array random_array(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Array a({r, c});
  for (auto& v : a.vec()) v = rng.normal() * scale;
  return a;
}

inline double max_abs_diff(const Array& a, const Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace vts::test

#include "vts/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "vts/error.hpp"

namespace vts {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Shape dims2(std::size_t r, std::size_t c) { return {r, c}; }

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

bool wants(Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

// C (+)= A·B with A [n×k], B [k×m].
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A·Bᵀ with A [n×k], B [m×k].
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * m + j] += s;
    }
  }
}

// C (+)= Aᵀ·B with A [k×n], B [k×m].
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * n;
    const double* brow = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

struct Broadcast {
  std::size_t r, c, ra, ca, rb, cb;
  std::size_t ia(std::size_t i, std::size_t j) const { return (ra == 1 ? 0 : i) * ca + (ca == 1 ? 0 : j); }
  std::size_t ib(std::size_t i, std::size_t j) const { return (rb == 1 ? 0 : i) * cb + (cb == 1 ? 0 : j); }
};

Broadcast broadcast(const Var& a, const Var& b, const char* op) {
  Broadcast bc{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  auto fit = [&](std::size_t x, std::size_t y, std::size_t& out) {
    if (x == y || y == 1) {
      out = x;
    } else if (x == 1) {
      out = y;
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                           shape_str(b.shape()));
    }
  };
  fit(bc.ra, bc.rb, bc.r);
  fit(bc.ca, bc.cb, bc.c);
  return bc;
}

template <typename F, typename DA, typename DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
  const Broadcast bc = broadcast(a, b, name);
  Array out(dims2(bc.r, bc.c));
  const Array& av = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < bc.r; ++i)
    for (std::size_t j = 0; j < bc.c; ++j) out[i * bc.c + j] = f(av[bc.ia(i, j)], bv[bc.ib(i, j)]);
  return make_result(std::move(out), {a, b}, [bc, da, db](Node& n) {
    const Array& av = parent(n, 0).value;
    const Array& bv = parent(n, 1).value;
    Array* ga = wants(n, 0) ? &parent(n, 0).grad_buffer() : nullptr;
    Array* gb = wants(n, 1) ? &parent(n, 1).grad_buffer() : nullptr;
    for (std::size_t i = 0; i < bc.r; ++i) {
      for (std::size_t j = 0; j < bc.c; ++j) {
        const double g = n.grad[i * bc.c + j];
        const std::size_t ia = bc.ia(i, j), ib = bc.ib(i, j);
        if (ga) (*ga)[ia] += g * da(av[ia], bv[ib]);
        if (gb) (*gb)[ib] += g * db(av[ia], bv[ib]);
      }
    }
  });
}

template <typename F, typename D>
Var unary(const Var& a, F f, D d) {
  Array out(dims2(a.rows(), a.cols()));
  const Array& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(std::move(out), {a}, [d](Node& n) {
    const Array& x = parent(n, 0).value;
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[i] * d(x[i], n.value[i]);
  });
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var mul_const(const Var& a, const Array& c) {
  if (c.size() != a.size()) {
    throw DimensionError("mul_const: " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  }
  Array out(dims2(a.rows(), a.cols()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  return make_result(std::move(out), {a}, [c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c[i];
  });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var gelu(const Var& a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var normal_cdf(const Var& a) {
  return unary(
      a, [](double x) { return 0.5 * std::erfc(-x * kInvSqrt2); },
      [](double x, double) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Var clamp_min(const Var& a, double floor) {
  return unary(
      a, [floor](double x) { return std::max(x, floor); },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var matmul(const Var& a, const Var& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  Array out(dims2(n, m));
  gemm_nn(a.value().data(), b.value().data(), out.data(), n, k, m);
  return make_result(std::move(out), {a, b}, [n, k, m](Node& node) {
    const Array& g = node.grad;
    if (wants(node, 0)) gemm_nt(g.data(), parent(node, 1).value.data(), parent(node, 0).grad_buffer().data(), n, m, k);
    if (wants(node, 1)) gemm_tn(parent(node, 0).value.data(), g.data(), parent(node, 1).grad_buffer().data(), k, n, m);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ");
  }
  Array out(dims2(n, m));
  gemm_nt(a.value().data(), b.value().data(), out.data(), n, k, m);
  return make_result(std::move(out), {a, b}, [n, k, m](Node& node) {
    const Array& g = node.grad;
    if (wants(node, 0)) gemm_nn(g.data(), parent(node, 1).value.data(), parent(node, 0).grad_buffer().data(), n, m, k);
    if (wants(node, 1)) gemm_tn(g.data(), parent(node, 0).value.data(), parent(node, 1).grad_buffer().data(), m, n, k);
  });
}

Var transpose(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Array out(dims2(c, r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  return make_result(std::move(out), {a}, [r, c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().vec()) s += x;
  return make_result(Array::scalar(s), {a}, [](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    const double gv = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw DimensionError("mean of empty array");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum_rows(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Array out(dims2(1, c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.value()[i * c + j];
  return make_result(std::move(out), {a}, [r, c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j];
  });
}

Var sum_cols(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Array out(dims2(r, 1));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a.value()[i * c + j];
  return make_result(std::move(out), {a}, [r, c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[i];
  });
}

Var logsumexp_cols(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Array out(dims2(r, 1));
  Array soft(dims2(r, c));
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = a.value().data() + i * c;
    double mx = -kInf;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[j]);
    if (mx == -kInf) {
      out[i] = -kInf;
      continue;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    out[i] = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) soft[i * c + j] = std::exp(x[j] - mx) / s;
  }
  return make_result(std::move(out), {a}, [r, c, soft = std::move(soft)](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[i] * soft[i * c + j];
  });
}

Var softmax(const Var& a, int axis) {
  const std::size_t r = a.rows(), c = a.cols();
  if (axis < 0) axis += 2;
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  // Lines run along `axis`: `count` lines of `len` entries with stride `step`.
  const std::size_t len = axis == 1 ? c : r;
  const std::size_t count = axis == 1 ? r : c;
  const std::size_t step = axis == 1 ? 1 : c;
  const std::size_t line_stride = axis == 1 ? c : 1;
  Array out(dims2(r, c));
  const Array& x = a.value();
  for (std::size_t l = 0; l < count; ++l) {
    const std::size_t base = l * line_stride;
    double mx = -kInf;
    for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, x[base + t * step]);
    if (mx == -kInf) continue;
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double e = std::exp(x[base + t * step] - mx);
      out[base + t * step] = e;
      s += e;
    }
    for (std::size_t t = 0; t < len; ++t) out[base + t * step] /= s;
  }
  return make_result(std::move(out), {a}, [len, count, step, line_stride](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t l = 0; l < count; ++l) {
      const std::size_t base = l * line_stride;
      double dot = 0.0;
      for (std::size_t t = 0; t < len; ++t) dot += n.grad[base + t * step] * n.value[base + t * step];
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = base + t * step;
        g[i] += n.value[i] * (n.grad[i] - dot);
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
  }
  Array out(dims2(r, c));
  Array xhat(dims2(r, c));
  std::vector<double> inv_std(r);
  const double* xv = x.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mu) * inv_std[i];
      xhat[i * c + j] = h;
      out[i * c + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  return make_result(std::move(out), {x, gain, bias},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                       const Array& gv = parent(n, 1).value;
                       if (wants(n, 1)) {
                         Array& gg = parent(n, 1).grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) gg[j] += n.grad[i * c + j] * xhat[i * c + j];
                       }
                       if (wants(n, 2)) {
                         Array& gb = parent(n, 2).grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) gb[j] += n.grad[i * c + j];
                       }
                       if (wants(n, 0)) {
                         Array& gx = parent(n, 0).grad_buffer();
                         const double inv_c = 1.0 / static_cast<double>(c);
                         for (std::size_t i = 0; i < r; ++i) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = n.grad[i * c + j] * gv[j];
                             m1 += dh;
                             m2 += dh * xhat[i * c + j];
                           }
                           m1 *= inv_c;
                           m2 *= inv_c;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = n.grad[i * c + j] * gv[j];
                             gx[i * c + j] += inv_std[i] * (dh - m1 - xhat[i * c + j] * m2);
                           }
                         }
                       }
                     });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    r += p.rows();
  }
  Array out(dims2(r, c));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().vec().begin(), p.value().vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return make_result(std::move(out), parts, [offsets](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      if (!wants(n, k)) continue;
      Array& g = parent(n, k).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[offsets[k] + i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    c += p.cols();
  }
  Array out(dims2(r, c));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * c + off + j] = p.value()[i * pc + j];
    off += pc;
  }
  return make_result(std::move(out), parts, [offsets, r, c](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      if (!wants(n, k)) continue;
      Array& g = parent(n, k).grad_buffer();
      const std::size_t pc = parent(n, k).value.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += n.grad[i * c + offsets[k] + j];
    }
  });
}

Var slice_rows(const Var& a, std::size_t r0, std::size_t r1) {
  const std::size_t c = a.cols();
  if (r0 > r1 || r1 > a.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " +
                         shape_str(a.shape()));
  }
  Array out(dims2(r1 - r0, c));
  std::copy(a.value().data() + r0 * c, a.value().data() + r1 * c, out.data());
  return make_result(std::move(out), {a}, [r0, c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[r0 * c + i] += n.grad[i];
  });
}

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  const std::size_t r = a.rows(), c = a.cols();
  if (c0 > c1 || c1 > c) {
    throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " +
                         shape_str(a.shape()));
  }
  const std::size_t w = c1 - c0;
  Array out(dims2(r, w));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.value()[i * c + c0 + j];
  return make_result(std::move(out), {a}, [r, c, c0, w](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + c0 + j] += n.grad[i * w + j];
  });
}

Var take_rows(const Var& a, const std::vector<std::size_t>& rows) {
  const std::size_t c = a.cols();
  Array out(dims2(rows.size(), c));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= a.rows()) throw DimensionError("take_rows: index out of range");
    std::copy(a.value().data() + rows[k] * c, a.value().data() + (rows[k] + 1) * c, out.data() + k * c);
  }
  return make_result(std::move(out), {a}, [rows, c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) g[rows[k] * c + j] += n.grad[k * c + j];
  });
}

Var scatter_rows(const Var& a, const std::vector<std::size_t>& rows, std::size_t total_rows) {
  const std::size_t c = a.cols();
  if (rows.size() != a.rows()) throw DimensionError("scatter_rows: index count does not match rows");
  Array out(dims2(total_rows, c));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= total_rows) throw DimensionError("scatter_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[rows[k] * c + j] += a.value()[k * c + j];
  }
  return make_result(std::move(out), {a}, [rows, c](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) g[k * c + j] += n.grad[rows[k] * c + j];
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " to [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "]");
  }
  Array out(dims2(rows, cols), a.value().vec());
  return make_result(std::move(out), {a}, [](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var gather(const Var& a, const std::vector<std::size_t>& idx) {
  Array out(dims2(1, idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= a.size()) throw DimensionError("gather: index out of range");
    out[k] = a.value()[idx[k]];
  }
  return make_result(std::move(out), {a}, [idx](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += n.grad[k];
  });
}

Var cosine_matrix(const Var& a, const Var& b) {
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  if (b.cols() != d) {
    throw DimensionError("cosine_matrix: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto normalize = [d](const Array& x, std::size_t rows, const char* side) {
    Array unit(dims2(rows, d));
    std::vector<double> norms(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
      norms[i] = std::sqrt(s);
      if (norms[i] == 0.0) {
        throw DataError(std::string("cosine similarity of a zero vector (") + side + " row " + std::to_string(i) + ")");
      }
      for (std::size_t j = 0; j < d; ++j) unit[i * d + j] = x[i * d + j] / norms[i];
    }
    return std::pair{std::move(unit), std::move(norms)};
  };
  auto [ua, na] = normalize(a.value(), n, "left");
  auto [ub, nb] = normalize(b.value(), m, "right");
  Array out(dims2(n, m));
  gemm_nt(ua.data(), ub.data(), out.data(), n, d, m);
  return make_result(std::move(out), {a, b},
                     [n, m, d, ua = std::move(ua), ub = std::move(ub), na = std::move(na),
                      nb = std::move(nb)](Node& node) {
                       // d/dx of x/|x| applied to an upstream vector u: (u − (u·x̂)x̂)/|x|.
                       auto project = [d](const Array& unit, const std::vector<double>& norms, Array& gu,
                                          Array& dst, std::size_t rows) {
                         for (std::size_t i = 0; i < rows; ++i) {
                           double dot = 0.0;
                           for (std::size_t j = 0; j < d; ++j) dot += gu[i * d + j] * unit[i * d + j];
                           for (std::size_t j = 0; j < d; ++j)
                             dst[i * d + j] += (gu[i * d + j] - dot * unit[i * d + j]) / norms[i];
                         }
                       };
                       if (wants(node, 0)) {
                         Array gu(dims2(n, d));
                         gemm_nn(node.grad.data(), ub.data(), gu.data(), n, m, d);
                         project(ua, na, gu, parent(node, 0).grad_buffer(), n);
                       }
                       if (wants(node, 1)) {
                         Array gu(dims2(m, d));
                         gemm_tn(node.grad.data(), ua.data(), gu.data(), m, n, d);
                         project(ub, nb, gu, parent(node, 1).grad_buffer(), m);
                       }
                     });
}

std::vector<std::vector<std::size_t>> topk_indices(const Array& a, std::size_t k) {
  const std::size_t r = a.rows(), c = a.cols();
  k = std::min(k, c);
  std::vector<std::vector<std::size_t>> result(r);
  std::vector<std::size_t> order(c);
  for (std::size_t i = 0; i < r; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = a.data() + i * c;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t x, std::size_t y) { return row[x] > row[y]; });
    result[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return result;
}

Var keep_topk_rows(const Var& a, std::size_t k) {
  const std::size_t r = a.rows(), c = a.cols();
  const auto top = topk_indices(a.value(), k);
  Array keep(dims2(r, c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j : top[i]) keep[i * c + j] = 1.0;
  Array out(dims2(r, c), -kInf);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (keep[i] != 0.0) out[i] = a.value()[i];
  return make_result(std::move(out), {a}, [keep = std::move(keep)](Node& n) {
    Array& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (keep[i] != 0.0) g[i] += n.grad[i];
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  Var y = matmul(x, w);
  if (b.defined()) {
    if (b.size() != w.cols()) {
      throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
    }
    y = add(y, b);
  }
  return y;
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0 || deterministic_mode()) return x;
  Array mask(dims2(x.rows(), x.cols()));
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
  return mul_const(x, mask);
}

}  // namespace vts

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "vts/numerics/autograd.hpp"
#include "vts/numerics/rng.hpp"

namespace vts {

// Elementwise binary ops broadcast 2-D operands whose dims are equal or 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
/// Elementwise product with a constant array of the same shape.
Var mul_const(const Var& a, const Array& c);

Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
/// GELU with the exact erf form.
Var gelu(const Var& a);
/// Standard normal CDF.
Var normal_cdf(const Var& a);
/// max(a, floor); gradient is zero where the floor is active.
Var clamp_min(const Var& a, double floor);
/// Clamp into [lo, hi]; gradient is zero outside.
Var clamp(const Var& a, double lo, double hi);

Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Column sums, [r×c] -> [1×c].
Var sum_rows(const Var& a);
/// Row sums, [r×c] -> [r×1].
Var sum_cols(const Var& a);
/// Stable log Σ exp over each row, [r×c] -> [r×1].
Var logsumexp_cols(const Var& a);

/// Softmax along `axis` (0 or 1, negative counts from the end). Entries at
/// −∞ map to exactly 0; a row that is entirely −∞ maps to all zeros.
Var softmax(const Var& a, int axis = -1);

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t r0, std::size_t r1);
Var slice_cols(const Var& a, std::size_t c0, std::size_t c1);
/// Rows picked by index (repeats allowed), [k×c].
Var take_rows(const Var& a, const std::vector<std::size_t>& rows);
/// Adjoint of take_rows: rows of `a` added into a zero [total_rows×c] array.
Var scatter_rows(const Var& a, const std::vector<std::size_t>& rows, std::size_t total_rows);
/// Flat-index gather into a [1×k] row.
Var gather(const Var& a, const std::vector<std::size_t>& flat_indices);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

/// Pairwise cosine similarity, [n×d]·[m×d] -> [n×m]. Zero rows are an error.
Var cosine_matrix(const Var& a, const Var& b);

/// Per row, entries outside the top `k` become −∞. Ties go to the lower
/// column index. Gradient flows to the kept entries only.
Var keep_topk_rows(const Var& a, std::size_t k);

/// Column indices of the top-k entries per row (descending value, ties to
/// lower index).
std::vector<std::vector<std::size_t>> topk_indices(const Array& a, std::size_t k);

// --- composite layers ---------------------------------------------------

/// y = xW (+ b). `b` may be undefined.
Var linear(const Var& x, const Var& w, const Var& b = {});

/// Inverted dropout. Identity when !training, p == 0, or deterministic mode.
Var dropout(const Var& x, double p, Rng& rng, bool training);

}  // namespace vts

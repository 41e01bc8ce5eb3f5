#include "vts/numerics/layers.hpp"

#include <cmath>
#include <limits>

#include "vts/error.hpp"

namespace vts {

Var multi_head_attention(const Var& q_in, const Var& k_in, const Var& v_in, const AttentionWeights& w,
                         std::span<const std::uint8_t> key_mask) {
  const std::size_t d = q_in.cols();
  if (w.heads == 0 || d % w.heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(w.heads) + " heads");
  }
  if (k_in.rows() != v_in.rows()) throw DimensionError("attention: key and value row counts differ");
  if (!key_mask.empty() && key_mask.size() != k_in.rows()) {
    throw DimensionError("attention: mask length " + std::to_string(key_mask.size()) + " vs " +
                         std::to_string(k_in.rows()) + " keys");
  }
  const std::size_t dh = d / w.heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Var q = linear(q_in, w.wq, w.bq);
  const Var k = linear(k_in, w.wk, w.bk);
  const Var v = linear(v_in, w.wv, w.bv);

  Var mask_row;
  bool any_masked = false;
  if (!key_mask.empty()) {
    Array m({1, key_mask.size()});
    for (std::size_t j = 0; j < key_mask.size(); ++j) {
      if (!key_mask[j]) {
        m[j] = -std::numeric_limits<double>::infinity();
        any_masked = true;
      }
    }
    mask_row = constant(std::move(m));
  }

  std::vector<Var> heads;
  heads.reserve(w.heads);
  for (std::size_t h = 0; h < w.heads; ++h) {
    const Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = scale(matmul_nt(qh, kh), inv_scale);
    if (any_masked) scores = add(scores, mask_row);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  const Var joined = w.heads == 1 ? heads.front() : concat_cols(heads);
  return linear(joined, w.wo, w.bo);
}

Var feed_forward(const Var& x, const FeedForwardWeights& w) {
  return linear(gelu(linear(x, w.w1, w.b1)), w.w2, w.b2);
}

}  // namespace vts

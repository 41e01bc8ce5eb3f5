#pragma once

#include <cstdint>
#include <span>

#include "vts/numerics/ops.hpp"

namespace vts {

/// Query/key/value/output projections of one attention sub-layer.
struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;
};

/// Scaled dot-product attention, scale 1/√(d/heads). Keys whose mask entry
/// is 0 receive −∞ before the softmax. Heads are concatenated and passed
/// through the output projection. `key_mask` may be empty (all valid).
Var multi_head_attention(const Var& q_in, const Var& k_in, const Var& v_in, const AttentionWeights& w,
                         std::span<const std::uint8_t> key_mask);

struct FeedForwardWeights {
  Var w1, b1, w2, b2;
};

/// linear → GELU → linear.
Var feed_forward(const Var& x, const FeedForwardWeights& w);

}  // namespace vts

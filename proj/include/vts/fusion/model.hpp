#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "vts/fusion/params.hpp"
#include "vts/numerics/layers.hpp"

namespace vts {

/// Per-forward-pass view of ModelParams as graph leaves; each tensor becomes
/// exactly one leaf so gradients accumulate in one place.
class ParamBinder {
 public:
  explicit ParamBinder(ModelParams& params);
  Var operator()(std::size_t index);
  Var linear_weight(const LinearSlots& s) { return (*this)(s.weight); }
  Var linear_bias(const LinearSlots& s) { return s.bias == kNoParam ? Var{} : (*this)(s.bias); }
  AttentionWeights attention(const AttentionSlots& s, std::size_t heads);
  FeedForwardWeights mlp(const MlpSlots& s);
  ModelParams& params() { return params_; }

 private:
  ModelParams& params_;
  std::vector<Var> cache_;
};

/// Router outputs for one MoE layer.
struct GateTrace {
  Var gates;        // [R×E], exactly K nonzeros per row
  Var clean;        // [R×E] x·W_g
  Var noisy;        // [R×E] clean + SN()·Softplus(x·W_n); equals clean when noise is off
  Var noise_scale;  // [R×E] max(Softplus(x·W_n), 1e-3)
  std::vector<std::size_t> rows;  // rows that belong to valid clips
  std::size_t active = 0;         // K
};

struct FusedStates {
  Var v, t;        // projected inputs [n×d]
  Var h_v, h_t;    // fused streams [n×d]
  Var m;           // [n×2d]
  Var p;           // [n×1] boundary probabilities
  std::vector<GateTrace> gate_stats;  // one per MoE layer
};

/// Visual feature vector per clip: 2D ; 3D ; OCR. All three are required;
/// a default-constructed Array counts as missing.
Array concat_visual_features(const Array& v2d, const Array& v3d, const Array& vocr, std::string_view video_id);

/// v = raw_v·W_v, t = raw_t·W_t.
std::pair<Var, Var> project(const Var& raw_v, const Var& raw_t, ParamBinder& bind);

/// Noisy top-K gating. Noise is drawn only when `noise_on`.
GateTrace noisy_topk_gate(const Var& x, const Var& w_gate, const Var& w_noise, std::size_t k, Rng& rng,
                          bool noise_on);

/// Σ_e G_e·MLP_e(x), evaluating each expert only on the rows routed to it.
Var moe_block(const Var& x, const Var& gates, const std::vector<FeedForwardWeights>& experts);

/// One merge-attention layer: shared self-attention over [v ; t] (2n rows),
/// then the shared feed-forward (or MoE), then split back.
std::pair<Var, Var> merge_attention_layer(const Var& v, const Var& t, std::span<const std::uint8_t> mask,
                                          const FusionLayerSlots& slots, ParamBinder& bind, const ModelConfig& cfg,
                                          Rng& rng, bool training, std::vector<GateTrace>* gate_stats = nullptr);

/// One co-attention layer: per-modality self-attention, symmetric
/// cross-attention, then per-stream feed-forward (or a shared MoE over the
/// concatenated streams).
std::pair<Var, Var> co_attention_layer(const Var& v, const Var& t, std::span<const std::uint8_t> mask,
                                       const FusionLayerSlots& slots, ParamBinder& bind, const ModelConfig& cfg,
                                       Rng& rng, bool training, std::vector<GateTrace>* gate_stats = nullptr);

/// Full model body: projection, M fusion layers, m = h_v ; h_t, p = σ(m·W_p + b).
/// `mask` marks valid clips (empty = all valid).
FusedStates fusion_stack(ModelParams& params, const Var& raw_v, const Var& raw_t,
                         std::span<const std::uint8_t> mask, Rng& rng, bool training);

/// Convenience overload binding into an existing binder.
FusedStates fusion_stack(ParamBinder& bind, const Var& raw_v, const Var& raw_t, std::span<const std::uint8_t> mask,
                         Rng& rng, bool training);

}  // namespace vts

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vts/fusion/config.hpp"
#include "vts/numerics/array.hpp"
#include "vts/numerics/rng.hpp"

namespace vts {

inline constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

// Layout structs hold indices into ModelParams::tensors, so ModelParams is
// an ordinary copyable value.
struct LinearSlots {
  std::size_t weight = kNoParam;
  std::size_t bias = kNoParam;
};

struct NormSlots {
  std::size_t gain = kNoParam;
  std::size_t bias = kNoParam;
};

struct AttentionSlots {
  NormSlots norm_q;
  std::optional<NormSlots> norm_kv;  // cross-attention only
  LinearSlots q, k, v, o;
};

struct MlpSlots {
  LinearSlots fc1, fc2;
};

struct FeedForwardSlots {
  NormSlots norm;
  MlpSlots mlp;
};

struct MoeSlots {
  NormSlots norm;
  std::size_t w_gate = kNoParam;
  std::size_t w_noise = kNoParam;
  std::vector<MlpSlots> experts;
};

/// One fusion layer. Merge kinds use `self_v` as the shared attention and
/// `ffn_v` as the shared feed-forward.
struct FusionLayerSlots {
  AttentionSlots self_v;
  std::optional<AttentionSlots> self_t, cross_v, cross_t;
  std::optional<FeedForwardSlots> ffn_v, ffn_t;
  std::optional<MoeSlots> moe;
};

/// All trainable parameters. Tensor order is fixed by the config and is the
/// checkpoint order: proj_v, proj_t, layers in order, predictor.
class ModelParams {
 public:
  ModelParams() = default;

  /// Fresh parameters: weights ~ N(0, 0.02²), biases 0, norm gains 1.
  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  /// Same layout with all values zero (filled by a checkpoint loader).
  static ModelParams layout(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  ParamTensor& at(std::size_t i) { return tensors_.at(i); }
  const ParamTensor& at(std::size_t i) const { return tensors_.at(i); }
  std::vector<ParamTensor*> pointers();

  std::size_t parameter_count() const;
  void zero_grad();

  LinearSlots proj_v, proj_t, predictor;
  std::vector<FusionLayerSlots> layers;

 private:
  ModelParams(const ModelConfig& cfg, Rng* rng);
  std::size_t add(std::string name, Shape shape, double fill, Rng* rng, bool random);
  LinearSlots add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng* rng);
  NormSlots add_norm(const std::string& name, std::size_t d, Rng* rng);
  AttentionSlots add_attention(const std::string& name, std::size_t d, bool cross, Rng* rng);
  MlpSlots add_mlp(const std::string& name, std::size_t d, std::size_t hidden, Rng* rng);

  ModelConfig config_;
  std::vector<ParamTensor> tensors_;
};

/// Closed-form parameter count for a config (d = hidden_dim,
/// F = expert_intermediate, E = expert_count, Dv/Dt = raw widths):
///   projections  d·(Dv + Dt)         predictor 2d + 1
///   self-attn    4d² + 6d            cross-attn 4d² + 8d
///   feed-forward 2dF + F + 3d        MoE 2d + 2dE + E·(2dF + F + d)
///   merge = self + ffn;  co = 2·self + 2·cross + 2·ffn
///   merge_moe = self + MoE;  co_moe = 2·self + 2·cross + MoE;  none = 0
std::size_t expected_parameter_count(const ModelConfig& cfg);

}  // namespace vts

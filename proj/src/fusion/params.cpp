#include "vts/fusion/params.hpp"

#include "vts/error.hpp"

namespace vts {

namespace {
constexpr double kInitStd = 0.02;
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) { return ModelParams(cfg, &rng); }

ModelParams ModelParams::layout(const ModelConfig& cfg) { return ModelParams(cfg, nullptr); }

std::size_t ModelParams::add(std::string name, Shape shape, double fill, Rng* rng, bool random) {
  Array value(std::move(shape), fill);
  if (random && rng) {
    for (auto& x : value.vec()) x = rng->normal(0.0, kInitStd);
  }
  tensors_.emplace_back(std::move(name), std::move(value));
  return tensors_.size() - 1;
}

LinearSlots ModelParams::add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng* rng) {
  LinearSlots s;
  s.weight = add(name + ".weight", {in, out}, 0.0, rng, true);
  if (bias) s.bias = add(name + ".bias", {out}, 0.0, rng, false);
  return s;
}

NormSlots ModelParams::add_norm(const std::string& name, std::size_t d, Rng* rng) {
  return {add(name + ".gain", {d}, rng ? 1.0 : 0.0, rng, false), add(name + ".bias", {d}, 0.0, rng, false)};
}

AttentionSlots ModelParams::add_attention(const std::string& name, std::size_t d, bool cross, Rng* rng) {
  AttentionSlots s;
  s.norm_q = add_norm(name + ".norm_q", d, rng);
  if (cross) s.norm_kv = add_norm(name + ".norm_kv", d, rng);
  s.q = add_linear(name + ".q", d, d, true, rng);
  s.k = add_linear(name + ".k", d, d, true, rng);
  s.v = add_linear(name + ".v", d, d, true, rng);
  s.o = add_linear(name + ".o", d, d, true, rng);
  return s;
}

MlpSlots ModelParams::add_mlp(const std::string& name, std::size_t d, std::size_t hidden, Rng* rng) {
  return {add_linear(name + ".fc1", d, hidden, true, rng), add_linear(name + ".fc2", hidden, d, true, rng)};
}

ModelParams::ModelParams(const ModelConfig& cfg, Rng* rng) : config_(cfg) {
  cfg.validate();
  if (cfg.visual_dim == 0 || cfg.text_dim == 0) {
    throw ConfigError("visual_dim and text_dim must be set before building parameters");
  }
  const std::size_t d = cfg.hidden_dim;
  const std::size_t f = cfg.expert_intermediate;
  proj_v = add_linear("proj_v", cfg.visual_dim, d, false, rng);
  proj_t = add_linear("proj_t", cfg.text_dim, d, false, rng);

  const std::size_t layer_count = cfg.fusion_kind == FusionKind::none ? 0 : cfg.num_layers;
  for (std::size_t l = 0; l < layer_count; ++l) {
    const std::string p = "layers." + std::to_string(l);
    FusionLayerSlots layer;
    if (is_co(cfg.fusion_kind)) {
      layer.self_v = add_attention(p + ".self_v", d, false, rng);
      layer.self_t = add_attention(p + ".self_t", d, false, rng);
      layer.cross_v = add_attention(p + ".cross_v", d, true, rng);
      layer.cross_t = add_attention(p + ".cross_t", d, true, rng);
    } else {
      layer.self_v = add_attention(p + ".self", d, false, rng);
    }
    if (cfg.moe()) {
      MoeSlots moe;
      moe.norm = add_norm(p + ".moe.norm", d, rng);
      moe.w_gate = add(p + ".moe.w_gate", {d, cfg.expert_count}, 0.0, rng, true);
      moe.w_noise = add(p + ".moe.w_noise", {d, cfg.expert_count}, 0.0, rng, true);
      for (std::size_t e = 0; e < cfg.expert_count; ++e) {
        moe.experts.push_back(add_mlp(p + ".moe.expert." + std::to_string(e), d, f, rng));
      }
      layer.moe = std::move(moe);
    } else if (is_co(cfg.fusion_kind)) {
      layer.ffn_v = FeedForwardSlots{add_norm(p + ".ffn_v.norm", d, rng), add_mlp(p + ".ffn_v", d, f, rng)};
      layer.ffn_t = FeedForwardSlots{add_norm(p + ".ffn_t.norm", d, rng), add_mlp(p + ".ffn_t", d, f, rng)};
    } else {
      layer.ffn_v = FeedForwardSlots{add_norm(p + ".ffn.norm", d, rng), add_mlp(p + ".ffn", d, f, rng)};
    }
    layers.push_back(std::move(layer));
  }
  predictor = add_linear("predictor", 2 * d, 1, true, rng);
}

std::vector<ParamTensor*> ModelParams::pointers() {
  std::vector<ParamTensor*> out;
  out.reserve(tensors_.size());
  for (auto& t : tensors_) out.push_back(&t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.hidden_dim, f = cfg.expert_intermediate, e = cfg.expert_count;
  const std::size_t self_attn = 4 * d * d + 6 * d;
  const std::size_t cross_attn = 4 * d * d + 8 * d;
  const std::size_t ffn = 2 * d * f + f + 3 * d;
  const std::size_t moe = 2 * d + 2 * d * e + e * (2 * d * f + f + d);
  std::size_t layer = 0;
  switch (cfg.fusion_kind) {
    case FusionKind::none: layer = 0; break;
    case FusionKind::merge: layer = self_attn + ffn; break;
    case FusionKind::co: layer = 2 * self_attn + 2 * cross_attn + 2 * ffn; break;
    case FusionKind::merge_moe: layer = self_attn + moe; break;
    case FusionKind::co_moe: layer = 2 * self_attn + 2 * cross_attn + moe; break;
  }
  const std::size_t layers = cfg.fusion_kind == FusionKind::none ? 0 : cfg.num_layers;
  return d * (cfg.visual_dim + cfg.text_dim) + layers * layer + 2 * d + 1;
}

}  // namespace vts

#include "vts/fusion/model.hpp"

#include "vts/error.hpp"

namespace vts {

namespace {

constexpr double kNoiseFloor = 1e-3;

Var norm(const Var& x, const NormSlots& s, ParamBinder& bind) { return layer_norm(x, bind(s.gain), bind(s.bias)); }

std::vector<std::size_t> valid_rows(std::span<const std::uint8_t> mask, std::size_t n, std::size_t copies) {
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < copies; ++c)
    for (std::size_t i = 0; i < n; ++i)
      if (mask.empty() || mask[i]) rows.push_back(c * n + i);
  return rows;
}

// Pre-norm residual attention sub-layer. `kv` undefined means self-attention.
Var attention_block(const Var& x, const Var& kv, const AttentionSlots& s, std::span<const std::uint8_t> mask,
                    ParamBinder& bind, const ModelConfig& cfg, Rng& rng, bool training) {
  const Var q_in = norm(x, s.norm_q, bind);
  const Var kv_in = kv.defined() ? norm(kv, *s.norm_kv, bind) : q_in;
  const Var out = multi_head_attention(q_in, kv_in, kv_in, bind.attention(s, cfg.heads), mask);
  return add(x, dropout(out, cfg.dropout_p, rng, training));
}

Var ffn_block(const Var& x, const FeedForwardSlots& s, ParamBinder& bind, const ModelConfig& cfg, Rng& rng,
              bool training) {
  const Var out = feed_forward(norm(x, s.norm, bind), bind.mlp(s.mlp));
  return add(x, dropout(out, cfg.dropout_p, rng, training));
}

Var moe_sublayer(const Var& x, const MoeSlots& s, std::vector<std::size_t> rows, ParamBinder& bind,
                 const ModelConfig& cfg, Rng& rng, bool training, std::vector<GateTrace>* gate_stats) {
  const Var xn = norm(x, s.norm, bind);
  const bool noise_on = training && cfg.gate_noise && !deterministic_mode();
  GateTrace trace = noisy_topk_gate(xn, bind(s.w_gate), bind(s.w_noise), cfg.active_experts, rng, noise_on);
  std::vector<FeedForwardWeights> experts;
  experts.reserve(s.experts.size());
  for (const auto& e : s.experts) experts.push_back(bind.mlp(e));
  const Var out = moe_block(xn, trace.gates, experts);
  trace.rows = std::move(rows);
  if (gate_stats) gate_stats->push_back(std::move(trace));
  return add(x, dropout(out, cfg.dropout_p, rng, training));
}

}  // namespace

ParamBinder::ParamBinder(ModelParams& params) : params_(params), cache_(params.tensors().size()) {}

Var ParamBinder::operator()(std::size_t index) {
  if (index == kNoParam) return {};
  Var& v = cache_.at(index);
  if (!v.defined()) v = parameter(params_.at(index));
  return v;
}

AttentionWeights ParamBinder::attention(const AttentionSlots& s, std::size_t heads) {
  return {linear_weight(s.q), linear_bias(s.q), linear_weight(s.k), linear_bias(s.k),
          linear_weight(s.v), linear_bias(s.v), linear_weight(s.o), linear_bias(s.o), heads};
}

FeedForwardWeights ParamBinder::mlp(const MlpSlots& s) {
  return {linear_weight(s.fc1), linear_bias(s.fc1), linear_weight(s.fc2), linear_bias(s.fc2)};
}

Array concat_visual_features(const Array& v2d, const Array& v3d, const Array& vocr, std::string_view video_id) {
  const char* names[] = {"2d", "3d", "ocr"};
  const Array* parts[] = {&v2d, &v3d, &vocr};
  for (int i = 0; i < 3; ++i) {
    if (parts[i]->rank() == 0) {
      throw DataError("video " + std::string(video_id) + ": missing " + names[i] + " visual features");
    }
  }
  const std::size_t n = v2d.rows();
  if (v3d.rows() != n || vocr.rows() != n) {
    throw DataError("video " + std::string(video_id) + ": visual feature row counts differ (2d " +
                    std::to_string(n) + ", 3d " + std::to_string(v3d.rows()) + ", ocr " +
                    std::to_string(vocr.rows()) + ")");
  }
  const std::size_t c = v2d.cols() + v3d.cols() + vocr.cols();
  Array out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (const Array* p : parts) {
      for (std::size_t j = 0; j < p->cols(); ++j) out[i * c + off + j] = p->at(i, j);
      off += p->cols();
    }
  }
  return out;
}

std::pair<Var, Var> project(const Var& raw_v, const Var& raw_t, ParamBinder& bind) {
  const ModelParams& p = bind.params();
  return {linear(raw_v, bind.linear_weight(p.proj_v)), linear(raw_t, bind.linear_weight(p.proj_t))};
}

GateTrace noisy_topk_gate(const Var& x, const Var& w_gate, const Var& w_noise, std::size_t k, Rng& rng,
                          bool noise_on) {
  const std::size_t experts = w_gate.cols();
  if (k > experts) {
    throw ConfigError("active_experts K=" + std::to_string(k) + " exceeds expert_count E=" + std::to_string(experts));
  }
  GateTrace trace;
  trace.active = k;
  trace.clean = matmul(x, w_gate);
  const Var scale = softplus(matmul(x, w_noise));
  trace.noise_scale = clamp_min(scale, kNoiseFloor);
  if (noise_on) {
    Array eps({x.rows(), experts});
    for (auto& e : eps.vec()) e = rng.normal();
    trace.noisy = add(trace.clean, mul_const(scale, eps));
  } else {
    trace.noisy = trace.clean;
  }
  trace.gates = softmax(keep_topk_rows(trace.noisy, k), 1);
  return trace;
}

Var moe_block(const Var& x, const Var& gates, const std::vector<FeedForwardWeights>& experts) {
  const std::size_t rows = x.rows(), e_count = gates.cols();
  if (gates.rows() != rows || e_count != experts.size()) {
    throw DimensionError("moe_block: gates " + shape_str(gates.shape()) + " do not match " +
                         std::to_string(rows) + " rows and " + std::to_string(experts.size()) + " experts");
  }
  Var out;
  for (std::size_t e = 0; e < e_count; ++e) {
    std::vector<std::size_t> routed, flat;
    for (std::size_t r = 0; r < rows; ++r) {
      if (gates.value()[r * e_count + e] != 0.0) {
        routed.push_back(r);
        flat.push_back(r * e_count + e);
      }
    }
    if (routed.empty()) continue;
    const Var y = feed_forward(take_rows(x, routed), experts[e]);
    const Var w = reshape(gather(gates, flat), routed.size(), 1);
    const Var contrib = scatter_rows(mul(y, w), routed, rows);
    out = out.defined() ? add(out, contrib) : contrib;
  }
  if (!out.defined()) out = constant(Array({rows, x.cols()}));
  return out;
}

std::pair<Var, Var> merge_attention_layer(const Var& v, const Var& t, std::span<const std::uint8_t> mask,
                                          const FusionLayerSlots& slots, ParamBinder& bind, const ModelConfig& cfg,
                                          Rng& rng, bool training, std::vector<GateTrace>* gate_stats) {
  const std::size_t n = v.rows();
  std::vector<std::uint8_t> mask2;
  if (!mask.empty()) {
    mask2.assign(mask.begin(), mask.end());
    mask2.insert(mask2.end(), mask.begin(), mask.end());
  }
  Var x = concat_rows({v, t});
  x = attention_block(x, {}, slots.self_v, mask2, bind, cfg, rng, training);
  if (slots.moe) {
    x = moe_sublayer(x, *slots.moe, valid_rows(mask, n, 2), bind, cfg, rng, training, gate_stats);
  } else {
    x = ffn_block(x, *slots.ffn_v, bind, cfg, rng, training);
  }
  return {slice_rows(x, 0, n), slice_rows(x, n, 2 * n)};
}

std::pair<Var, Var> co_attention_layer(const Var& v, const Var& t, std::span<const std::uint8_t> mask,
                                       const FusionLayerSlots& slots, ParamBinder& bind, const ModelConfig& cfg,
                                       Rng& rng, bool training, std::vector<GateTrace>* gate_stats) {
  const std::size_t n = v.rows();
  const Var v1 = attention_block(v, {}, slots.self_v, mask, bind, cfg, rng, training);
  const Var t1 = attention_block(t, {}, *slots.self_t, mask, bind, cfg, rng, training);
  const Var v2 = attention_block(v1, t1, *slots.cross_v, mask, bind, cfg, rng, training);
  const Var t2 = attention_block(t1, v1, *slots.cross_t, mask, bind, cfg, rng, training);
  if (slots.moe) {
    const Var x = moe_sublayer(concat_rows({v2, t2}), *slots.moe, valid_rows(mask, n, 2), bind, cfg, rng, training,
                               gate_stats);
    return {slice_rows(x, 0, n), slice_rows(x, n, 2 * n)};
  }
  return {ffn_block(v2, *slots.ffn_v, bind, cfg, rng, training), ffn_block(t2, *slots.ffn_t, bind, cfg, rng, training)};
}

FusedStates fusion_stack(ParamBinder& bind, const Var& raw_v, const Var& raw_t, std::span<const std::uint8_t> mask,
                         Rng& rng, bool training) {
  const ModelParams& params = bind.params();
  const ModelConfig& cfg = params.config();
  const std::size_t n = raw_v.rows();
  if (raw_t.rows() != n) {
    throw DimensionError("visual and text sequences differ in length: " + std::to_string(n) + " vs " +
                         std::to_string(raw_t.rows()));
  }
  if (raw_v.cols() != cfg.visual_dim || raw_t.cols() != cfg.text_dim) {
    throw DimensionError("feature widths " + std::to_string(raw_v.cols()) + "/" + std::to_string(raw_t.cols()) +
                         " do not match model " + std::to_string(cfg.visual_dim) + "/" +
                         std::to_string(cfg.text_dim));
  }
  if (!mask.empty() && mask.size() != n) throw DimensionError("mask length does not match sequence length");

  FusedStates out;
  std::tie(out.v, out.t) = project(raw_v, raw_t, bind);
  Var hv = out.v, ht = out.t;
  for (const auto& layer : params.layers) {
    if (is_co(cfg.fusion_kind)) {
      std::tie(hv, ht) = co_attention_layer(hv, ht, mask, layer, bind, cfg, rng, training, &out.gate_stats);
    } else {
      std::tie(hv, ht) = merge_attention_layer(hv, ht, mask, layer, bind, cfg, rng, training, &out.gate_stats);
    }
  }
  out.h_v = hv;
  out.h_t = ht;
  out.m = cfg.duplicate_visual ? concat_cols({hv, hv}) : concat_cols({hv, ht});
  out.p = sigmoid(linear(out.m, bind.linear_weight(params.predictor), bind.linear_bias(params.predictor)));
  return out;
}

FusedStates fusion_stack(ModelParams& params, const Var& raw_v, const Var& raw_t, std::span<const std::uint8_t> mask,
                         Rng& rng, bool training) {
  ParamBinder bind(params);
  return fusion_stack(bind, raw_v, raw_t, mask, rng, training);
}

}  // namespace vts

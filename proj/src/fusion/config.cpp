#include "vts/fusion/config.hpp"

#include "vts/error.hpp"

namespace vts {

std::string_view to_string(FusionKind k) {
  switch (k) {
    case FusionKind::none: return "none";
    case FusionKind::merge: return "merge";
    case FusionKind::co: return "co";
    case FusionKind::merge_moe: return "merge_moe";
    case FusionKind::co_moe: return "co_moe";
  }
  return "?";
}

std::string_view to_string(CmaForm f) { return f == CmaForm::literal ? "literal" : "lognce"; }

std::string_view to_string(CsslNegatives n) { return n == CsslNegatives::hardest ? "hardest" : "easiest"; }

FusionKind parse_fusion_kind(std::string_view s) {
  for (auto k : {FusionKind::none, FusionKind::merge, FusionKind::co, FusionKind::merge_moe, FusionKind::co_moe}) {
    if (s == to_string(k)) return k;
  }
  throw UsageError("invalid fusion_kind '" + std::string(s) + "' (valid: none, merge, co, merge_moe, co_moe)");
}

CmaForm parse_cma_form(std::string_view s) {
  if (s == "literal") return CmaForm::literal;
  if (s == "lognce") return CmaForm::lognce;
  throw UsageError("invalid cma_form '" + std::string(s) + "' (valid: literal, lognce)");
}

CsslNegatives parse_cssl_negatives(std::string_view s) {
  if (s == "hardest") return CsslNegatives::hardest;
  if (s == "easiest") return CsslNegatives::easiest;
  throw UsageError("invalid cssl_negatives '" + std::string(s) + "' (valid: hardest, easiest)");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.hidden_dim = 32;
  c.heads = 4;
  c.expert_intermediate = 64;
  return c;
}

void ModelConfig::validate() const {
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
  if (heads == 0 || hidden_dim % heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (expert_count == 0 || active_experts == 0) throw ConfigError("expert_count and active_experts must be positive");
  if (active_experts > expert_count) {
    throw ConfigError("active_experts K=" + std::to_string(active_experts) + " exceeds expert_count E=" +
                      std::to_string(expert_count));
  }
  if (expert_intermediate == 0) throw ConfigError("expert_intermediate must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  for (double w : {alpha, beta, gamma, sigma, theta}) {
    if (w < 0.0) throw ConfigError("loss weights must be non-negative");
  }
  if (k1 == 0 || k2 == 0) throw ConfigError("k1 and k2 must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  if (threshold < 0.0 || threshold > 1.0) throw ConfigError("threshold must be a probability");
}

std::string ModelConfig::architecture_encoding() const {
  std::string s;
  auto put = [&](std::string_view k, const std::string& v) {
    s.append(k);
    s += '=';
    s += v;
    s += '\n';
  };
  put("fusion_kind", std::string(to_string(fusion_kind)));
  put("num_layers", std::to_string(num_layers));
  put("hidden_dim", std::to_string(hidden_dim));
  put("heads", std::to_string(heads));
  put("expert_count", std::to_string(expert_count));
  put("active_experts", std::to_string(active_experts));
  put("expert_intermediate", std::to_string(expert_intermediate));
  put("visual_dim", std::to_string(visual_dim));
  put("text_dim", std::to_string(text_dim));
  put("duplicate_visual", duplicate_visual ? "1" : "0");
  return s;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ModelConfig::architecture_hash() const { return fnv1a64(architecture_encoding()); }

}  // namespace vts

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace vts {

enum class FusionKind { none, merge, co, merge_moe, co_moe };

/// Alignment loss form: the single global ratio as printed, or the
/// symmetric per-anchor log-ratio (InfoNCE).
enum class CmaForm { literal, lognce };

/// Which cross-topic clips serve as CSSL negatives.
enum class CsslNegatives { hardest, easiest };

std::string_view to_string(FusionKind k);
std::string_view to_string(CmaForm f);
std::string_view to_string(CsslNegatives n);
FusionKind parse_fusion_kind(std::string_view s);
CmaForm parse_cma_form(std::string_view s);
CsslNegatives parse_cssl_negatives(std::string_view s);

inline bool has_moe(FusionKind k) { return k == FusionKind::merge_moe || k == FusionKind::co_moe; }
inline bool is_co(FusionKind k) { return k == FusionKind::co || k == FusionKind::co_moe; }

/// Architecture plus objective settings. Defaults are the full-scale
/// profile; `desk()` is the small CPU profile used by tests.
struct ModelConfig {
  FusionKind fusion_kind = FusionKind::co_moe;
  std::size_t num_layers = 1;
  std::size_t hidden_dim = 768;
  std::size_t heads = 8;
  std::size_t expert_count = 4;
  std::size_t active_experts = 2;
  std::size_t expert_intermediate = 3072;
  // Raw feature widths; 0 means "take from the data".
  std::size_t visual_dim = 0;
  std::size_t text_dim = 0;

  double dropout_p = 0.1;
  // Common contrastive defaults.
  double temperature = 0.07;
  double epsilon = 1e-8;

  double alpha = 0.5;  // l_cma, pre-training
  double beta = 1.0;   // l_balance, pre-training
  double gamma = 0.5;  // l_cma, fine-tuning
  double sigma = 1.0;  // l_balance, fine-tuning
  double theta = 0.5;  // l_mcssl, fine-tuning
  std::size_t k1 = 1;
  std::size_t k2 = 3;
  std::size_t max_seq_len = 2048;
  double threshold = 0.5;

  CmaForm cma_form = CmaForm::literal;
  CsslNegatives cssl_negatives = CsslNegatives::hardest;
  /// Audit switch: build m_i from the visual stream twice.
  bool duplicate_visual = false;
  /// Gate noise during training (also off whenever deterministic mode is on).
  bool gate_noise = true;

  static ModelConfig full() { return {}; }
  static ModelConfig desk();

  bool moe() const { return has_moe(fusion_kind); }
  /// Balance weights are forced to zero without MoE layers.
  double effective_beta() const { return moe() ? beta : 0.0; }
  double effective_sigma() const { return moe() ? sigma : 0.0; }

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  /// Canonical text of the architecture-defining fields, one `key=value`
  /// per line in a fixed order. Checkpoints store it and its hash.
  std::string architecture_encoding() const;
  std::uint64_t architecture_hash() const;
};

/// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace vts

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vts/fusion/model.hpp"

namespace vts {

inline constexpr double kProbClamp = 1e-12;

struct LossBreakdown {
  double l_vts = 0.0;
  double l_cma = 0.0;
  double l_mcssl = 0.0;
  double l_importance = 0.0;
  double l_load = 0.0;
  double l_balance = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
};

/// Positives and negatives chosen for one anchor clip.
struct CsslPairs {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};
using CsslPairSet = std::vector<CsslPairs>;

/// Topic id per clip: starts at 0 and increments after every labelled boundary.
std::vector<std::size_t> topics_from_labels(std::span<const std::uint8_t> labels);

/// Binary cross-entropy summed over clips 0..n_valid−2 (the last valid clip is
/// excluded). p is [n×1]; entries are clamped to [1e-12, 1−1e-12].
/// Fewer than two valid clips contribute 0.
Var l_vts(const Var& p, std::span<const std::uint8_t> labels, std::size_t n_valid);

/// cos(a, b) / τ. Zero vectors are a DataError.
double sim(std::span<const double> a, std::span<const double> b, double tau);

/// Cross-modal alignment over the first n_valid rows of h_v and h_t.
/// literal: −(1/n)·Σ_i e^{s_ii} / (Σ_ij e^{s_ij} + ε)
/// lognce:  symmetric mean of −log softmax over rows and over columns.
Var l_cma(const Var& h_v, const Var& h_t, std::size_t n_valid, double tau, double eps, CmaForm form);

/// Ranks candidates by cosine of the (constant) rows of m. Same-topic clips
/// are positives, most similar first. Negatives are cross-topic clips, most
/// similar first for `hardest`, least similar first for `easiest`. Ties go to
/// the lower index.
CsslPairSet select_cssl_pairs(const Array& m, std::span<const std::size_t> topic_ids, std::size_t k1, std::size_t k2,
                              CsslNegatives mode = CsslNegatives::hardest);

/// Multimodal CSSL over the first pairs.size() rows of m. Anchors with no
/// positive or no negative are skipped; with none left the loss is 0.
Var l_mcssl(const Var& m, const CsslPairSet& pairs, double tau);

struct BalanceTerms {
  Var importance;
  Var load;
  Var balance;
};

/// Squared coefficient of variation (population variance) of a [1×E] row.
/// A zero mean gives 0.
Var cv_squared(const Var& x);

/// Importance and load losses averaged over MoE layers, using only each
/// trace's valid rows. No traces gives zeros.
BalanceTerms l_balance(const std::vector<GateTrace>& traces);

/// l_vts + α·l_cma + β·l_balance (β = 0 without MoE).
double pretrain_objective(const LossBreakdown& b, const ModelConfig& cfg);
/// l_vts + σ·l_balance + θ·l_mcssl + γ·l_cma (σ = 0 without MoE).
double finetune_objective(const LossBreakdown& b, const ModelConfig& cfg);

enum class Stage { pretrain, finetune };

struct SequenceLoss {
  Var total;
  LossBreakdown parts;
};

/// Every term for one (possibly padded) sequence and the weighted objective
/// of the stage. Only the first n_valid clips participate.
SequenceLoss sequence_loss(const FusedStates& fs, std::span<const std::uint8_t> labels, std::size_t n_valid,
                           const ModelConfig& cfg, Stage stage);

}  // namespace vts

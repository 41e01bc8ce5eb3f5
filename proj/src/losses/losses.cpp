#include "vts/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vts/error.hpp"

namespace vts {

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  l_vts += o.l_vts;
  l_cma += o.l_cma;
  l_mcssl += o.l_mcssl;
  l_importance += o.l_importance;
  l_load += o.l_load;
  l_balance += o.l_balance;
  total += o.total;
  return *this;
}

std::vector<std::size_t> topics_from_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::size_t> ids(labels.size());
  std::size_t topic = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ids[i] = topic;
    if (labels[i]) ++topic;
  }
  return ids;
}

Var l_vts(const Var& p, std::span<const std::uint8_t> labels, std::size_t n_valid) {
  if (n_valid > p.rows() || labels.size() < n_valid) {
    throw DimensionError("l_vts: " + std::to_string(n_valid) + " valid clips but p has " + std::to_string(p.rows()) +
                         " rows and " + std::to_string(labels.size()) + " labels");
  }
  if (n_valid < 2) return constant(Array::scalar(0.0));
  const std::size_t k = n_valid - 1;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Array y({1, k}), not_y({1, k});
  for (std::size_t i = 0; i < k; ++i) {
    y[i] = labels[i] ? 1.0 : 0.0;
    not_y[i] = 1.0 - y[i];
  }
  const Var pc = clamp(gather(p, idx), kProbClamp, 1.0 - kProbClamp);
  const Var ll = add(mul_const(log(pc), y), mul_const(log(add_scalar(neg(pc), 1.0)), not_y));
  return neg(sum(ll));
}

double sim(std::span<const double> a, std::span<const double> b, double tau) {
  if (a.size() != b.size()) throw DimensionError("sim: vector lengths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("sim: zero vector has no direction");
  return dot / (std::sqrt(na) * std::sqrt(nb)) / tau;
}

namespace {

Var diagonal(const Var& s) {
  const std::size_t n = s.rows();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * n + i;
  return reshape(gather(s, idx), n, 1);
}

}  // namespace

Var l_cma(const Var& h_v, const Var& h_t, std::size_t n_valid, double tau, double eps, CmaForm form) {
  if (n_valid == 0) return constant(Array::scalar(0.0));
  const Var s = scale(cosine_matrix(slice_rows(h_v, 0, n_valid), slice_rows(h_t, 0, n_valid)), 1.0 / tau);
  if (form == CmaForm::literal) {
    const Var e = exp(s);
    const Var ratio = div(sum(exp(diagonal(s))), add_scalar(sum(e), eps));
    return scale(ratio, -1.0 / static_cast<double>(n_valid));
  }
  const Var diag = diagonal(s);
  const Var rows = mean(sub(logsumexp_cols(s), diag));
  const Var cols = mean(sub(logsumexp_cols(transpose(s)), diag));
  return scale(add(rows, cols), 0.5);
}

CsslPairSet select_cssl_pairs(const Array& m, std::span<const std::size_t> topic_ids, std::size_t k1, std::size_t k2,
                              CsslNegatives mode) {
  const std::size_t n = topic_ids.size();
  if (m.rows() < n) throw DimensionError("select_cssl_pairs: fewer rows in m than topic ids");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double x : m.row_span(i)) s += x * x;
    if (s == 0.0) throw DataError("select_cssl_pairs: clip " + std::to_string(i) + " has a zero feature vector");
    norms[i] = std::sqrt(s);
  }
  auto cosine = [&](std::size_t i, std::size_t j) {
    const auto a = m.row_span(i), b = m.row_span(j);
    double dot = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) dot += a[c] * b[c];
    return dot / (norms[i] * norms[j]);
  };

  CsslPairSet out(n);
  std::vector<std::pair<double, std::size_t>> same, other;
  for (std::size_t i = 0; i < n; ++i) {
    same.clear();
    other.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (topic_ids[j] == topic_ids[i] ? same : other).emplace_back(cosine(i, j), j);
    }
    auto most_similar = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
    auto least_similar = [](const auto& a, const auto& b) { return a.first < b.first || (a.first == b.first && a.second < b.second); };
    std::sort(same.begin(), same.end(), most_similar);
    if (mode == CsslNegatives::hardest) {
      std::sort(other.begin(), other.end(), most_similar);
    } else {
      std::sort(other.begin(), other.end(), least_similar);
    }
    for (std::size_t j = 0; j < std::min(k1, same.size()); ++j) out[i].positives.push_back(same[j].second);
    for (std::size_t j = 0; j < std::min(k2, other.size()); ++j) out[i].negatives.push_back(other[j].second);
  }
  return out;
}

Var l_mcssl(const Var& m, const CsslPairSet& pairs, double tau) {
  const std::size_t n = pairs.size();
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < n; ++i) {
    if (!pairs[i].positives.empty() && !pairs[i].negatives.empty()) anchors.push_back(i);
  }
  if (anchors.empty()) return constant(Array::scalar(0.0));
  Array pos_mask({n, n}), neg_mask({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : pairs[i].positives) pos_mask.at(i, j) = 1.0;
    for (std::size_t j : pairs[i].negatives) neg_mask.at(i, j) = 1.0;
  }
  const Var mv = slice_rows(m, 0, n);
  const Var e = exp(scale(cosine_matrix(mv, mv), 1.0 / tau));
  const Var pos = take_rows(sum_cols(mul_const(e, pos_mask)), anchors);
  const Var negs = take_rows(sum_cols(mul_const(e, neg_mask)), anchors);
  return neg(mean(sub(log(pos), log(add(pos, negs)))));
}

Var cv_squared(const Var& x) {
  const Var mu = mean(x);
  if (mu.item() == 0.0) return constant(Array::scalar(0.0));
  const Var var = mean(square(sub(x, mu)));
  return div(var, square(mu));
}

namespace {

// P(row r keeps expert e under a fresh noise draw), with the threshold taken
// as the K-th largest noisy score among the other experts.
Var load_probabilities(const Var& clean, const Var& noisy, const Var& noise_scale, std::size_t k) {
  const std::size_t rows = noisy.rows(), experts = noisy.cols();
  const auto order = topk_indices(noisy.value(), experts);
  std::vector<std::size_t> flat(rows * experts);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& o = order[r];
    for (std::size_t rank = 0; rank < experts; ++rank) {
      const std::size_t e = o[rank];
      const std::size_t thr = rank < k ? o[k] : o[k - 1];
      flat[r * experts + e] = r * experts + thr;
    }
  }
  const Var threshold = reshape(gather(noisy, flat), rows, experts);
  return normal_cdf(div(sub(clean, threshold), noise_scale));
}

}  // namespace

BalanceTerms l_balance(const std::vector<GateTrace>& traces) {
  BalanceTerms out;
  if (traces.empty()) {
    out.importance = out.load = out.balance = constant(Array::scalar(0.0));
    return out;
  }
  std::vector<Var> imp, load;
  for (const auto& t : traces) {
    if (t.rows.empty()) {
      imp.push_back(constant(Array::scalar(0.0)));
      load.push_back(constant(Array::scalar(0.0)));
      continue;
    }
    imp.push_back(cv_squared(sum_rows(take_rows(t.gates, t.rows))));
    const std::size_t experts = t.gates.cols();
    if (t.active >= experts) {
      load.push_back(constant(Array::scalar(0.0)));
    } else {
      const Var p = load_probabilities(take_rows(t.clean, t.rows), take_rows(t.noisy, t.rows),
                                       take_rows(t.noise_scale, t.rows), t.active);
      load.push_back(cv_squared(sum_rows(p)));
    }
  }
  const double inv = 1.0 / static_cast<double>(traces.size());
  out.importance = scale(sum(concat_cols(imp)), inv);
  out.load = scale(sum(concat_cols(load)), inv);
  out.balance = add(out.importance, out.load);
  return out;
}

double pretrain_objective(const LossBreakdown& b, const ModelConfig& cfg) {
  return b.l_vts + cfg.alpha * b.l_cma + cfg.effective_beta() * b.l_balance;
}

double finetune_objective(const LossBreakdown& b, const ModelConfig& cfg) {
  return b.l_vts + cfg.effective_sigma() * b.l_balance + cfg.theta * b.l_mcssl + cfg.gamma * b.l_cma;
}

SequenceLoss sequence_loss(const FusedStates& fs, std::span<const std::uint8_t> labels, std::size_t n_valid,
                           const ModelConfig& cfg, Stage stage) {
  SequenceLoss out;
  const Var vts = l_vts(fs.p, labels, n_valid);
  const Var cma = l_cma(fs.h_v, fs.h_t, n_valid, cfg.temperature, cfg.epsilon, cfg.cma_form);
  const BalanceTerms bal = l_balance(fs.gate_stats);
  out.parts.l_vts = vts.item();
  out.parts.l_cma = cma.item();
  out.parts.l_importance = bal.importance.item();
  out.parts.l_load = bal.load.item();
  out.parts.l_balance = bal.balance.item();

  if (stage == Stage::pretrain) {
    out.total = add(add(vts, scale(cma, cfg.alpha)), scale(bal.balance, cfg.effective_beta()));
    out.parts.total = pretrain_objective(out.parts, cfg);
    return out;
  }
  const auto topics = topics_from_labels(labels.first(n_valid));
  const auto pairs = select_cssl_pairs(fs.m.value(), topics, cfg.k1, cfg.k2, cfg.cssl_negatives);
  const Var mcssl = l_mcssl(fs.m, pairs, cfg.temperature);
  out.parts.l_mcssl = mcssl.item();
  out.total = add(add(add(vts, scale(bal.balance, cfg.effective_sigma())), scale(mcssl, cfg.theta)),
                  scale(cma, cfg.gamma));
  out.parts.total = finetune_objective(out.parts, cfg);
  return out;
}

}  // namespace vts

#include "vts/train/model_gradcheck.hpp"

#include "vts/fusion/model.hpp"
#include "vts/losses/losses.hpp"
#include "vts/numerics/grad_check.hpp"

namespace vts {

ModelConfig gradcheck_profile(ModelConfig base) {
  base.hidden_dim = 16;
  base.heads = 2;
  base.expert_intermediate = 8;
  base.visual_dim = 5;
  base.text_dim = 4;
  return base;
}

std::vector<ObjectiveCheck> check_model_gradients(const ModelConfig& cfg, std::size_t clips, Rng& rng, double h) {
  DeterministicGuard det(true);
  ModelParams params = ModelParams::init(cfg, rng);
  for (auto& t : params.tensors()) {
    const bool gain = t.name.ends_with(".gain");
    for (auto& x : t.value.vec()) x = gain ? 1.0 + 0.1 * rng.normal() : 0.3 * rng.normal();
  }
  Array v({clips, cfg.visual_dim}), t({clips, cfg.text_dim});
  for (auto& x : v.vec()) x = rng.normal();
  for (auto& x : t.vec()) x = rng.normal();
  std::vector<std::uint8_t> labels(clips, 0);
  const std::size_t cut = 1 + rng.uniform_int(clips > 3 ? clips - 3 : 1);
  labels[cut] = 1;
  for (std::size_t i = 0; i + 1 < clips; ++i) {
    if (i != cut && rng.bernoulli(0.2)) labels[i] = 1;
  }
  const auto topics = topics_from_labels(labels);

  const bool moe = cfg.moe();
  auto objectives = [&]() {
    Rng fwd(0);
    ParamBinder bind(params);
    const FusedStates fs = fusion_stack(bind, constant(v), constant(t), {}, fwd, false);
    const Var vts = l_vts(fs.p, labels, clips);
    const Var cma = l_cma(fs.h_v, fs.h_t, clips, cfg.temperature, cfg.epsilon, cfg.cma_form);
    const auto pairs = select_cssl_pairs(fs.m.value(), topics, cfg.k1, cfg.k2, cfg.cssl_negatives);
    const Var mcssl = l_mcssl(fs.m, pairs, cfg.temperature);
    const BalanceTerms bal = l_balance(fs.gate_stats);
    const Var pre = add(add(vts, scale(cma, cfg.alpha)), scale(bal.balance, cfg.effective_beta()));
    const Var fine = add(add(add(vts, scale(bal.balance, cfg.effective_sigma())), scale(mcssl, cfg.theta)),
                         scale(cma, cfg.gamma));
    std::vector<Var> out{vts, cma, mcssl, pre, fine};
    if (moe) out.push_back(bal.balance);
    return out;
  };
  auto ptrs = params.pointers();
  const auto res = grad_check_multi(objectives, ptrs, h);
  static const char* names[] = {"l_vts", "l_cma", "l_mcssl", "pretrain", "finetune", "l_balance"};
  std::vector<ObjectiveCheck> out;
  for (std::size_t i = 0; i < res.size(); ++i) out.push_back({names[i], res[i].max_rel_error, res[i].worst_param});
  return out;
}

}  // namespace vts

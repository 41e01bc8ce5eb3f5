#pragma once

#include <string>
#include <vector>

#include "vts/fusion/config.hpp"
#include "vts/numerics/rng.hpp"

namespace vts {

struct ObjectiveCheck {
  std::string objective;  // l_vts, l_cma, l_mcssl, l_balance, pretrain, finetune
  double max_rel_error = 0.0;
  std::string worst_param;
};

/// Small architecture used for finite-difference checks: d = 16, 2 heads,
/// expert width 8, raw widths 5 and 4. Everything else comes from `base`.
ModelConfig gradcheck_profile(ModelConfig base);

/// One random instance: fresh parameters with O(1) spread, random
/// `clips`-clip features and labels with at least two topics. Every
/// objective is checked against central differences in one sweep
/// (deterministic mode is forced on). l_balance is skipped without MoE.
std::vector<ObjectiveCheck> check_model_gradients(const ModelConfig& cfg, std::size_t clips, Rng& rng,
                                                  double h = 1e-5);

}  // namespace vts

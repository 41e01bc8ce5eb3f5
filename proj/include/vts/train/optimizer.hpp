#pragma once

#include <vector>

#include "vts/numerics/array.hpp"

namespace vts {

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay, in the usual order: decay the
/// parameter, update the moments, apply the bias-corrected step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Returns false, leaving parameters and moments untouched, when any
  /// gradient entry is not finite.
  bool step(const std::vector<ParamTensor*>& params);

  std::size_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Array> m_, v_;
};

}  // namespace vts

#include "vts/train/optimizer.hpp"

#include <cmath>

#include "vts/error.hpp"

namespace vts {

bool AdamW::step(const std::vector<ParamTensor*>& params) {
  for (const auto* p : params) {
    if (!p->grad.all_finite()) return false;
  }
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw DimensionError("AdamW: parameter list changed between steps");
  ++t_;
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& val = params[k]->value.vec();
    const auto& g = params[k]->grad.vec();
    auto& m = m_[k].vec();
    auto& v = v_[k].vec();
    for (std::size_t i = 0; i < val.size(); ++i) {
      val[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      val[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
  return true;
}

}  // namespace vts

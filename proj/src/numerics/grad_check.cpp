#include "vts/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "vts/error.hpp"

namespace vts {

namespace {

std::vector<double> evaluate(const std::function<std::vector<Var>()>& objectives) {
  NoGradGuard no_grad;
  std::vector<double> out;
  for (const auto& v : objectives()) out.push_back(v.item());
  return out;
}

}  // namespace

std::vector<GradCheckResult> grad_check_multi(const std::function<std::vector<Var>()>& objectives,
                                              std::span<ParamTensor* const> params, double h) {
  const std::vector<double> f0 = evaluate(objectives);
  const std::vector<double> f1 = evaluate(objectives);
  for (std::size_t k = 0; k < f0.size(); ++k) {
    const bool same = f0[k] == f1[k] || (std::isnan(f0[k]) && std::isnan(f1[k]));
    if (!same) {
      throw Error("nondeterministic",
                  "grad_check: objective " + std::to_string(k) +
                      " is not deterministic (disable dropout and gating noise)");
    }
  }
  const std::size_t count = f0.size();

  // Analytic gradients, one backward pass per objective.
  std::vector<std::vector<Array>> analytic(count);
  for (std::size_t k = 0; k < count; ++k) {
    for (ParamTensor* p : params) p->zero_grad();
    std::vector<Var> roots = objectives();
    backward(roots[k]);
    for (ParamTensor* p : params) analytic[k].push_back(p->grad);
  }
  for (ParamTensor* p : params) p->zero_grad();

  std::vector<GradCheckResult> results(count);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const std::vector<double> up = evaluate(objectives);
      p.value[i] = orig - h;
      const std::vector<double> down = evaluate(objectives);
      p.value[i] = orig;
      for (std::size_t k = 0; k < count; ++k) {
        const double numeric = (up[k] - down[k]) / (2.0 * h);
        const double a = analytic[k][pi][i];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
        const bool worse = std::isnan(err) ? !std::isnan(results[k].max_rel_error)
                                           : err > results[k].max_rel_error;
        if (worse) {
          results[k] = {err, p.name, i, a, numeric};
        }
      }
    }
  }
  return results;
}

GradCheckResult grad_check(const std::function<Var()>& objective, std::span<ParamTensor* const> params, double h) {
  return grad_check_multi([&] { return std::vector<Var>{objective()}; }, params, h).front();
}

}  // namespace vts

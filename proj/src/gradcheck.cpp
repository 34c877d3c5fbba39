#include "afd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace afd {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw Error("finite_diff_grad: eps must be positive");
  Tensor probe = x.detach();
  const double first = f(probe);
  const double second = f(probe);
  if (first != second) throw Error("finite_diff_grad: function is not deterministic");
  std::vector<double> grad(probe.numel());
  auto vals = probe.mutable_values();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double saved = vals[i];
    vals[i] = saved + eps;
    const double up = f(probe);
    vals[i] = saved - eps;
    const double down = f(probe);
    vals[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return Tensor::from(x.shape(), std::move(grad));
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss_of,
                                             const std::vector<std::pair<std::string, Tensor>>& params,
                                             double eps, double tolerance, double abs_floor) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  backward(loss_of());
  std::vector<GradCheckResult> results;
  for (const auto& [name, p] : params) {
    Tensor param = p;
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    // Perturb the live parameter in place so loss_of sees it.
    auto vals = param.mutable_values();
    std::vector<double> numeric(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = loss_of().item();
      vals[i] = saved - eps;
      const double down = loss_of().item();
      vals[i] = saved;
      numeric[i] = (up - down) / (2.0 * eps);
    }
    GradCheckResult r;
    r.name = name;
    r.rel_error = relative_error(analytic, numeric);
    double peak = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric[i]));
      peak = std::max({peak, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    r.vanishing = peak < abs_floor;
    r.passed = r.rel_error < tolerance || r.vanishing;
    results.push_back(r);
  }
  return results;
}

}  // namespace afd

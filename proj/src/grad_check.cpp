#include "lesion/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lesion {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double eps) {
  for (Tensor& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& t : leaves) {
    analytic.emplace_back(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
    auto values = leaves[ti].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = f().item();
      values[i] = original - eps;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[ti][i], numeric);
      ++result.checked;
      if (err > result.max_relative_error || result.checked == 1) {
        result.max_relative_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
        result.analytic = analytic[ti][i];
        result.numeric = numeric;
      }
    }
  }
  for (Tensor& t : leaves) t.zero_grad();
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  std::vector<Tensor> leaves{leaf};
  return grad_check([&] { return f(leaf); }, leaves, eps);
}

}  // namespace lesion

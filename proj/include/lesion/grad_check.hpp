#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "lesion/tensor.hpp"

namespace lesion {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;  // index into the checked tensor list
  std::size_t worst_index = 0;   // flat element index within that tensor
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;  // number of scalar components compared
};

/// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

/// Compares backward() gradients of scalar f at x against central differences
/// (f(x+eps) - f(x-eps)) / 2eps, componentwise. `x` is not modified.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

/// Same, over every element of a set of leaf tensors (model parameters).
/// Each leaf is perturbed in place and restored bit-exactly.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double eps = 1e-5);

}  // namespace lesion

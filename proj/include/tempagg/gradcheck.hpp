#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tempagg/tensor.hpp"

namespace tempagg {

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// coordinates whose true gradient is ~0 from reporting noise as huge ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<name>[<flat index>]" of the largest error
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

// Compares backward() gradients of `loss_fn` against central differences
// (f(x+eps) - f(x-eps)) / 2eps. For each tensor, `per_tensor` coordinates are
// sampled (all of them when the tensor is smaller). loss_fn must rebuild the
// graph from the current tensor contents on every call and be deterministic.
GradCheckResult gradcheck(const std::function<Tensor<double>()>& loss_fn,
                          std::vector<NamedTensor> inputs, double eps,
                          std::size_t per_tensor, Rng& rng);

}  // namespace tempagg

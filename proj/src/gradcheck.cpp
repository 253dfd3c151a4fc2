#include "tempagg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tempagg {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck(const std::function<Tensor<double>()>& loss_fn,
                          std::vector<NamedTensor> inputs, double eps,
                          std::size_t per_tensor, Rng& rng) {
  for (auto& [name, t] : inputs) t.zero_grad();
  loss_fn().backward();

  GradCheckResult result;
  for (auto& [name, t] : inputs) {
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(per_tensor);
    }
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss_fn().item();
      values[i] = saved - eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = relative_error(a, numeric);
      ++result.coordinates;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace tempagg

#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

// Compares reverse-mode gradients of a scalar objective against central
// finite differences over every entry of every leaf. Returns the maximum
// relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// The objective must be deterministic and rebuild its graph on each call.
inline double finite_difference_check(const std::function<Tensor()>& objective,
                                      std::vector<Tensor> leaves, double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-4)
    throw std::invalid_argument("finite_difference_check: epsilon must be in [1e-7, 1e-4]");

  for (auto& leaf : leaves) {
    if (!leaf.requires_grad())
      throw std::invalid_argument("finite_difference_check: leaf does not require grad");
    leaf.zero_grad();
  }

  Tensor out = objective();
  if (!std::isfinite(out.value()))
    throw std::runtime_error("finite_difference_check: non-finite objective");
  out.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + epsilon;
      const double f_plus = objective().value();
      vals[i] = orig - epsilon;
      const double f_minus = objective().value();
      vals[i] = orig;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw std::runtime_error("finite_difference_check: non-finite objective");
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double a = analytic[li][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace anchorcorr

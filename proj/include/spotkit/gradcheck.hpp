#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spotkit/rng.hpp"
#include "spotkit/tensor.hpp"

namespace spotkit {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<tensor index>[<element>]"
};

struct GradCheckOptions {
  double step = 1e-5;
  // Gradients smaller than this are compared absolutely.
  double magnitude_floor = 1e-5;
  // 0 checks every element; otherwise a seeded random subset per tensor.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Compares analytic gradients of `loss_fn` against central differences.
///
/// `inputs` must be leaves with requires_grad set; their gradients are reset.
/// Relative error is |a - n| / max(|a|, |n|, magnitude_floor).
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                 const GradCheckOptions& opt = {}) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
  }

  GradCheckResult result;
  Rng rng(opt.seed);
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto values = inputs[ti].mutable_data();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_per_tensor && coords.size() > opt.max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_per_tensor);
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double up = loss_fn().item();
      values[i] = saved - opt.step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[ti][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.magnitude_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_rel_error || std::isnan(rel)) {
        result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        result.worst = std::to_string(ti) + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

}  // namespace spotkit

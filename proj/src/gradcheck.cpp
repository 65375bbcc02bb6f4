// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avsr {

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                Tensor<double> x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_grad: h must be positive");
  auto out = Tensor<double>::zeros(x.shape());
  auto& xv = x.vec();
  for (size_t i = 0; i < xv.size(); ++i) {
    const double orig = xv[i];
    xv[i] = orig + h;
    const double fp = f(x);
    xv[i] = orig - h;
    const double fm = f(x);
    xv[i] = orig;
    out.vec()[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor<double>>>& leaves,
                                double h, double tol, int64_t max_per_leaf) {
  if (!(h > 0.0)) throw ParameterError("check_gradients: h must be positive");
  for (auto [name, t] : leaves) t.zero_grad();
  loss_fn().backward();
  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };
  // Smallest derivative a central difference resolves at this loss magnitude.
  const double resolution = 1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(eval())) / h;
  GradCheckResult res;
  for (const auto& [name, leaf_ref] : leaves) {
    auto leaf = leaf_ref;
    const int64_t n = leaf.numel();
    const int64_t step = max_per_leaf > 0 && n > max_per_leaf ? (n + max_per_leaf - 1) / max_per_leaf : 1;
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < n; i += step) idx.push_back(i);
    std::vector<double> analytic, numeric;
    auto& xv = leaf.vec();
    for (int64_t i : idx) {
      analytic.push_back(leaf.has_grad() ? leaf.grad()[i] : 0.0);
      const double orig = xv[static_cast<size_t>(i)];
      xv[static_cast<size_t>(i)] = orig + h;
      const double fp = eval();
      xv[static_cast<size_t>(i)] = orig - h;
      const double fm = eval();
      xv[static_cast<size_t>(i)] = orig;
      numeric.push_back((fp - fm) / (2.0 * h));
    }
    double scale = 0.0;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    const double floor = std::max({1e-3 * scale, 1e-8, resolution});
    for (size_t j = 0; j < idx.size(); ++j) {
      const double a = analytic[j], b = numeric[j];
      const double abs_err = std::abs(a - b);
      const double rel = abs_err / std::max({std::abs(a), std::abs(b), floor});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (rel >= res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = name + "[" + std::to_string(idx[j]) + "]";
      }
    }
  }
  res.passed = res.max_rel_error < tol;
  return res;
}

}  // namespace avsr

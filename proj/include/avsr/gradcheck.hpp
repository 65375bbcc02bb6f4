// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avsr/tensor.hpp"

namespace avsr {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element,
/// evaluated in 64-bit. `x` is perturbed in place and restored.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                Tensor<double> x, double h = 1e-3);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "<leaf>[index]" of the largest relative error
  bool passed = false;
};

/// Runs loss_fn once with backward() and compares the gradient of every leaf
/// against finite differences of loss_fn. Relative error per element is
/// |a - b| / max(|a|, |b|, floor) where floor = 1e-3 * max|b| over the leaf,
/// at least 1e-8 and at least the difference resolution 1e4 * eps * max(1, |f|) / h,
/// so entries that are tiny relative to the leaf's gradient scale or below
/// round-off do not dominate. With max_per_leaf > 0 only that many
/// evenly strided entries of each leaf are differenced.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor<double>>>& leaves,
                                double h = 1e-3, double tol = 1e-3, int64_t max_per_leaf = 0);

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "avsr/rng.hpp"
#include "avsr/tensor.hpp"

namespace avsr::testing {

template <class T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  auto t = Tensor<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline std::vector<double> random_weights(int64_t n, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace avsr::testing

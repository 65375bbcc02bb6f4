// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference checks of every differentiable op and model component.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avsr/gradcheck.hpp"

namespace avsr {

struct GradCase {
  std::string module;
  std::string name;
  int trial = 0;
  GradCheckResult result;
};

/// ops, attention, audio, video, conformer, ctc, model.
const std::vector<std::string>& grad_suite_modules();

/// Runs `trials` randomized draws of every check in `module` ("all" for every
/// module) at relative tolerance 1e-3. Throws UsageError on an unknown
/// module or trials < 1.
std::vector<GradCase> run_grad_suite(const std::string& module, int trials, uint64_t seed = 0);

}  // namespace avsr

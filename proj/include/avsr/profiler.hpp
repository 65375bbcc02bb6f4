// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Analytic parameter and multiply-add accounting for a ModelConfig.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avsr/conformer.hpp"

namespace avsr {

/// Counting rules. Bump the version whenever any count changes.
inline constexpr const char* kFlopConvention =
    "avsr-flops/1: one multiply-add = 1; counts linear layers, convolutions, attention "
    "scores and context, relative-position projections and scores; excludes biases, "
    "normalisation, activations, softmax, pooling and residual additions";

struct CostRecord {
  std::string name;  // parameter path prefix, e.g. "audio_backend.block3"
  int64_t length = 0;  // sequence length seen by the module (frames for front-ends)
  int64_t params = 0;
  int64_t flops = 0;
  bool frontend = false;
};

struct CostReport {
  std::string convention = kFlopConvention;
  double input_seconds = 0;
  std::vector<CostRecord> records;
  int64_t frontend_params = 0, frontend_flops = 0;
  int64_t backend_params = 0, backend_flops = 0;
  int64_t total_params = 0, total_flops = 0;

  /// Aligned table with subtotals.
  std::string table() const;
  /// name,length,params,flops,frontend rows after a convention comment line.
  std::string csv() const;
};

/// Throws ParameterError when input_seconds <= 0.
CostReport profile(const ModelConfig& cfg, double input_seconds = 10.0);

/// Instantiates the model and returns one line per record whose parameter
/// count differs from the constructed tensors (empty when all agree).
std::vector<std::string> cross_check_params(const ModelConfig& cfg, const CostReport& report);

struct SweepVariant {
  AttentionVariant variant = AttentionVariant::kRegular;
  int64_t factor = 1;
  std::string label() const;
};

struct FlopSweepRecord {
  std::string variant;
  int64_t n = 0;
  int64_t flops = 0;
};

/// Audio back-end FLOPs at input length n with stage 1 attention replaced by
/// each variant. One record per (variant, n), variants outermost.
/// Throws ParameterError when either list is empty or any n < 1.
std::vector<FlopSweepRecord> flop_sweep(const ModelConfig& cfg, const std::vector<SweepVariant>& variants,
                                        const std::vector<int64_t>& n_range);
std::string sweep_csv(const std::vector<FlopSweepRecord>& records);

/// Multiply-adds of one Conformer block at input length n.
int64_t conformer_block_flops(int64_t n, int64_t d_in, int64_t d_out, int64_t stride,
                              const AttentionConfig& attn, int64_t kernel, int64_t expansion);

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "avsr/nn.hpp"

namespace avsr {

enum class AttentionVariant { kRegular, kGrouped, kPatch };

std::string variant_name(AttentionVariant v);
AttentionVariant parse_variant(const std::string& s);

struct AttentionConfig {
  int64_t d_model = 256;
  int64_t heads = 4;
  AttentionVariant variant = AttentionVariant::kRegular;
  int64_t group = 1;  // g, grouped variant only
  int64_t patch = 1;  // k, patch variant only
  int64_t n_max = 4096;

  int64_t head_dim() const { return d_model / heads; }
  /// Throws ConfigError on d % H != 0, g < 1, k < 1 or n_max < 1.
  void validate() const;
};

/// Sinusoidal encodings at offsets -(n-1) .. (n-1) scaled by `stride`:
/// row r holds pe((r - n + 1) * stride), shape [2n - 1, d].
template <class T>
Tensor<T> sinusoid_table(int64_t n, int64_t d, int64_t stride = 1);

/// Multi-head self-attention with relative sinusoidal positions. The same
/// parameter set serves all three variants, so a trained regular layer can be
/// evaluated as grouped or patch attention.
template <class T>
class MultiHeadAttention : public Module<T> {
 public:
  MultiHeadAttention(const AttentionConfig& cfg, Rng& rng);

  /// x: [n, d]. key_valid (optional, length n) marks padded frames.
  /// If weights is non-null it receives the [H, m, m] attention matrix at the
  /// attended length m.
  Tensor<T> forward(const Tensor<T>& x, const std::vector<bool>* key_valid = nullptr,
                    Tensor<T>* weights = nullptr) const;

  /// Same parameters, explicit variant (used for k=1 / g=1 equivalence checks).
  Tensor<T> regular(const Tensor<T>& x, const std::vector<bool>* key_valid = nullptr,
                    Tensor<T>* weights = nullptr) const;
  Tensor<T> grouped(const Tensor<T>& x, int64_t g, const std::vector<bool>* key_valid = nullptr,
                    Tensor<T>* weights = nullptr) const;
  Tensor<T> patched(const Tensor<T>& x, int64_t k, const std::vector<bool>* key_valid = nullptr,
                    Tensor<T>* weights = nullptr) const;

  const AttentionConfig& config() const { return cfg_; }
  Linear<T>& q_proj() { return *q_; }
  Linear<T>& k_proj() { return *k_; }
  Linear<T>& v_proj() { return *v_; }
  Linear<T>& out_proj() { return *o_; }
  Linear<T>& pos_proj() { return *pos_; }

 private:
  // Scaled dot-product over already projected q, k, v of shape [m, w] where w
  // is d * g; `stride` is the number of frames per attended position.
  Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int64_t g,
                   const std::vector<bool>* key_valid, Tensor<T>* weights) const;

  AttentionConfig cfg_;
  Linear<T>* q_;
  Linear<T>* k_;
  Linear<T>* v_;
  Linear<T>* o_;
  Linear<T>* pos_;
};

/// Multiply-add count of one attention layer at sequence length n, including
/// the Q, K, V and output projections. Softmax, biases and scaling excluded.
/// The relative-position score term is added only when include_rel_pos is set.
int64_t attention_flops(const AttentionConfig& cfg, int64_t n, bool include_rel_pos = false);

/// Reduce a frame mask to a mask over groups/patches of `k` frames: a group is
/// valid when any of its frames is.
std::vector<bool> pool_mask(const std::vector<bool>& valid, int64_t k);

}  // namespace avsr

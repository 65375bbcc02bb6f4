// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives. Every op takes and returns Tensor<T> and records
// a backward closure when any input requires a gradient. Shapes never
// broadcast except where stated (leading batch dims of matmul, bias rows).

#pragma once

#include <optional>
#include <vector>

#include "avsr/rng.hpp"
#include "avsr/tensor.hpp"

namespace avsr {

// Elementwise. Operands must have identical shapes.
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
/// x[..., d] + b[d]
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);
template <class T> Tensor<T> exp(const Tensor<T>& x);
template <class T> Tensor<T> log(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);
template <class T> Tensor<T> swish(const Tensor<T>& x);
template <class T> Tensor<T> relu(const Tensor<T>& x);
/// Gated linear unit over the last axis: first half * sigmoid(second half).
template <class T> Tensor<T> glu(const Tensor<T>& x);

// Reductions.
template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
/// Weighted sum: sum(x * w) with w a constant of the same shape.
template <class T> Tensor<T> dot_const(const Tensor<T>& x, const std::vector<T>& w);
/// Mean over the trailing `count` axes.
template <class T> Tensor<T> mean_trailing(const Tensor<T>& x, int count);

// Layout.
template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm);
template <class T> Tensor<T> transpose(const Tensor<T>& x, int a0, int a1);
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <class T> Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length);
/// Zero rows appended along axis 0 up to `rows`.
template <class T> Tensor<T> pad_rows(const Tensor<T>& x, int64_t rows);
/// Rows 0, stride, 2*stride, ... of a [n, d] tensor.
template <class T> Tensor<T> subsample_rows(const Tensor<T>& x, int64_t stride);

/// a[..., m, p] @ b[..., p, q]. Leading dims must match exactly or one side
/// may have none (rank 2), in which case it is shared across the batch.
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] @ w[in, out] + bias[out]; bias may be undefined.
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Numerically stable softmax along `axis`. A row whose entries are all -inf
/// raises NumericError.
template <class T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <class T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);

/// Sets scores[..., i, j] to -inf where key_valid[j] is false.
template <class T> Tensor<T> mask_keys(const Tensor<T>& scores, const std::vector<bool>& key_valid);

struct ConvSpec {
  std::vector<int64_t> stride;
  std::vector<int64_t> padding;
  int64_t groups = 1;
};

/// N-d convolution (N = 1, 2, 3). x: [batch, C_in, s1..sN];
/// w: [C_out, C_in / groups, k1..kN]; bias: [C_out] or undefined.
/// Output extent per axis = floor((in + 2 pad - kernel) / stride) + 1.
template <class T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const ConvSpec& spec);

/// Max pooling over the N trailing axes of [batch, C, s1..sN], padding with -inf.
template <class T>
Tensor<T> max_pool(const Tensor<T>& x, const std::vector<int64_t>& kernel,
                   const std::vector<int64_t>& stride, const std::vector<int64_t>& padding);

/// Time-major depthwise conv: x[n, d], w[d, k], bias[d] (optional).
template <class T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int64_t stride, int64_t padding);

/// Non-overlapping windows of k rows averaged; a trailing partial window is
/// averaged over its actual length. [n, d] -> [ceil(n/k), d].
template <class T> Tensor<T> avg_pool1d(const Tensor<T>& x, int64_t k);
/// Each row repeated k times then truncated to target_len rows.
template <class T> Tensor<T> upsample_nearest1d(const Tensor<T>& x, int64_t k, int64_t target_len);

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// Running statistics owned by a BatchNorm layer.
template <class T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
};

/// Batch norm with channels on `channel_axis`; statistics pool every other
/// axis. In training mode the running stats are updated with `momentum`
/// (new = (1 - m) * old + m * batch, unbiased variance).
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, int channel_axis, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormStats<T>& stats, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

/// Inverted dropout: kept entries scaled by 1/(1-p). Identity when !training.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training);

/// Relative position scores: out[h, i, j] = dot(q[h, i], e[h, j - i + n_max - 1]).
/// q: [H, n, dh], e: [H, 2 n_max - 1, dh]; requires n <= n_max.
template <class T>
Tensor<T> rel_scores(const Tensor<T>& q, const Tensor<T>& e, int64_t n_max);

/// Worker threads used by the BLAS backend.
void set_num_threads(int n);
/// AVSR_THREADS from the environment, else 1.
int default_num_threads();

/// Raw C += A * B on row-major buffers (OpenBLAS).
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, T beta = T(1));

}  // namespace avsr

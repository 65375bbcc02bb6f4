// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter containers and the small layers every model is assembled from.

#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avsr/ops.hpp"
#include "avsr/rng.hpp"

namespace avsr {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Base for anything owning parameters. Parameter names are dotted paths
/// built from the registration names of the enclosing modules.
template <class T>
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// Trainable tensors, depth-first in registration order.
  NamedTensors<T> named_parameters() const;
  /// Non-trainable state saved with checkpoints (batch-norm running stats).
  NamedTensors<T> named_buffers() const;
  int64_t num_parameters() const;

  void train(bool on = true);
  void eval() { train(false); }
  bool training() const { return training_; }

  /// Dropout draws come from this generator; set per step by the trainer.
  void set_dropout_rng(Rng* rng);

 protected:
  Tensor<T> register_parameter(const std::string& name, Tensor<T> t);
  Tensor<T> register_buffer(const std::string& name, Tensor<T> t);
  template <class M>
  M& register_module(const std::string& name, std::unique_ptr<M> m) {
    M& ref = *m;
    owned_.push_back(std::move(m));
    children_.emplace_back(name, &ref);
    return ref;
  }
  Rng* dropout_rng() const { return dropout_rng_; }

 private:
  void collect(const std::string& prefix, NamedTensors<T>& out, bool buffers) const;

  NamedTensors<T> params_;
  NamedTensors<T> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  std::vector<std::unique_ptr<Module>> owned_;
  bool training_ = true;
  Rng* dropout_rng_ = nullptr;
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <class T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, Rng& rng);

template <class T>
class Linear : public Module<T> {
 public:
  Linear(int64_t in, int64_t out, Rng& rng, bool bias = true);
  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight_, bias_); }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  int64_t in_features() const { return weight_.dim(0); }
  int64_t out_features() const { return weight_.dim(1); }

 private:
  Tensor<T> weight_;  // [in, out]
  Tensor<T> bias_;
};

template <class T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(int64_t d);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<T> gamma_, beta_;
};

template <class T>
class BatchNorm : public Module<T> {
 public:
  BatchNorm(int64_t channels, int channel_axis);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T>& gamma() { return gamma_; }

 private:
  int axis_;
  Tensor<T> gamma_, beta_;
  BatchNormStats<T> stats_;
};

template <class T>
class Conv : public Module<T> {
 public:
  /// kernel has one entry per spatial axis.
  Conv(int64_t cin, int64_t cout, std::vector<int64_t> kernel, ConvSpec spec, Rng& rng, bool bias);
  Tensor<T> forward(const Tensor<T>& x) const { return conv(x, weight_, bias_, spec_); }
  Tensor<T>& weight() { return weight_; }

 private:
  ConvSpec spec_;
  Tensor<T> weight_, bias_;
};

template <class T>
class DepthwiseConv1d : public Module<T> {
 public:
  DepthwiseConv1d(int64_t channels, int64_t kernel, int64_t stride, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  int64_t stride() const { return stride_; }

 private:
  int64_t kernel_, stride_;
  Tensor<T> weight_, bias_;
};

/// Zero a parameter set, e.g. to neutralize a residual branch in tests.
template <class T>
void zero_(Tensor<T>& t);

}  // namespace avsr

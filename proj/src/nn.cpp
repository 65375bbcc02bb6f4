// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/nn.hpp"

#include <cmath>

namespace avsr {

template <class T>
void Module<T>::collect(const std::string& prefix, NamedTensors<T>& out, bool buffers) const {
  for (const auto& [name, t] : buffers ? buffers_ : params_) out.emplace_back(prefix + name, t);
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out, buffers);
}

template <class T>
NamedTensors<T> Module<T>::named_parameters() const {
  NamedTensors<T> out;
  collect("", out, false);
  return out;
}

template <class T>
NamedTensors<T> Module<T>::named_buffers() const {
  NamedTensors<T> out;
  collect("", out, true);
  return out;
}

template <class T>
int64_t Module<T>::num_parameters() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <class T>
void Module<T>::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

template <class T>
void Module<T>::set_dropout_rng(Rng* rng) {
  dropout_rng_ = rng;
  for (auto& [name, child] : children_) child->set_dropout_rng(rng);
}

template <class T>
Tensor<T> Module<T>::register_parameter(const std::string& name, Tensor<T> t) {
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

template <class T>
Tensor<T> Module<T>::register_buffer(const std::string& name, Tensor<T> t) {
  buffers_.emplace_back(name, t);
  return t;
}

template <class T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
Linear<T>::Linear(int64_t in, int64_t out, Rng& rng, bool bias) {
  weight_ = this->register_parameter("weight", init_uniform<T>({in, out}, in, rng));
  if (bias) bias_ = this->register_parameter("bias", Tensor<T>::zeros({out}));
}

template <class T>
LayerNorm<T>::LayerNorm(int64_t d) {
  gamma_ = this->register_parameter("weight", Tensor<T>::full({d}, T(1)));
  beta_ = this->register_parameter("bias", Tensor<T>::zeros({d}));
}

template <class T>
BatchNorm<T>::BatchNorm(int64_t channels, int channel_axis) : axis_(channel_axis) {
  gamma_ = this->register_parameter("weight", Tensor<T>::full({channels}, T(1)));
  beta_ = this->register_parameter("bias", Tensor<T>::zeros({channels}));
  stats_.mean = this->register_buffer("running_mean", Tensor<T>::zeros({channels}));
  stats_.var = this->register_buffer("running_var", Tensor<T>::full({channels}, T(1)));
}

template <class T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x) {
  return batch_norm(x, axis_, gamma_, beta_, stats_, this->training());
}

template <class T>
Conv<T>::Conv(int64_t cin, int64_t cout, std::vector<int64_t> kernel, ConvSpec spec, Rng& rng,
              bool bias)
    : spec_(std::move(spec)) {
  Shape shape{cout, cin / spec_.groups};
  int64_t fan_in = cin / spec_.groups;
  for (auto k : kernel) {
    shape.push_back(k);
    fan_in *= k;
  }
  weight_ = this->register_parameter("weight", init_uniform<T>(shape, fan_in, rng));
  if (bias) bias_ = this->register_parameter("bias", Tensor<T>::zeros({cout}));
}

template <class T>
DepthwiseConv1d<T>::DepthwiseConv1d(int64_t channels, int64_t kernel, int64_t stride, Rng& rng)
    : kernel_(kernel), stride_(stride) {
  weight_ = this->register_parameter("weight", init_uniform<T>({channels, kernel}, kernel, rng));
  bias_ = this->register_parameter("bias", Tensor<T>::zeros({channels}));
}

template <class T>
Tensor<T> DepthwiseConv1d<T>::forward(const Tensor<T>& x) const {
  return depthwise_conv1d(x, weight_, bias_, stride_, (kernel_ - 1) / 2);
}

template <class T>
void zero_(Tensor<T>& t) {
  std::fill(t.vec().begin(), t.vec().end(), T(0));
}

#define AVSR_INSTANTIATE_NN(T)                                       \
  template class Module<T>;                                          \
  template class Linear<T>;                                          \
  template class LayerNorm<T>;                                       \
  template class BatchNorm<T>;                                       \
  template class Conv<T>;                                            \
  template class DepthwiseConv1d<T>;                                 \
  template Tensor<T> init_uniform<T>(Shape, int64_t, Rng&);          \
  template void zero_<T>(Tensor<T>&);

AVSR_INSTANTIATE_NN(float)
AVSR_INSTANTIATE_NN(double)

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/attention.hpp"

#include <cmath>

namespace avsr {

std::string variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kRegular: return "regular";
    case AttentionVariant::kGrouped: return "grouped";
    case AttentionVariant::kPatch: return "patch";
  }
  return "?";
}

AttentionVariant parse_variant(const std::string& s) {
  if (s == "regular") return AttentionVariant::kRegular;
  if (s == "grouped") return AttentionVariant::kGrouped;
  if (s == "patch") return AttentionVariant::kPatch;
  throw ConfigError("unknown attention variant '" + s + "' (expected regular, grouped or patch)");
}

void AttentionConfig::validate() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d_model) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (group < 1) throw ConfigError("attention: group size must be >= 1");
  if (patch < 1) throw ConfigError("attention: patch size must be >= 1");
  if (n_max < 1) throw ConfigError("attention: n_max must be >= 1");
}

template <class T>
Tensor<T> sinusoid_table(int64_t n, int64_t d, int64_t stride) {
  auto t = Tensor<T>::zeros({2 * n - 1, d});
  auto& v = t.vec();
  for (int64_t r = 0; r < 2 * n - 1; ++r) {
    const double pos = static_cast<double>((r - n + 1) * stride);
    for (int64_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      v[static_cast<size_t>(r * d + i)] = static_cast<T>(std::sin(pos * freq));
      if (i + 1 < d) v[static_cast<size_t>(r * d + i + 1)] = static_cast<T>(std::cos(pos * freq));
    }
  }
  return t;
}

std::vector<bool> pool_mask(const std::vector<bool>& valid, int64_t k) {
  const auto n = static_cast<int64_t>(valid.size());
  std::vector<bool> out(static_cast<size_t>((n + k - 1) / k), false);
  for (int64_t i = 0; i < n; ++i) {
    if (valid[static_cast<size_t>(i)]) out[static_cast<size_t>(i / k)] = true;
  }
  return out;
}

template <class T>
MultiHeadAttention<T>::MultiHeadAttention(const AttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg.d_model;
  q_ = &this->register_module("q_proj", std::make_unique<Linear<T>>(d, d, rng));
  k_ = &this->register_module("k_proj", std::make_unique<Linear<T>>(d, d, rng));
  v_ = &this->register_module("v_proj", std::make_unique<Linear<T>>(d, d, rng));
  o_ = &this->register_module("out_proj", std::make_unique<Linear<T>>(d, d, rng));
  pos_ = &this->register_module("pos_proj", std::make_unique<Linear<T>>(d, d, rng, false));
}

template <class T>
Tensor<T> MultiHeadAttention<T>::attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        int64_t g, const std::vector<bool>* key_valid,
                                        Tensor<T>* weights) const {
  const int64_t m = q.dim(0), w = q.dim(1), H = cfg_.heads, dh = w / H;
  if (key_valid) {
    if (static_cast<int64_t>(key_valid->size()) != m) {
      throw DimensionError("attention mask length " + std::to_string(key_valid->size()) +
                           " does not match sequence length " + std::to_string(m));
    }
    bool any = false;
    for (bool b : *key_valid) any = any || b;
    if (!any) throw InputError("attention: every key position is masked");
  }
  auto heads = [&](const Tensor<T>& t) { return permute(reshape(t, {t.dim(0), H, dh}), {1, 0, 2}); };
  auto qh = heads(q), kh = heads(k), vh = heads(v);
  // Relative positions: E[o] = pos_proj(pe(o * g)), tiled g times to width d * g.
  auto e = pos_->forward(sinusoid_table<T>(m, cfg_.d_model, g));
  if (g > 1) e = concat(std::vector<Tensor<T>>(static_cast<size_t>(g), e), 1);
  auto scores = add(matmul(qh, transpose(kh, 1, 2)), rel_scores(qh, heads(e), m));
  scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (key_valid) scores = mask_keys(scores, *key_valid);
  auto attn = softmax(scores, 2);
  if (weights) *weights = attn;
  auto out = matmul(attn, vh);
  return reshape(permute(out, {1, 0, 2}), {m, w});
}

template <class T>
Tensor<T> MultiHeadAttention<T>::regular(const Tensor<T>& x, const std::vector<bool>* key_valid,
                                         Tensor<T>* weights) const {
  return grouped(x, 1, key_valid, weights);
}

template <class T>
Tensor<T> MultiHeadAttention<T>::grouped(const Tensor<T>& x, int64_t g,
                                         const std::vector<bool>* key_valid,
                                         Tensor<T>* weights) const {
  if (g < 1) throw ParameterError("grouped attention: g must be >= 1");
  if (x.rank() != 2 || x.dim(1) != cfg_.d_model) {
    throw DimensionError("attention: expected (n, " + std::to_string(cfg_.d_model) + "), got " +
                         shape_str(x.shape()));
  }
  const int64_t n = x.dim(0), d = cfg_.d_model;
  if (n > cfg_.n_max) {
    throw ConfigError("attention: sequence length " + std::to_string(n) + " exceeds n_max " +
                      std::to_string(cfg_.n_max));
  }
  auto q = q_->forward(x), k = k_->forward(x), v = v_->forward(x);
  if (g == 1) return o_->forward(attend(q, k, v, 1, key_valid, weights));
  const int64_t m = (n + g - 1) / g;
  auto group = [&](const Tensor<T>& t) { return reshape(pad_rows(t, m * g), {m, d * g}); };
  std::vector<bool> gmask;
  if (key_valid) gmask = pool_mask(*key_valid, g);
  auto out = attend(group(q), group(k), group(v), g, key_valid ? &gmask : nullptr, weights);
  return o_->forward(slice(reshape(out, {m * g, d}), 0, 0, n));
}

template <class T>
Tensor<T> MultiHeadAttention<T>::patched(const Tensor<T>& x, int64_t k,
                                         const std::vector<bool>* key_valid,
                                         Tensor<T>* weights) const {
  if (k < 1) throw ParameterError("patch attention: k must be >= 1");
  const int64_t n = x.dim(0);
  if (n > cfg_.n_max) {
    throw ConfigError("attention: sequence length " + std::to_string(n) + " exceeds n_max " +
                      std::to_string(cfg_.n_max));
  }
  if (k == 1) return regular(x, key_valid, weights);
  std::vector<bool> pmask;
  if (key_valid) pmask = pool_mask(*key_valid, k);
  auto y = regular(avg_pool1d(x, k), key_valid ? &pmask : nullptr, weights);
  return upsample_nearest1d(y, k, n);
}

template <class T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& x, const std::vector<bool>* key_valid,
                                         Tensor<T>* weights) const {
  switch (cfg_.variant) {
    case AttentionVariant::kGrouped: return grouped(x, cfg_.group, key_valid, weights);
    case AttentionVariant::kPatch: return patched(x, cfg_.patch, key_valid, weights);
    case AttentionVariant::kRegular: break;
  }
  return regular(x, key_valid, weights);
}

int64_t attention_flops(const AttentionConfig& cfg, int64_t n, bool include_rel_pos) {
  if (n < 1) throw ParameterError("attention_flops: n must be >= 1");
  const int64_t d = cfg.d_model;
  switch (cfg.variant) {
    case AttentionVariant::kRegular:
      return 4 * n * d * d + 2 * n * n * d + (include_rel_pos ? n * (2 * n - 1) * d : 0);
    case AttentionVariant::kGrouped: {
      const int64_t g = cfg.group, m = (n + g - 1) / g;
      return 4 * n * d * d + 2 * m * m * d * g + (include_rel_pos ? m * (2 * m - 1) * d * g : 0);
    }
    case AttentionVariant::kPatch: {
      const int64_t m = (n + cfg.patch - 1) / cfg.patch;
      return 4 * m * d * d + 2 * m * m * d + (include_rel_pos ? m * (2 * m - 1) * d : 0);
    }
  }
  return 0;
}

template Tensor<float> sinusoid_table<float>(int64_t, int64_t, int64_t);
template Tensor<double> sinusoid_table<double>(int64_t, int64_t, int64_t);
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;

}  // namespace avsr

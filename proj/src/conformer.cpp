// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/conformer.hpp"

#include <algorithm>
#include <cctype>

namespace avsr {

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kVisual: return "visual";
    case Modality::kAudioVisual: return "audio-visual";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  if (s == "audio") return Modality::kAudio;
  if (s == "visual") return Modality::kVisual;
  if (s == "audio-visual") return Modality::kAudioVisual;
  throw ConfigError("unknown modality '" + s + "' (expected audio, visual or audio-visual)");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kAudioOnly: return "AO";
    case Mode::kVideoOnly: return "VO";
    case Mode::kAudioVisual: return "AV";
    case Mode::kMaskedAudio: return "AV-masked-audio";
    case Mode::kMaskedVideo: return "AV-masked-video";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  auto lower = [](std::string x) {
    for (auto& c : x) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return x;
  };
  for (Mode m : {Mode::kAudioOnly, Mode::kVideoOnly, Mode::kAudioVisual, Mode::kMaskedAudio,
                 Mode::kMaskedVideo}) {
    if (lower(s) == lower(mode_name(m))) return m;
  }
  throw UsageError("unknown mode '" + s + "' (expected AO, VO, AV, AV-masked-audio or AV-masked-video)");
}

namespace {

void validate_branch(const std::string& name, const std::vector<StageConfig>& stages,
                     const std::vector<int64_t>& inter, int64_t heads) {
  if (stages.empty()) throw ConfigError(name + ": at least one stage is required");
  int64_t total = 0, prev = 0;
  for (const auto& s : stages) {
    if (s.num_blocks < 1) throw ConfigError(name + ": every stage needs at least one block");
    if (s.d_model < prev) throw ConfigError(name + ": stage feature dims must be non-decreasing");
    if (s.d_model % heads != 0) {
      throw ConfigError(name + ": stage dim " + std::to_string(s.d_model) +
                        " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (s.factor < 1) throw ConfigError(name + ": patch/group size must be >= 1");
    prev = s.d_model;
    total += s.num_blocks;
  }
  for (auto b : inter) {
    if (b < 1 || b > total) {
      throw ConfigError(name + ": InterCTC block " + std::to_string(b) + " outside 1.." +
                        std::to_string(total));
    }
  }
}

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double p, bool training, Rng* rng) {
  if (!training || p == 0.0) return x;
  if (!rng) throw UsageError("dropout in training mode needs a generator (set_dropout_rng)");
  return dropout(x, p, *rng, true);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocabulary must contain at least the blank and one token");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("Conv Kernel Size must be odd");
  if (heads < 1) throw ConfigError("Attention Heads must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (inter_ctc_weight < 0.0 || inter_ctc_weight > 1.0) throw ConfigError("InterCTC weight must lie in [0, 1]");
  if (has_audio()) validate_branch("audio back-end", audio_stages, audio_inter, heads);
  if (has_video()) validate_branch("visual back-end", visual_stages, visual_inter, heads);
  if (modality == Modality::kAudioVisual) {
    validate_branch("audio-visual encoder", {av_stage}, av_inter, heads);
    if (audio_stages.back().d_model != av_stage.d_model ||
        visual_stages.back().d_model != av_stage.d_model) {
      throw ConfigError("audio and visual back-ends must end at the audio-visual encoder width");
    }
  }
}

ModelConfig full_config(Modality m) {
  ModelConfig c;
  c.modality = m;
  return c;
}

ModelConfig tiny_config(Modality m, int64_t d, int64_t vocab) {
  ModelConfig c;
  c.modality = m;
  c.vocab_size = vocab;
  c.heads = 2;
  c.audio_stem_filters = 2;
  c.video = {2, {2, 4}, d};
  c.crop = 16;
  c.audio_stages = {{1, d, AttentionVariant::kPatch, 2}, {1, d, AttentionVariant::kPatch, 1},
                    {1, d, AttentionVariant::kPatch, 1}};
  c.visual_stages = {{1, d, AttentionVariant::kPatch, 1}, {1, d, AttentionVariant::kPatch, 1}};
  c.av_stage = {1, d, AttentionVariant::kPatch, 1};
  c.audio_inter = {2};
  c.visual_inter = {1};
  c.av_inter = {1};
  return c;
}

// ---------------------------------------------------------------- blocks

template <class T>
FeedForward<T>::FeedForward(int64_t d, int64_t expansion, double dropout, Rng& rng) : p_(dropout) {
  norm_ = &this->register_module("norm", std::make_unique<LayerNorm<T>>(d));
  l1_ = &this->register_module("linear1", std::make_unique<Linear<T>>(d, expansion * d, rng));
  l2_ = &this->register_module("linear2", std::make_unique<Linear<T>>(expansion * d, d, rng));
}

template <class T>
Tensor<T> FeedForward<T>::forward(const Tensor<T>& x) const {
  auto h = maybe_dropout(swish(l1_->forward(norm_->forward(x))), p_, this->training(), this->dropout_rng());
  return maybe_dropout(l2_->forward(h), p_, this->training(), this->dropout_rng());
}

template <class T>
ConvModule<T>::ConvModule(int64_t d_in, int64_t d_out, int64_t kernel, int64_t stride,
                          double dropout, Rng& rng)
    : p_(dropout) {
  norm_ = &this->register_module("norm", std::make_unique<LayerNorm<T>>(d_in));
  pw1_ = &this->register_module("pointwise1", std::make_unique<Linear<T>>(d_in, 2 * d_out, rng));
  dw_ = &this->register_module("depthwise",
                               std::make_unique<DepthwiseConv1d<T>>(d_out, kernel, stride, rng));
  bn_ = &this->register_module("batch_norm", std::make_unique<BatchNorm<T>>(d_out, 1));
  pw2_ = &this->register_module("pointwise2", std::make_unique<Linear<T>>(d_out, d_out, rng));
}

template <class T>
Tensor<T> ConvModule<T>::forward(const Tensor<T>& x) {
  auto h = glu(pw1_->forward(norm_->forward(x)));
  h = swish(bn_->forward(dw_->forward(h)));
  return maybe_dropout(pw2_->forward(h), p_, this->training(), this->dropout_rng());
}

template <class T>
ConformerBlock<T>::ConformerBlock(int64_t d_in, int64_t d_out, int64_t stride,
                                  const AttentionConfig& attn, int64_t kernel, int64_t expansion,
                                  double dropout, Rng& rng)
    : stride_(stride), p_(dropout) {
  ff1_ = &this->register_module("ffn1", std::make_unique<FeedForward<T>>(d_in, expansion, dropout, rng));
  attn_norm_ = &this->register_module("attn_norm", std::make_unique<LayerNorm<T>>(d_in));
  auto acfg = attn;
  acfg.d_model = d_in;
  mhsa_ = &this->register_module("mhsa", std::make_unique<MultiHeadAttention<T>>(acfg, rng));
  conv_ = &this->register_module(
      "conv", std::make_unique<ConvModule<T>>(d_in, d_out, kernel, stride, dropout, rng));
  if (stride != 1 || d_in != d_out) {
    residual_ = &this->register_module("residual", std::make_unique<Linear<T>>(d_in, d_out, rng));
  }
  ff2_ = &this->register_module("ffn2", std::make_unique<FeedForward<T>>(d_out, expansion, dropout, rng));
  norm_ = &this->register_module("norm", std::make_unique<LayerNorm<T>>(d_out));
}

template <class T>
Tensor<T> ConformerBlock<T>::forward(const Tensor<T>& x_in) {
  const T half(0.5);
  auto x = add(x_in, scale(ff1_->forward(x_in), half));
  auto a = mhsa_->forward(attn_norm_->forward(x));
  x = add(x, maybe_dropout(a, p_, this->training(), this->dropout_rng()));
  auto skip = residual_ ? residual_->forward(subsample_rows(x, stride_)) : x;
  x = add(skip, conv_->forward(x));
  x = add(x, scale(ff2_->forward(x), half));
  return norm_->forward(x);
}

template <class T>
std::vector<Linear<T>*> ConformerBlock<T>::branch_outputs() {
  return {&ff1_->out(), &mhsa_->out_proj(), &conv_->out(), &ff2_->out()};
}

template <class T>
InterCtc<T>::InterCtc(int64_t d, int64_t vocab, Rng& rng) {
  to_ = &this->register_module("to_vocab", std::make_unique<Linear<T>>(d, vocab, rng));
  from_ = &this->register_module("from_vocab", std::make_unique<Linear<T>>(vocab, d, rng));
}

template <class T>
Tensor<T> InterCtc<T>::forward(Tensor<T>& x) const {
  auto logp = log_softmax(to_->forward(x), 1);
  x = add(x, from_->forward(exp(logp)));
  return logp;
}

// ---------------------------------------------------------------- encoder

template <class T>
Encoder<T>::Encoder(const std::string& tag, const std::vector<StageConfig>& stages,
                    const std::vector<int64_t>& inter_blocks, const ModelConfig& cfg, Rng& rng)
    : tag_(tag), inter_at_(inter_blocks) {
  std::sort(inter_at_.begin(), inter_at_.end());
  int64_t index = 0;
  for (size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    AttentionConfig acfg;
    acfg.heads = cfg.heads;
    acfg.variant = st.attention;
    acfg.group = acfg.patch = st.factor;
    acfg.n_max = cfg.n_max;
    for (int64_t b = 0; b < st.num_blocks; ++b) {
      ++index;
      const bool transition = s + 1 < stages.size() && b + 1 == st.num_blocks;
      const int64_t d_out = transition ? stages[s + 1].d_model : st.d_model;
      blocks_.push_back(&this->register_module(
          "block" + std::to_string(index),
          std::make_unique<ConformerBlock<T>>(st.d_model, d_out, transition ? 2 : 1, acfg,
                                              cfg.conv_kernel, cfg.ffn_expansion, cfg.dropout,
                                              rng)));
      if (std::binary_search(inter_at_.begin(), inter_at_.end(), index)) {
        inter_.push_back(&this->register_module(
            "inter_ctc" + std::to_string(index),
            std::make_unique<InterCtc<T>>(d_out, cfg.vocab_size, rng)));
      }
    }
    stage_ends_.push_back(index);
  }
}

template <class T>
Tensor<T> Encoder<T>::forward(const Tensor<T>& x_in, std::vector<TaggedPosteriors<T>>& inters) {
  auto x = x_in;
  size_t next_inter = 0;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i]->forward(x);
    if (next_inter < inter_at_.size() && inter_at_[next_inter] == static_cast<int64_t>(i + 1)) {
      inters.push_back({tag_ + "." + std::to_string(i + 1), inter_[next_inter]->forward(x)});
      ++next_inter;
    }
  }
  return x;
}

template <class T>
std::vector<int64_t> Encoder<T>::stage_lengths(int64_t n) const {
  std::vector<int64_t> out;
  size_t stage = 0;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    n = ConformerBlock<T>::output_length(n, blocks_[i]->stride());
    if (static_cast<int64_t>(i + 1) == stage_ends_[stage]) {
      out.push_back(n);
      ++stage;
    }
  }
  return out;
}

template <class T>
int64_t Encoder<T>::output_length(int64_t n) const {
  return stage_lengths(n).back();
}

template <class T>
Fusion<T>::Fusion(int64_t d, int64_t expansion, Rng& rng) {
  l1_ = &this->register_module("linear1", std::make_unique<Linear<T>>(2 * d, expansion * d, rng));
  l2_ = &this->register_module("linear2", std::make_unique<Linear<T>>(expansion * d, d, rng));
}

template <class T>
Tensor<T> Fusion<T>::forward(const Tensor<T>& a, const Tensor<T>& v) const {
  const int64_t n = std::min(a.dim(0), v.dim(0));
  auto x = concat<T>({slice(a, 0, 0, n), slice(v, 0, 0, n)}, 1);
  return l2_->forward(swish(l1_->forward(x)));
}

// ---------------------------------------------------------------- model

template <class T>
AvsrModel<T>::AvsrModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  int64_t final_dim = 0;
  if (cfg_.has_audio()) {
    audio_fe_ = &this->register_module(
        "audio_frontend", std::make_unique<AudioStem<T>>(cfg_.audio_stem_filters,
                                                         cfg_.audio_stages.front().d_model, rng,
                                                         cfg_.mel_bins));
    audio_enc_ = &this->register_module(
        "audio_backend",
        std::make_unique<Encoder<T>>("audio", cfg_.audio_stages, cfg_.audio_inter, cfg_, rng));
    final_dim = cfg_.audio_stages.back().d_model;
  }
  if (cfg_.has_video()) {
    auto vcfg = cfg_.video;
    vcfg.out_dim = cfg_.visual_stages.front().d_model;
    video_fe_ = &this->register_module("video_frontend", std::make_unique<VideoFrontend<T>>(vcfg, rng));
    visual_enc_ = &this->register_module(
        "visual_backend",
        std::make_unique<Encoder<T>>("visual", cfg_.visual_stages, cfg_.visual_inter, cfg_, rng));
    final_dim = cfg_.visual_stages.back().d_model;
  }
  if (cfg_.modality == Modality::kAudioVisual) {
    fusion_ = &this->register_module(
        "fusion", std::make_unique<Fusion<T>>(cfg_.av_stage.d_model, cfg_.ffn_expansion, rng));
    av_enc_ = &this->register_module(
        "av_encoder", std::make_unique<Encoder<T>>("av", std::vector<StageConfig>{cfg_.av_stage},
                                                   cfg_.av_inter, cfg_, rng));
    final_dim = cfg_.av_stage.d_model;
  }
  head_ = &this->register_module("head", std::make_unique<Linear<T>>(final_dim, cfg_.vocab_size, rng));
}

template <class T>
Mode AvsrModel<T>::default_mode() const {
  switch (cfg_.modality) {
    case Modality::kAudio: return Mode::kAudioOnly;
    case Modality::kVisual: return Mode::kVideoOnly;
    case Modality::kAudioVisual: break;
  }
  return Mode::kAudioVisual;
}

template <class T>
Tensor<T> AvsrModel<T>::audio_features(const Tensor<T>& mel) {
  return audio_fe_->forward(mel);
}

template <class T>
Tensor<T> AvsrModel<T>::video_features(const Tensor<T>& frames) {
  return video_fe_->forward(frames);
}

template <class T>
ModelOutput<T> AvsrModel<T>::forward(const ModelInput<T>& in, Mode mode) {
  if (!in.mel && !in.frames) throw UsageError("model forward: neither audio nor video given");
  const bool av = cfg_.modality == Modality::kAudioVisual;
  const bool av_mode = mode == Mode::kAudioVisual || mode == Mode::kMaskedAudio || mode == Mode::kMaskedVideo;
  if (av != av_mode || (mode == Mode::kAudioOnly && !cfg_.has_audio()) ||
      (mode == Mode::kVideoOnly && !cfg_.has_video())) {
    throw UsageError("mode " + mode_name(mode) + " does not apply to a " +
                     modality_name(cfg_.modality) + " model");
  }
  std::optional<Tensor<T>> a, v;
  const bool need_audio = mode == Mode::kAudioOnly || mode == Mode::kAudioVisual || mode == Mode::kMaskedVideo;
  const bool need_video = mode == Mode::kVideoOnly || mode == Mode::kAudioVisual || mode == Mode::kMaskedAudio;
  if (need_audio && !in.mel) throw UsageError("mode " + mode_name(mode) + " needs audio input");
  if (need_video && !in.frames) throw UsageError("mode " + mode_name(mode) + " needs video input");
  if (need_audio) a = audio_features(*in.mel);
  if (need_video) v = video_features(*in.frames);
  // A masked modality enters its back-end as zeros at the front-end output
  // rate (audio runs at twice the video frame rate).
  if (mode == Mode::kMaskedAudio) {
    const int64_t n = in.mel ? (in.mel->dim(1) - 1) / 2 + 1 : 2 * v->dim(0);
    a = Tensor<T>::zeros({n, cfg_.audio_stages.front().d_model});
  }
  if (mode == Mode::kMaskedVideo) {
    const int64_t n = in.frames ? in.frames->dim(0) : (a->dim(0) + 1) / 2;
    v = Tensor<T>::zeros({n, cfg_.visual_stages.front().d_model});
  }
  return forward_features(a, v);
}

template <class T>
ModelOutput<T> AvsrModel<T>::forward_features(const std::optional<Tensor<T>>& audio_feat,
                                              const std::optional<Tensor<T>>& video_feat) {
  ModelOutput<T> out;
  std::optional<Tensor<T>> a, v;
  if (audio_feat) {
    if (!audio_enc_) throw UsageError("this model has no audio branch");
    a = audio_enc_->forward(*audio_feat, out.inters);
  }
  if (video_feat) {
    if (!visual_enc_) throw UsageError("this model has no visual branch");
    v = visual_enc_->forward(*video_feat, out.inters);
  }
  Tensor<T> x;
  if (cfg_.modality == Modality::kAudioVisual) {
    if (!a || !v) throw UsageError("audio-visual model needs both branch inputs");
    x = av_enc_->forward(fusion_->forward(*a, *v), out.inters);
  } else {
    x = a ? *a : *v;
  }
  out.log_probs = log_softmax(head_->forward(x), 1);
  out.length = out.log_probs.dim(0);
  return out;
}

template <class T>
typename AvsrModel<T>::ParamBreakdown AvsrModel<T>::param_breakdown() const {
  ParamBreakdown b;
  if (audio_fe_) b.audio_frontend = audio_fe_->num_parameters();
  if (video_fe_) b.video_frontend = video_fe_->num_parameters();
  if (audio_enc_) b.audio_backend = audio_enc_->num_parameters();
  if (visual_enc_) b.visual_backend = visual_enc_->num_parameters();
  if (fusion_) b.fusion = fusion_->num_parameters();
  if (av_enc_) b.av_encoder = av_enc_->num_parameters();
  const int64_t head = head_->num_parameters();
  switch (cfg_.modality) {
    case Modality::kAudio: b.audio_backend += head; break;
    case Modality::kVisual: b.visual_backend += head; break;
    case Modality::kAudioVisual: b.av_encoder += head; break;
  }
  b.total = this->num_parameters();
  return b;
}

#define AVSR_INSTANTIATE_CONFORMER(T) \
  template class FeedForward<T>;      \
  template class ConvModule<T>;       \
  template class ConformerBlock<T>;   \
  template class InterCtc<T>;         \
  template class Encoder<T>;          \
  template class Fusion<T>;           \
  template class AvsrModel<T>;

AVSR_INSTANTIATE_CONFORMER(float)
AVSR_INSTANTIATE_CONFORMER(double)

}  // namespace avsr

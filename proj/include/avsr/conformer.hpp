// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avsr/attention.hpp"
#include "avsr/audio.hpp"
#include "avsr/video.hpp"

namespace avsr {

struct StageConfig {
  int64_t num_blocks = 1;
  int64_t d_model = 256;
  AttentionVariant attention = AttentionVariant::kPatch;
  int64_t factor = 1;  // patch size k or group size g
};

enum class Modality { kAudio, kVisual, kAudioVisual };
std::string modality_name(Modality m);
Modality parse_modality(const std::string& s);

enum class Mode { kAudioOnly, kVideoOnly, kAudioVisual, kMaskedAudio, kMaskedVideo };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct ModelConfig {
  Modality modality = Modality::kAudioVisual;
  int64_t vocab_size = 256;
  double inter_ctc_weight = 0.5;  // lambda
  double dropout = 0.1;
  int64_t heads = 4;
  int64_t conv_kernel = 15;
  int64_t ffn_expansion = 4;
  int64_t n_max = 4096;

  // Audio front-end.
  int64_t mel_bins = kMelBins;
  int64_t audio_stem_filters = 180;
  // Visual front-end.
  VideoFrontendConfig video;
  int64_t crop = 88;

  std::vector<StageConfig> audio_stages = {{5, 180, AttentionVariant::kPatch, 3},
                                           {6, 256, AttentionVariant::kPatch, 1},
                                           {1, 360, AttentionVariant::kPatch, 1}};
  std::vector<StageConfig> visual_stages = {{6, 256, AttentionVariant::kPatch, 1},
                                            {1, 360, AttentionVariant::kPatch, 1}};
  StageConfig av_stage = {5, 360, AttentionVariant::kPatch, 1};
  std::vector<int64_t> audio_inter = {8, 11};
  std::vector<int64_t> visual_inter = {3, 6};
  std::vector<int64_t> av_inter = {2};

  bool has_audio() const { return modality != Modality::kVisual; }
  bool has_video() const { return modality != Modality::kAudio; }
  /// Throws ConfigError on inconsistent dims, kernels or Inter-CTC indices.
  void validate() const;
};

/// Full-size audio-only, visual-only and audio-visual configurations.
ModelConfig full_config(Modality m);

/// One block per stage at width d, small front-ends, 16x16 crops. Used for
/// gradient checks and as the starting point of desk-scale training configs.
ModelConfig tiny_config(Modality m, int64_t d = 16, int64_t vocab = 5);

template <class T>
class FeedForward : public Module<T> {
 public:
  FeedForward(int64_t d, int64_t expansion, double dropout, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  Linear<T>& out() { return *l2_; }

 private:
  double p_;
  LayerNorm<T>* norm_;
  Linear<T>* l1_;
  Linear<T>* l2_;
};

/// Pointwise-GLU, depthwise conv (optionally strided), batch norm, swish,
/// pointwise. Maps d_in to d_out.
template <class T>
class ConvModule : public Module<T> {
 public:
  ConvModule(int64_t d_in, int64_t d_out, int64_t kernel, int64_t stride, double dropout, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Linear<T>& out() { return *pw2_; }

 private:
  double p_;
  LayerNorm<T>* norm_;
  Linear<T>* pw1_;
  DepthwiseConv1d<T>* dw_;
  BatchNorm<T>* bn_;
  Linear<T>* pw2_;
};

/// Macaron Conformer block. With stride 2 and d_out != d_in it becomes the
/// transition block that closes a stage: FFN and attention run at d_in, the
/// convolution module downsamples and widens, and the residual path is a
/// strided pointwise projection.
template <class T>
class ConformerBlock : public Module<T> {
 public:
  ConformerBlock(int64_t d_in, int64_t d_out, int64_t stride, const AttentionConfig& attn,
                 int64_t kernel, int64_t expansion, double dropout, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);

  int64_t stride() const { return stride_; }
  static int64_t output_length(int64_t n, int64_t stride) { return (n + stride - 1) / stride; }

  /// Final projections of the four residual branches.
  std::vector<Linear<T>*> branch_outputs();
  MultiHeadAttention<T>& attention() { return *mhsa_; }

 private:
  int64_t stride_;
  double p_;
  FeedForward<T>* ff1_;
  LayerNorm<T>* attn_norm_;
  MultiHeadAttention<T>* mhsa_;
  ConvModule<T>* conv_;
  Linear<T>* residual_ = nullptr;
  FeedForward<T>* ff2_;
  LayerNorm<T>* norm_;
};

/// Intermediate CTC head whose posteriors are fed back into the residual stream.
template <class T>
class InterCtc : public Module<T> {
 public:
  InterCtc(int64_t d, int64_t vocab, Rng& rng);
  /// Returns log-posteriors; x is updated to x + from_vocab(softmax).
  Tensor<T> forward(Tensor<T>& x) const;
  Linear<T>& from_vocab() { return *from_; }

 private:
  Linear<T>* to_;
  Linear<T>* from_;
};

template <class T>
struct TaggedPosteriors {
  std::string tag;
  Tensor<T> log_probs;  // [n, V]
};

/// A chain of stages with globally numbered blocks and Inter-CTC after the
/// listed blocks.
template <class T>
class Encoder : public Module<T> {
 public:
  Encoder(const std::string& tag, const std::vector<StageConfig>& stages,
          const std::vector<int64_t>& inter_blocks, const ModelConfig& cfg, Rng& rng);
  /// x: [n, stages[0].d_model] -> [n', stages.back().d_model].
  Tensor<T> forward(const Tensor<T>& x, std::vector<TaggedPosteriors<T>>& inters);

  /// Exact output length for input length n (ceil-halving per transition).
  int64_t output_length(int64_t n) const;
  /// Lengths after each stage.
  std::vector<int64_t> stage_lengths(int64_t n) const;
  std::vector<ConformerBlock<T>*>& blocks() { return blocks_; }
  std::vector<InterCtc<T>*>& inter_modules() { return inter_; }

 private:
  std::string tag_;
  std::vector<int64_t> stage_ends_;  // global index of each stage's last block
  std::vector<ConformerBlock<T>*> blocks_;
  std::vector<int64_t> inter_at_;
  std::vector<InterCtc<T>*> inter_;
};

template <class T>
class Fusion : public Module<T> {
 public:
  Fusion(int64_t d, int64_t expansion, Rng& rng);
  /// Concatenates on features after truncating both to the shorter length.
  Tensor<T> forward(const Tensor<T>& a, const Tensor<T>& v) const;
  Linear<T>& out() { return *l2_; }

 private:
  Linear<T>* l1_;
  Linear<T>* l2_;
};

/// Model inputs after feature extraction and augmentation.
template <class T>
struct ModelInput {
  std::optional<Tensor<T>> mel;     // [mel_bins, F]
  std::optional<Tensor<T>> frames;  // [T_v, crop, crop]
};

template <class T>
struct ModelOutput {
  Tensor<T> log_probs;  // final [n, V]
  std::vector<TaggedPosteriors<T>> inters;
  int64_t length = 0;
};

template <class T>
class AvsrModel : public Module<T> {
 public:
  AvsrModel(const ModelConfig& cfg, Rng& rng);

  ModelOutput<T> forward(const ModelInput<T>& in, Mode mode);
  /// Back-end only: front-end features in, posteriors out. A masked modality
  /// is passed as zeros of the right shape.
  ModelOutput<T> forward_features(const std::optional<Tensor<T>>& audio_feat,
                                  const std::optional<Tensor<T>>& video_feat);

  /// Front-end outputs ([n_a, d_a] / [T_v, d_v]).
  Tensor<T> audio_features(const Tensor<T>& mel);
  Tensor<T> video_features(const Tensor<T>& frames);

  const ModelConfig& config() const { return cfg_; }
  Mode default_mode() const;

  AudioStem<T>* audio_frontend() { return audio_fe_; }
  VideoFrontend<T>* video_frontend() { return video_fe_; }
  Encoder<T>* audio_encoder() { return audio_enc_; }
  Encoder<T>* visual_encoder() { return visual_enc_; }
  Encoder<T>* av_encoder() { return av_enc_; }
  Fusion<T>* fusion() { return fusion_; }
  Linear<T>& head() { return *head_; }

  /// Parameter counts per component (front-ends, each back-end, fusion).
  /// Back-end counts include their Inter-CTC modules; the final CTC head is
  /// attributed to the last encoder.
  struct ParamBreakdown {
    int64_t audio_frontend = 0, video_frontend = 0;
    int64_t audio_backend = 0, visual_backend = 0, av_encoder = 0, fusion = 0;
    int64_t total = 0;
  };
  ParamBreakdown param_breakdown() const;

 private:
  ModelConfig cfg_;
  AudioStem<T>* audio_fe_ = nullptr;
  VideoFrontend<T>* video_fe_ = nullptr;
  Encoder<T>* audio_enc_ = nullptr;
  Encoder<T>* visual_enc_ = nullptr;
  Fusion<T>* fusion_ = nullptr;
  Encoder<T>* av_enc_ = nullptr;
  Linear<T>* head_ = nullptr;
};

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Noise mixing, the synthetic token task, and utterance feature extraction.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "avsr/audio.hpp"
#include "avsr/conformer.hpp"
#include "avsr/ctc.hpp"
#include "avsr/video.hpp"

namespace avsr {

enum class NoiseKind { kWaveform, kWhite, kBabble };

/// kWaveform and kBabble mix `noise` (tiled when shorter than the signal);
/// kWhite draws unit-variance Gaussian noise from the generator.
struct NoiseMixSpec {
  NoiseKind kind = NoiseKind::kWhite;
  std::vector<float> noise;
  double snr_db = 0.0;  // +inf leaves the signal untouched
};

struct MixResult {
  Waveform mixed;
  double scale = 0.0;          // factor applied to the noise
  double clip_fraction = 0.0;  // samples clipped to [-1, 1]
};

double mean_power(const std::vector<float>& x);
/// 10 log10(P_signal / P_noise).
double measure_snr_db(const std::vector<float>& signal, const std::vector<float>& noise);

/// Throws InputError on a zero-power signal or noise, UsageError when a
/// waveform/babble spec carries no noise samples.
MixResult mix_noise(const Waveform& signal, const NoiseMixSpec& spec, Rng& rng);

struct ToyTaskSpec {
  int64_t vocab_size = 12;  // including the blank
  int64_t min_tokens = 2;
  int64_t max_tokens = 4;
  int64_t frames_per_token = 4;  // video frames; 640 audio samples each
  int64_t gap_frames = 1;
  int64_t image_size = 16;
  double tone_amplitude = 0.3;
  double noise_floor = 0.01;
  uint64_t seed = 0;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

/// One recording with its transcript. Audio and video cover the same span.
struct Utterance {
  Waveform audio;
  VideoClip video;
  LabelSeq labels;
};

inline constexpr int64_t kSamplesPerVideoFrame = kSampleRate / kVideoFps;

Vocab toy_vocab(const ToyTaskSpec& spec);
/// Tone assigned to a token id in [1, vocab_size).
double toy_token_frequency(const ToyTaskSpec& spec, int64_t token);
/// Flip-symmetric grating assigned to a token, values in [-1, 1], [size, size].
std::vector<float> toy_token_pattern(const ToyTaskSpec& spec, int64_t token);

Utterance make_toy_utterance(const ToyTaskSpec& spec, Rng& rng);
std::vector<Utterance> make_toy_batch(const ToyTaskSpec& spec, Rng& rng, int64_t count);
/// Sum of `copies` randomly shifted toy utterances, num_samples long.
std::vector<float> toy_babble(const ToyTaskSpec& spec, Rng& rng, int64_t num_samples, int copies = 6);

struct FeatureOptions {
  bool training = false;
  bool spec_augment = true;
  bool video_augment = true;
  SpecAugmentConfig spec_augment_cfg;
  std::optional<NoiseMixSpec> noise;
};

/// Log-mel and cropped frames for the modalities the model consumes.
ModelInput<float> make_input(const Utterance& utt, const ModelConfig& cfg, const FeatureOptions& opt,
                             Rng& rng);

}  // namespace avsr

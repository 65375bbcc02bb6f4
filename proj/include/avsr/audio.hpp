// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "avsr/nn.hpp"

namespace avsr {

inline constexpr int kSampleRate = 16000;
inline constexpr int kWindow = 400;
inline constexpr int kHop = 160;
inline constexpr int kFftSize = 512;
inline constexpr int kFreqBins = kFftSize / 2 + 1;
inline constexpr int kMelBins = 80;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

/// Mono 16-bit PCM only; any other sample rate or layout is an InputError.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

/// In-place radix-2 complex FFT; size must be a power of two.
void fft(std::vector<double>& re, std::vector<double>& im);

/// Magnitude spectrogram [257, T_a/160 + 1], Hann(400), reflect-padded by 200.
Tensor<float> stft(const std::vector<float>& samples);

/// Triangular mel filters [80, 257] spanning 0-8000 Hz.
const Tensor<float>& mel_filterbank();

/// log(filterbank * spec + 1e-6): [80, F].
Tensor<float> mel_project(const Tensor<float>& spec);

/// Waveform to log-mel features.
Tensor<float> log_mel(const Waveform& w);

struct SpecAugmentConfig {
  int freq_masks = 2;
  int max_freq_width = 27;
  int time_masks = 5;
  double max_time_ratio = 0.05;
};

/// Zeroes random frequency bands and time spans of a [bins, frames] feature map.
/// Identity when training is false.
Tensor<float> spec_augment(const Tensor<float>& mel, Rng& rng, bool training,
                           const SpecAugmentConfig& cfg = {});

/// Conv2d 3x3 stride 2 (pad 1) over the mel image, then a linear projection of
/// the channel-major, frequency-minor flattening. Output is time-major.
template <class T>
class AudioStem : public Module<T> {
 public:
  AudioStem(int64_t filters, int64_t out_dim, Rng& rng, int64_t mel_bins = kMelBins);
  /// mel: [mel_bins, F] -> [(F - 1) / 2 + 1, out_dim].
  Tensor<T> forward(const Tensor<T>& mel) const;

  static int64_t output_frames(int64_t num_samples) { return num_samples / 320 + 1; }

 private:
  int64_t mel_bins_;
  Conv<T>* conv_;
  Linear<T>* proj_;
};

}  // namespace avsr

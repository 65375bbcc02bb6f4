// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace avsr {

double mean_power(const std::vector<float>& x) {
  if (x.empty()) return 0.0;
  double acc = 0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(x.size());
}

double measure_snr_db(const std::vector<float>& signal, const std::vector<float>& noise) {
  return 10.0 * std::log10(mean_power(signal) / mean_power(noise));
}

MixResult mix_noise(const Waveform& signal, const NoiseMixSpec& spec, Rng& rng) {
  const double ps = mean_power(signal.samples);
  if (!(ps > 0)) throw InputError("mix_noise: signal has zero power");
  MixResult out;
  out.mixed = signal;
  if (std::isinf(spec.snr_db) && spec.snr_db > 0) return out;
  if (std::isnan(spec.snr_db)) throw ParameterError("mix_noise: SNR is NaN");

  const size_t n = signal.samples.size();
  std::vector<float> noise(n);
  if (spec.kind == NoiseKind::kWhite) {
    for (auto& v : noise) v = static_cast<float>(rng.normal());
  } else {
    if (spec.noise.empty()) throw UsageError("mix_noise: waveform noise needs samples");
    for (size_t i = 0; i < n; ++i) noise[i] = spec.noise[i % spec.noise.size()];
  }
  const double pn = mean_power(noise);
  if (!(pn > 0)) throw InputError("mix_noise: noise has zero power");
  out.scale = std::sqrt(ps / (pn * std::pow(10.0, spec.snr_db / 10.0)));
  int64_t clipped = 0;
  for (size_t i = 0; i < n; ++i) {
    const double y = signal.samples[i] + out.scale * noise[i];
    const double c = std::clamp(y, -1.0, 1.0);
    clipped += c != y;
    out.mixed.samples[i] = static_cast<float>(c);
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  return out;
}

void ToyTaskSpec::validate() const {
  if (vocab_size < 2 || vocab_size > 33) throw ConfigError("toy task: vocab_size must be in [2, 33]");
  if (min_tokens < 1 || max_tokens < min_tokens) {
    throw ConfigError("toy task: need 1 <= min_tokens <= max_tokens");
  }
  if (frames_per_token < 1 || gap_frames < 0) throw ConfigError("toy task: bad token/gap frame counts");
  if (image_size < 4) throw ConfigError("toy task: image_size must be >= 4");
  if (!(tone_amplitude > 0 && tone_amplitude <= 1)) throw ConfigError("toy task: tone_amplitude in (0, 1]");
  if (noise_floor < 0) throw ConfigError("toy task: noise_floor must be >= 0");
}

Vocab toy_vocab(const ToyTaskSpec& spec) {
  std::vector<std::string> tokens;
  for (int64_t t = 1; t < spec.vocab_size; ++t) tokens.push_back("w" + std::to_string(t));
  return Vocab::with_blank(tokens);
}

double toy_token_frequency(const ToyTaskSpec& spec, int64_t token) {
  if (token < 1 || token >= spec.vocab_size) throw ParameterError("toy task: token out of range");
  // Evenly spaced between 300 Hz and 6 kHz.
  const double span = 5700.0 / static_cast<double>(std::max<int64_t>(1, spec.vocab_size - 2));
  return 300.0 + span * static_cast<double>(token - 1);
}

std::vector<float> toy_token_pattern(const ToyTaskSpec& spec, int64_t token) {
  if (token < 1 || token >= spec.vocab_size) throw ParameterError("toy task: token out of range");
  const int64_t s = spec.image_size, i = token - 1;
  const double fy = static_cast<double>(1 + i % 4), gx = static_cast<double>(i / 4);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<float> out(static_cast<size_t>(s * s));
  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      const double u = (static_cast<double>(y) + 0.5) / static_cast<double>(s);
      const double w = (static_cast<double>(x) + 0.5) / static_cast<double>(s) - 0.5;
      out[static_cast<size_t>(y * s + x)] = static_cast<float>(std::cos(two_pi * fy * u) * std::cos(two_pi * gx * w));
    }
  }
  return out;
}

Utterance make_toy_utterance(const ToyTaskSpec& spec, Rng& rng) {
  spec.validate();
  Utterance u;
  const int64_t k = rng.uniform_int(spec.min_tokens, spec.max_tokens);
  for (int64_t i = 0; i < k; ++i) u.labels.push_back(rng.uniform_int(1, spec.vocab_size - 1));

  const int64_t frames = spec.gap_frames + k * (spec.frames_per_token + spec.gap_frames);
  const int64_t s = spec.image_size;
  u.audio.samples.assign(static_cast<size_t>(frames * kSamplesPerVideoFrame), 0.0f);
  auto pix = Tensor<float>::zeros({frames, s, s});
  const int64_t seg = spec.frames_per_token * kSamplesPerVideoFrame;
  const int64_t fade = kSampleRate / 200;  // 5 ms raised-cosine edges
  for (int64_t i = 0; i < k; ++i) {
    const int64_t tok = u.labels[static_cast<size_t>(i)];
    const int64_t f0 = spec.gap_frames + i * (spec.frames_per_token + spec.gap_frames);
    const double freq = toy_token_frequency(spec, tok);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int64_t n = 0; n < seg; ++n) {
      double env = 1.0;
      const int64_t edge = std::min(n, seg - 1 - n);
      if (edge < fade) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(edge) / fade);
      const double t = static_cast<double>(n) / kSampleRate;
      u.audio.samples[static_cast<size_t>(f0 * kSamplesPerVideoFrame + n)] =
          static_cast<float>(spec.tone_amplitude * env * std::sin(2.0 * std::numbers::pi * freq * t + phase));
    }
    const auto pattern = toy_token_pattern(spec, tok);
    for (int64_t f = f0; f < f0 + spec.frames_per_token; ++f) {
      std::copy(pattern.begin(), pattern.end(), pix.vec().begin() + f * s * s);
    }
  }
  for (auto& v : u.audio.samples) v += static_cast<float>(spec.noise_floor * rng.normal());
  for (auto& v : pix.vec()) v = std::clamp(0.8f * v + static_cast<float>(spec.noise_floor * rng.normal()), -1.0f, 1.0f);
  u.video.frames = pix;
  return u;
}

std::vector<Utterance> make_toy_batch(const ToyTaskSpec& spec, Rng& rng, int64_t count) {
  std::vector<Utterance> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(make_toy_utterance(spec, rng));
  return out;
}

std::vector<float> toy_babble(const ToyTaskSpec& spec, Rng& rng, int64_t num_samples, int copies) {
  std::vector<float> out(static_cast<size_t>(num_samples), 0.0f);
  for (int c = 0; c < copies; ++c) {
    std::vector<float> src;
    while (static_cast<int64_t>(src.size()) < num_samples) {
      const auto u = make_toy_utterance(spec, rng);
      src.insert(src.end(), u.audio.samples.begin(), u.audio.samples.end());
    }
    const auto shift = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(src.size()) - 1));
    for (size_t i = 0; i < out.size(); ++i) out[i] += src[(i + shift) % src.size()];
  }
  return out;
}

ModelInput<float> make_input(const Utterance& utt, const ModelConfig& cfg, const FeatureOptions& opt,
                             Rng& rng) {
  ModelInput<float> in;
  if (cfg.has_audio() && !utt.audio.samples.empty()) {
    Waveform w = opt.noise ? mix_noise(utt.audio, *opt.noise, rng).mixed : utt.audio;
    auto mel = log_mel(w);
    if (opt.spec_augment) mel = spec_augment(mel, rng, opt.training, opt.spec_augment_cfg);
    in.mel = mel;
  }
  if (cfg.has_video() && utt.video.frames.defined()) {
    VideoAugmentConfig vc;
    vc.crop = cfg.crop;
    const bool train_aug = opt.training && opt.video_augment;
    in.frames = video_augment(utt.video, rng, train_aug, vc).frames;
  }
  return in;
}

}  // namespace avsr

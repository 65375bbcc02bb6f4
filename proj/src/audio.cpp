// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "avsr/tensor_io.hpp"

namespace avsr {

namespace {

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u16(std::ostream& out, uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

// Reflect index into [0, n) without repeating the edge sample.
int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file: " + path);
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw InputError(path + ": not a RIFF file");
  read_u32(in);
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw InputError(path + ": not a WAVE file");
  bool have_fmt = false;
  Waveform w;
  while (in.read(tag, 4)) {
    const uint32_t size = read_u32(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const uint16_t format = read_u16(in);
      const uint16_t channels = read_u16(in);
      const uint32_t rate = read_u32(in);
      read_u32(in);
      read_u16(in);
      const uint16_t bits = read_u16(in);
      in.ignore(size - 16);
      if (format != 1 || bits != 16) throw InputError(path + ": only 16-bit PCM is supported");
      if (channels != 1) throw InputError(path + ": only mono audio is supported");
      if (rate != kSampleRate) {
        throw InputError(path + ": sample rate " + std::to_string(rate) +
                         " Hz is not supported (expected 16000 Hz)");
      }
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw InputError(path + ": data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (auto& s : w.samples) s = static_cast<float>(static_cast<int16_t>(read_u16(in))) / 32768.0f;
      if (!in) throw InputError(path + ": truncated data chunk");
      break;
    } else {
      in.ignore(size + (size & 1));
    }
  }
  if (!have_fmt) throw InputError(path + ": missing fmt chunk");
  if (w.samples.empty()) throw InputError(path + ": no samples");
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write WAV file: " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  write_u32(out, 16);
  write_u16(out, 1);
  write_u16(out, 1);
  write_u32(out, static_cast<uint32_t>(w.sample_rate));
  write_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (float s : w.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    write_u16(out, static_cast<uint16_t>(static_cast<int16_t>(std::lrint(std::min(c * 32768.0f, 32767.0f)))));
  }
}

void fft(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0 || im.size() != n) {
    throw ParameterError("fft: size must be a power of two");
  }
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (size_t k = 0; k < len / 2; ++k) {
      const double wr = std::cos(ang * static_cast<double>(k));
      const double wi = std::sin(ang * static_cast<double>(k));
      for (size_t i = k; i < n; i += len) {
        const size_t j = i + len / 2;
        const double tr = re[j] * wr - im[j] * wi;
        const double ti = re[j] * wi + im[j] * wr;
        re[j] = re[i] - tr;
        im[j] = im[i] - ti;
        re[i] += tr;
        im[i] += ti;
      }
    }
  }
}

Tensor<float> stft(const std::vector<float>& samples) {
  const auto n = static_cast<int64_t>(samples.size());
  if (n == 0) throw InputError("stft: empty waveform");
  const int64_t frames = n / kHop + 1;
  std::vector<double> window(kWindow);
  for (int i = 0; i < kWindow; ++i) {
    window[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kWindow);
  }
  // The 400-sample window sits centred in the 512-point frame.
  const int offset = (kFftSize - kWindow) / 2;
  auto out = Tensor<float>::zeros({kFreqBins, frames});
  auto& ov = out.vec();
  std::vector<double> re(kFftSize), im(kFftSize);
  for (int64_t f = 0; f < frames; ++f) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    const int64_t start = f * kHop - kWindow / 2;
    for (int i = 0; i < kWindow; ++i) {
      re[static_cast<size_t>(offset + i)] =
          window[static_cast<size_t>(i)] * samples[static_cast<size_t>(reflect(start + i, n))];
    }
    fft(re, im);
    for (int k = 0; k < kFreqBins; ++k) {
      ov[static_cast<size_t>(k * frames + f)] = static_cast<float>(std::hypot(re[k], im[k]));
    }
  }
  return out;
}

const Tensor<float>& mel_filterbank() {
  static const Tensor<float> bank = [] {
    auto t = Tensor<float>::zeros({kMelBins, kFreqBins});
    const double lo = hz_to_mel(0.0), hi = hz_to_mel(kSampleRate / 2.0);
    std::vector<double> edges(kMelBins + 2);
    for (int i = 0; i < kMelBins + 2; ++i) edges[static_cast<size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (kMelBins + 1));
    for (int m = 0; m < kMelBins; ++m) {
      const double l = edges[static_cast<size_t>(m)], c = edges[static_cast<size_t>(m + 1)],
                   r = edges[static_cast<size_t>(m + 2)];
      for (int k = 0; k < kFreqBins; ++k) {
        const double f = static_cast<double>(k) * kSampleRate / kFftSize;
        const double w = std::max(0.0, std::min((f - l) / (c - l), (r - f) / (r - c)));
        t.vec()[static_cast<size_t>(m * kFreqBins + k)] = static_cast<float>(w);
      }
    }
    return t;
  }();
  return bank;
}

Tensor<float> mel_project(const Tensor<float>& spec) {
  if (spec.rank() != 2 || spec.dim(0) != kFreqBins) {
    throw DimensionError("mel_project: expected (257, F), got " + shape_str(spec.shape()));
  }
  NoGradGuard guard;
  auto out = matmul(mel_filterbank(), spec);
  for (auto& v : out.vec()) v = std::log(v + 1e-6f);
  return out;
}

Tensor<float> log_mel(const Waveform& w) {
  if (w.sample_rate != kSampleRate) {
    throw InputError("sample rate " + std::to_string(w.sample_rate) + " Hz is not supported");
  }
  return mel_project(stft(w.samples));
}

Tensor<float> spec_augment(const Tensor<float>& mel, Rng& rng, bool training,
                           const SpecAugmentConfig& cfg) {
  if (!training) return mel;
  auto out = mel.detach().clone();
  const int64_t bins = mel.dim(0), frames = mel.dim(1);
  auto& v = out.vec();
  for (int i = 0; i < cfg.freq_masks; ++i) {
    const int64_t width = std::min<int64_t>(rng.uniform_int(0, cfg.max_freq_width), bins);
    const int64_t start = rng.uniform_int(0, bins - width);
    for (int64_t b = start; b < start + width; ++b) {
      std::fill_n(v.begin() + b * frames, frames, 0.0f);
    }
  }
  const auto max_t = static_cast<int64_t>(std::floor(cfg.max_time_ratio * static_cast<double>(frames)));
  for (int i = 0; i < cfg.time_masks; ++i) {
    const int64_t width = rng.uniform_int(0, max_t);
    const int64_t start = rng.uniform_int(0, frames - width);
    for (int64_t b = 0; b < bins; ++b) {
      std::fill_n(v.begin() + b * frames + start, width, 0.0f);
    }
  }
  return out;
}

template <class T>
AudioStem<T>::AudioStem(int64_t filters, int64_t out_dim, Rng& rng, int64_t mel_bins)
    : mel_bins_(mel_bins) {
  conv_ = &this->register_module(
      "conv", std::make_unique<Conv<T>>(1, filters, std::vector<int64_t>{3, 3},
                                        ConvSpec{{2, 2}, {1, 1}, 1}, rng, true));
  proj_ = &this->register_module(
      "proj", std::make_unique<Linear<T>>(filters * ((mel_bins - 1) / 2 + 1), out_dim, rng));
}

template <class T>
Tensor<T> AudioStem<T>::forward(const Tensor<T>& mel) const {
  if (mel.rank() != 2 || mel.dim(0) != mel_bins_) {
    throw DimensionError("audio stem: expected (" + std::to_string(mel_bins_) + ", F), got " +
                         shape_str(mel.shape()));
  }
  auto y = conv_->forward(reshape(mel, {1, 1, mel.dim(0), mel.dim(1)}));
  // [1, C, Fq, Ft] -> [Ft, C, Fq] -> [Ft, C * Fq]
  const int64_t c = y.dim(1), fq = y.dim(2), ft = y.dim(3);
  y = permute(reshape(y, {c, fq, ft}), {2, 0, 1});
  return proj_->forward(reshape(y, {ft, c * fq}));
}

template class AudioStem<float>;
template class AudioStem<double>;

}  // namespace avsr

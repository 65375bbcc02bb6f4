// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/video.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "avsr/tensor_io.hpp"

namespace avsr {

VideoClip clip_from_bytes(int64_t t, int64_t h, int64_t w, const std::vector<uint8_t>& pixels) {
  if (t <= 0 || h <= 0 || w <= 0) throw InputError("video clip must have at least one frame");
  if (static_cast<int64_t>(pixels.size()) != t * h * w) {
    throw InputError("video clip: pixel count does not match header");
  }
  VideoClip clip{Tensor<float>::zeros({t, h, w})};
  auto& v = clip.frames.vec();
  for (size_t i = 0; i < pixels.size(); ++i) v[i] = static_cast<float>(pixels[i]) / 127.5f - 1.0f;
  return clip;
}

VideoClip read_clip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open clip file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "AVCL", 4) != 0) throw InputError(path + ": bad clip magic");
  const int64_t t = read_u32(in), h = read_u32(in), w = read_u32(in);
  if (t == 0) throw InputError(path + ": clip has zero frames");
  std::vector<uint8_t> pixels(static_cast<size_t>(t * h * w));
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!in) throw InputError(path + ": truncated clip");
  return clip_from_bytes(t, h, w, pixels);
}

void write_clip(const std::string& path, const VideoClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write clip file: " + path);
  out.write("AVCL", 4);
  for (int a = 0; a < 3; ++a) write_u32(out, static_cast<uint32_t>(clip.frames.dim(a)));
  for (float v : clip.frames.vec()) {
    const float p = std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f);
    out.put(static_cast<char>(static_cast<uint8_t>(std::lrint(p))));
  }
}

namespace {

VideoClip crop(const VideoClip& clip, int64_t top, int64_t left, int64_t size) {
  const int64_t t = clip.frames.dim(0), h = clip.frames.dim(1), w = clip.frames.dim(2);
  VideoClip out{Tensor<float>::zeros({t, size, size})};
  const auto& src = clip.frames.vec();
  auto& dst = out.frames.vec();
  for (int64_t f = 0; f < t; ++f) {
    for (int64_t y = 0; y < size; ++y) {
      std::copy_n(src.begin() + (f * h + top + y) * w + left, size,
                  dst.begin() + (f * size + y) * size);
    }
  }
  return out;
}

}  // namespace

VideoClip hflip(const VideoClip& clip) {
  VideoClip out{clip.frames.detach().clone()};
  const int64_t w = clip.frames.dim(2);
  auto& v = out.frames.vec();
  for (size_t row = 0; row < v.size(); row += static_cast<size_t>(w)) {
    std::reverse(v.begin() + static_cast<int64_t>(row), v.begin() + static_cast<int64_t>(row) + w);
  }
  return out;
}

VideoClip video_augment(const VideoClip& clip, Rng& rng, bool training,
                        const VideoAugmentConfig& cfg) {
  const int64_t t = clip.frames.dim(0), h = clip.frames.dim(1), w = clip.frames.dim(2);
  if (h < cfg.crop || w < cfg.crop) {
    throw InputError("video clip " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the " + std::to_string(cfg.crop) + " crop");
  }
  if (!training) return crop(clip, (h - cfg.crop) / 2, (w - cfg.crop) / 2, cfg.crop);
  auto out = crop(clip, rng.uniform_int(0, h - cfg.crop), rng.uniform_int(0, w - cfg.crop), cfg.crop);
  if (rng.bernoulli(0.5)) out = hflip(out);
  const int64_t plane = cfg.crop * cfg.crop;
  auto& v = out.frames.vec();
  for (int64_t sec = 0; sec < t; sec += kVideoFps) {
    const int64_t span = std::min<int64_t>(kVideoFps, t - sec);
    const int64_t len = std::min<int64_t>(rng.uniform_int(0, cfg.max_mask_frames), span);
    const int64_t start = sec + rng.uniform_int(0, span - len);
    std::fill(v.begin() + start * plane, v.begin() + (start + len) * plane, 0.0f);
  }
  return out;
}

template <class T>
BasicBlock<T>::BasicBlock(int64_t cin, int64_t cout, int64_t stride, Rng& rng) {
  conv1_ = &this->register_module(
      "conv1", std::make_unique<Conv<T>>(cin, cout, std::vector<int64_t>{3, 3},
                                         ConvSpec{{stride, stride}, {1, 1}, 1}, rng, false));
  bn1_ = &this->register_module("bn1", std::make_unique<BatchNorm<T>>(cout, 1));
  conv2_ = &this->register_module(
      "conv2", std::make_unique<Conv<T>>(cout, cout, std::vector<int64_t>{3, 3},
                                         ConvSpec{{1, 1}, {1, 1}, 1}, rng, false));
  bn2_ = &this->register_module("bn2", std::make_unique<BatchNorm<T>>(cout, 1));
  if (stride != 1 || cin != cout) {
    down_ = &this->register_module(
        "downsample", std::make_unique<Conv<T>>(cin, cout, std::vector<int64_t>{1, 1},
                                                ConvSpec{{stride, stride}, {0, 0}, 1}, rng, false));
    down_bn_ = &this->register_module("downsample_bn", std::make_unique<BatchNorm<T>>(cout, 1));
  }
}

template <class T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x) {
  auto y = relu(bn1_->forward(conv1_->forward(x)));
  y = bn2_->forward(conv2_->forward(y));
  auto shortcut = down_ ? down_bn_->forward(down_->forward(x)) : x;
  return relu(add(y, shortcut));
}

template <class T>
VideoFrontend<T>::VideoFrontend(const VideoFrontendConfig& cfg, Rng& rng) {
  if (cfg.widths.empty()) throw ConfigError("video front-end needs at least one ResNet stage");
  stem_conv_ = &this->register_module(
      "stem_conv", std::make_unique<Conv<T>>(1, cfg.stem_channels, std::vector<int64_t>{5, 7, 7},
                                             ConvSpec{{1, 2, 2}, {2, 3, 3}, 1}, rng, false));
  stem_bn_ = &this->register_module("stem_bn", std::make_unique<BatchNorm<T>>(cfg.stem_channels, 1));
  int64_t cin = cfg.stem_channels;
  for (size_t s = 0; s < cfg.widths.size(); ++s) {
    for (int b = 0; b < 2; ++b) {
      const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      blocks_.push_back(&this->register_module(
          "layer" + std::to_string(s + 1) + "." + std::to_string(b),
          std::make_unique<BasicBlock<T>>(cin, cfg.widths[s], stride, rng)));
      cin = cfg.widths[s];
    }
  }
  proj_ = &this->register_module("proj", std::make_unique<Linear<T>>(cin, cfg.out_dim, rng));
}

template <class T>
Tensor<T> VideoFrontend<T>::stem(const Tensor<T>& frames) {
  if (frames.rank() != 3 || frames.dim(0) == 0) {
    throw InputError("video front-end: expected (T_v >= 1, H, W), got " + shape_str(frames.shape()));
  }
  auto x = reshape(frames, {1, 1, frames.dim(0), frames.dim(1), frames.dim(2)});
  x = relu(stem_bn_->forward(stem_conv_->forward(x)));
  return max_pool(x, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
}

template <class T>
Tensor<T> VideoFrontend<T>::trunk(const Tensor<T>& stem_out, std::vector<Shape>* trajectory) {
  // [1, C, T, H, W] -> [T, C, H, W]: frames become the batch axis.
  auto x = permute(reshape(stem_out, {stem_out.dim(1), stem_out.dim(2), stem_out.dim(3),
                                      stem_out.dim(4)}),
                   {1, 0, 2, 3});
  if (trajectory) trajectory->push_back(x.shape());
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i]->forward(x);
    if (trajectory && i % 2 == 1) trajectory->push_back(x.shape());
  }
  return mean_trailing(x, 2);
}

template <class T>
Tensor<T> VideoFrontend<T>::forward(const Tensor<T>& frames) {
  return proj_->forward(trunk(stem(frames)));
}

template class BasicBlock<float>;
template class BasicBlock<double>;
template class VideoFrontend<float>;
template class VideoFrontend<double>;

}  // namespace avsr

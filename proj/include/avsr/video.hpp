// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "avsr/nn.hpp"

namespace avsr {

inline constexpr int kVideoFps = 25;

/// Grayscale frames [T_v, H, W] with values in [-1, 1].
struct VideoClip {
  Tensor<float> frames;
  int64_t num_frames() const { return frames.dim(0); }
};

/// Clip file: "AVCL", then u32 T_v, H, W, then T_v*H*W uint8 pixels row-major.
VideoClip read_clip(const std::string& path);
void write_clip(const std::string& path, const VideoClip& clip);
VideoClip clip_from_bytes(int64_t t, int64_t h, int64_t w, const std::vector<uint8_t>& pixels);

struct VideoAugmentConfig {
  int64_t crop = 88;
  int max_mask_frames = 10;  // per second of video
};

/// Training: one temporal mask per second, random crop, 50% horizontal flip.
/// Eval: central crop.
VideoClip video_augment(const VideoClip& clip, Rng& rng, bool training,
                        const VideoAugmentConfig& cfg = {});
VideoClip hflip(const VideoClip& clip);

struct VideoFrontendConfig {
  int64_t stem_channels = 64;
  std::vector<int64_t> widths = {64, 128, 256, 512};
  int64_t out_dim = 256;
};

template <class T>
class BasicBlock : public Module<T> {
 public:
  BasicBlock(int64_t cin, int64_t cout, int64_t stride, Rng& rng);
  /// x: [N, C, H, W]
  Tensor<T> forward(const Tensor<T>& x);
  BatchNorm<T>& last_norm() { return *bn2_; }

 private:
  Conv<T>* conv1_;
  BatchNorm<T>* bn1_;
  Conv<T>* conv2_;
  BatchNorm<T>* bn2_;
  Conv<T>* down_ = nullptr;
  BatchNorm<T>* down_bn_ = nullptr;
};

/// 3D stem, per-frame ResNet-18 trunk, global average pooling, linear.
template <class T>
class VideoFrontend : public Module<T> {
 public:
  VideoFrontend(const VideoFrontendConfig& cfg, Rng& rng);

  /// [T_v, H, W] -> [1, C, T_v, H/4, W/4] (rounded per conv/pool formulas).
  Tensor<T> stem(const Tensor<T>& frames);
  /// Stem output -> [T_v, widths.back()].
  Tensor<T> trunk(const Tensor<T>& stem_out, std::vector<Shape>* trajectory = nullptr);
  /// [T_v, H, W] -> [T_v, out_dim].
  Tensor<T> forward(const Tensor<T>& frames);

  std::vector<BasicBlock<T>*>& blocks() { return blocks_; }
  Linear<T>& proj() { return *proj_; }

 private:
  Conv<T>* stem_conv_;
  BatchNorm<T>* stem_bn_;
  std::vector<BasicBlock<T>*> blocks_;
  Linear<T>* proj_;
};

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "avsr/train.hpp"
#include "test_util.hpp"

namespace avsr {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("avsr_train_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

TEST(Adam, ClosedFormFirstStep) {
  auto p = Tensor<double>::zeros({1}, true);
  p.zero_grad();
  detail::grad_of(p)[0] = 1.0;
  OptState<double> st;
  adam_step<double>({{"p", p}}, st, 0.01);
  EXPECT_NEAR(p[0], -0.01 / (1 + 1e-9), 1e-15);
}

TEST(Adam, ZeroGradientLeavesZeroParameter) {
  auto p = Tensor<double>::zeros({3}, true);
  auto q = Tensor<double>::full({2}, 0.5, true);
  OptState<double> st;
  adam_step<double>({{"p", p}, {"q", q}}, st, 0.1);
  for (double v : p.vec()) EXPECT_EQ(v, 0.0);
  // Only the L2 term g = 1e-6 * 0.5 acts; Adam's first step is lr * g / (|g| + eps).
  for (double v : q.vec()) EXPECT_NEAR(v, 0.5 - 0.1 * 5e-7 / (5e-7 + 1e-9), 1e-12);
}

TEST(Adam, ConstantGradientStepTendsToLr) {
  auto p = Tensor<double>::zeros({1}, true);
  OptState<double> st;
  AdamConfig cfg;
  cfg.weight_decay = 0;
  double prev = 0, delta = 0;
  for (int i = 0; i < 500; ++i) {
    p.zero_grad();
    detail::grad_of(p)[0] = 0.3;
    adam_step<double>({{"p", p}}, st, 1e-3, cfg);
    delta = p[0] - prev;
    prev = p[0];
  }
  EXPECT_NEAR(delta, -1e-3, 1e-9);
}

TEST(Adam, MatchesReferenceImplementation) {
  Rng rng(1);
  auto p = testing::random_tensor({7}, rng);
  std::vector<double> ref(p.vec()), m(7, 0), v(7, 0);
  OptState<double> st;
  AdamConfig cfg;
  for (int t = 1; t <= 6; ++t) {
    p.zero_grad();
    for (int j = 0; j < 7; ++j) detail::grad_of(p)[j] = rng.uniform(-1, 1);
    const double lr = 0.01 * t;
    for (int j = 0; j < 7; ++j) {
      const double g = detail::grad_of(p)[j] + 1e-6 * ref[j];
      m[j] = 0.9 * m[j] + 0.1 * g;
      v[j] = 0.98 * v[j] + 0.02 * g * g;
      const double mh = m[j] / (1 - std::pow(0.9, t)), vh = v[j] / (1 - std::pow(0.98, t));
      ref[j] -= lr * mh / (std::sqrt(vh) + 1e-9);
    }
    adam_step<double>({{"p", p}}, st, lr, cfg);
  }
  for (int j = 0; j < 7; ++j) EXPECT_NEAR(p[j], ref[j], 1e-12);
  EXPECT_EQ(st.step, 6);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto p = Tensor<double>::zeros({2}, true);
  p.zero_grad();
  detail::grad_of(p)[1] = std::numeric_limits<double>::quiet_NaN();
  OptState<double> st;
  try {
    adam_step<double>({{"encoder.w", p}}, st, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.w"), std::string::npos);
  }
}

TEST(Noam, Schedule) {
  EXPECT_DOUBLE_EQ(noam_lr(10000), 1e-3);
  EXPECT_DOUBLE_EQ(noam_lr(5000), 0.5e-3);
  EXPECT_DOUBLE_EQ(noam_lr(40000), 0.5e-3);
  for (int64_t s = 1; s < 30000; s += 37) EXPECT_LE(noam_lr(s), 1e-3);
  EXPECT_NEAR(noam_lr(9999), noam_lr(10001), 2e-7);
  EXPECT_THROW(noam_lr(0), ParameterError);
}

class Small : public Module<float> {
 public:
  explicit Small(Rng& rng, int64_t out = 3) {
    lin = &register_module("lin", std::make_unique<Linear<float>>(4, out, rng));
    bn = &register_module("bn", std::make_unique<BatchNorm<float>>(out, 1));
  }
  Linear<float>* lin;
  BatchNorm<float>* bn;
};

TEST(Checkpoint, RoundTripAndRestore) {
  Rng rng(2);
  Small a(rng), b(rng);
  auto c = capture(a, 17, "cfg=abc");
  const auto dir = temp_dir("ckpt");
  save_checkpoint(dir / "a.ckpt", c);
  auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.stamp, "cfg=abc");
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  restore(b, back);
  EXPECT_EQ(b.lin->weight().vec(), a.lin->weight().vec());
  save_checkpoint(dir / "b.ckpt", capture(b, 17, "cfg=abc"));
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST(Checkpoint, ManifestMismatchNamesTensor) {
  Rng rng(3);
  Small a(rng, 3), b(rng, 5);
  try {
    restore(b, capture(a));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("lin.weight"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), InputError);
}

TEST(Swa, AveragingProperties) {
  Rng rng(4);
  Small a(rng);
  auto c1 = capture(a, 1);
  auto one = swa_average({c1});
  for (size_t i = 0; i < c1.tensors.size(); ++i) EXPECT_EQ(one.tensors[i].second.vec(), c1.tensors[i].second.vec());

  auto neg = c1;
  for (auto& [n, t] : neg.tensors) {
    t = t.clone();
    for (auto& v : t.vec()) v = -v;
  }
  for (const auto& [n, t] : swa_average({c1, neg}).tensors) {
    for (float v : t.vec()) EXPECT_EQ(v, 0.0f);
  }

  std::vector<Checkpoint> many;
  for (int k = 0; k < 5; ++k) {
    Small s(rng);
    many.push_back(capture(s, k));
  }
  const auto avg = swa_average(many);
  for (size_t i = 0; i < avg.tensors.size(); ++i) {
    for (int64_t j = 0; j < avg.tensors[i].second.numel(); ++j) {
      double ref = 0;
      for (const auto& c : many) ref += c.tensors[i].second[j];
      EXPECT_NEAR(avg.tensors[i].second[j], ref / 5, 1e-7);
    }
  }
  Small wide(rng, 5);
  try {
    swa_average({c1, capture(wide)});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("lin.weight"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bn.weight"), std::string::npos);
  }
}

TEST(Swa, BatchNormRecalibrationAveragesBatchStatistics) {
  Rng rng(5);
  Small s(rng);
  std::vector<Tensor<float>> batches;
  for (int i = 0; i < 4; ++i) batches.push_back(testing::random_tensor<float>({6, 3}, rng, -1 + i, 2 + i, false));
  NoGradGuard g;
  recalibrate_batch_norm(s, 4, [&](int64_t i) { s.bn->forward(batches[static_cast<size_t>(i)]); });
  EXPECT_FALSE(s.training());
  auto bufs = s.named_buffers();
  ASSERT_EQ(bufs.size(), 2u);
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (const auto& b : batches) {
      double mu = 0, sq = 0;
      for (int r = 0; r < 6; ++r) mu += b[r * 3 + c] / 6.0;
      for (int r = 0; r < 6; ++r) sq += (b[r * 3 + c] - mu) * (b[r * 3 + c] - mu) / 5.0;
      mean += mu / 4;
      var += sq / 4;
    }
    EXPECT_NEAR(bufs[0].second[c], mean, 1e-5);
    EXPECT_NEAR(bufs[1].second[c], var, 1e-5);
  }
}

TEST(MixNoise, ScaleAndSentinels) {
  Rng rng(6);
  Waveform s;
  s.samples = {0.1f, -0.1f, 0.1f, -0.1f};
  NoiseMixSpec spec{NoiseKind::kWaveform, {0.1f, 0.1f}, 0.0};
  auto r = mix_noise(s, spec, rng);
  EXPECT_NEAR(r.scale, 1.0, 1e-7);
  EXPECT_EQ(r.mixed.samples[0], 0.2f);
  spec.snr_db = std::numeric_limits<double>::infinity();
  EXPECT_EQ(mix_noise(s, spec, rng).mixed.samples, s.samples);
  Waveform silent;
  silent.samples.assign(10, 0.0f);
  spec.snr_db = 0;
  EXPECT_THROW(mix_noise(silent, spec, rng), InputError);
  EXPECT_THROW(mix_noise(s, NoiseMixSpec{NoiseKind::kBabble, {}, 0.0}, rng), UsageError);
  Waveform loud;
  loud.samples.assign(100, 0.9f);
  auto clipped = mix_noise(loud, NoiseMixSpec{NoiseKind::kWaveform, {1.0f}, -20.0}, rng);
  EXPECT_EQ(clipped.clip_fraction, 1.0);
}

TEST(MixNoise, MeasuredSnrMatchesTarget) {
  Rng rng(7);
  ToyTaskSpec task;
  for (int trial = 0; trial < 100; ++trial) {
    auto utt = make_toy_utterance(task, rng);
    for (auto& v : utt.audio.samples) v *= 0.2f;  // headroom so nothing clips
    NoiseMixSpec spec;
    spec.kind = static_cast<NoiseKind>(trial % 3);
    if (spec.kind != NoiseKind::kWhite) spec.noise = toy_babble(task, rng, 7000);
    spec.snr_db = rng.uniform(-10, 20);
    auto r = mix_noise(utt.audio, spec, rng);
    ASSERT_EQ(r.clip_fraction, 0.0);
    std::vector<float> noise(r.mixed.samples.size());
    for (size_t i = 0; i < noise.size(); ++i) noise[i] = r.mixed.samples[i] - utt.audio.samples[i];
    EXPECT_NEAR(measure_snr_db(utt.audio.samples, noise), spec.snr_db, 0.1);
  }
}

TEST(ToyTask, DeterministicAndConsistent) {
  ToyTaskSpec spec;
  Rng a(8), b(8);
  auto x = make_toy_batch(spec, a, 5), y = make_toy_batch(spec, b, 5);
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].labels, y[i].labels);
    EXPECT_EQ(x[i].audio.samples, y[i].audio.samples);
    EXPECT_EQ(x[i].video.frames.vec(), y[i].video.frames.vec());
    const auto k = static_cast<int64_t>(x[i].labels.size());
    EXPECT_GE(k, spec.min_tokens);
    EXPECT_LE(k, spec.max_tokens);
    const int64_t frames = spec.gap_frames + k * (spec.frames_per_token + spec.gap_frames);
    EXPECT_EQ(x[i].video.num_frames(), frames);
    EXPECT_EQ(static_cast<int64_t>(x[i].audio.samples.size()), frames * kSamplesPerVideoFrame);
    for (int64_t id : x[i].labels) EXPECT_TRUE(id >= 1 && id < spec.vocab_size);
  }
  EXPECT_EQ(toy_vocab(spec).size(), spec.vocab_size);
}

TEST(ToyTask, TokenToneHasSpectralPeakAtItsFrequency) {
  ToyTaskSpec spec;
  spec.min_tokens = spec.max_tokens = 1;
  spec.noise_floor = 0;
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto u = make_toy_utterance(spec, rng);
    auto s = stft(u.audio.samples);  // [257, frames]
    // Centre frame of the token segment.
    const int64_t mid = (spec.gap_frames * kSamplesPerVideoFrame + spec.frames_per_token * kSamplesPerVideoFrame / 2) / kHop;
    int64_t best = 0;
    for (int64_t k = 0; k < kFreqBins; ++k) {
      if (s[k * s.dim(1) + mid] > s[best * s.dim(1) + mid]) best = k;
    }
    const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
    EXPECT_NEAR(static_cast<double>(best) * bin_hz, toy_token_frequency(spec, u.labels[0]), bin_hz);
  }
}

TEST(ToyTask, PatternsAreDistinctAndFlipSymmetric) {
  ToyTaskSpec spec;
  spec.vocab_size = 33;
  const int64_t s = spec.image_size;
  std::vector<std::vector<float>> pats;
  for (int64_t t = 1; t < spec.vocab_size; ++t) {
    auto p = toy_token_pattern(spec, t);
    for (int64_t y = 0; y < s; ++y) {
      for (int64_t x = 0; x < s; ++x) EXPECT_NEAR(p[y * s + x], p[y * s + (s - 1 - x)], 1e-6);
    }
    for (const auto& q : pats) {
      double d = 0;
      for (size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
      EXPECT_GT(d, 1.0);
    }
    pats.push_back(p);
  }
}

TrainConfig tiny_train(Modality m = Modality::kAudio) {
  TrainConfig cfg;
  cfg.task.vocab_size = 6;
  cfg.task.max_tokens = 3;
  cfg.model = tiny_config(m, 8, 6);
  cfg.model.mel_bins = kMelBins;
  cfg.steps = 2;
  cfg.batch_size = 2;
  cfg.warmup = 2;
  cfg.log_every = 1;
  cfg.seed = 11;
  return cfg;
}

TEST(Train, ZeroStepsKeepsInitialWeights) {
  auto cfg = tiny_train();
  cfg.steps = 0;
  Rng rng(12);
  AvsrModel<float> model(cfg.model, rng);
  const auto init = capture(model);
  auto res = train(model, cfg);
  EXPECT_TRUE(res.checkpoints.empty());
  EXPECT_EQ(res.final.step, 0);
  for (size_t i = 0; i < init.tensors.size(); ++i) {
    EXPECT_EQ(res.final.tensors[i].second.vec(), init.tensors[i].second.vec());
  }
}

TEST(Train, AccumulationMatchesLargeBatch) {
  auto cfg = tiny_train(Modality::kAudioVisual);
  cfg.steps = 2;
  Rng r1(13), r2(13);
  AvsrModel<float> big(cfg.model, r1), acc(cfg.model, r2);
  cfg.batch_size = 16;
  auto a = train(big, cfg);
  cfg.batch_size = 4;
  cfg.accumulation = 4;
  auto b = train(acc, cfg);
  for (size_t i = 0; i < a.final.tensors.size(); ++i) {
    const auto& x = a.final.tensors[i].second.vec();
    const auto& y = b.final.tensors[i].second.vec();
    for (size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(x[j], y[j], 1e-5) << a.final.tensors[i].first;
  }
}

TEST(Train, BitReproducibleCheckpointsAndFiles) {
  auto cfg = tiny_train();
  cfg.steps = 3;
  cfg.checkpoint_every = 1;
  cfg.swa_last = 2;
  cfg.swa_recalibration_batches = 2;
  std::vector<std::string> bytes;
  for (int run = 0; run < 2; ++run) {
    cfg.out_dir = temp_dir("repro" + std::to_string(run));
    Rng rng(14);
    AvsrModel<float> model(cfg.model, rng);
    auto res = train(model, cfg);
    EXPECT_EQ(res.checkpoints.size(), 3u);
    ASSERT_TRUE(res.swa.has_value());
    EXPECT_EQ(res.metrics.size(), 3u);
    bytes.push_back(slurp(cfg.out_dir / "final.ckpt") + slurp(cfg.out_dir / "swa.ckpt") +
                    slurp(cfg.out_dir / "step_00000002.ckpt"));
    EXPECT_TRUE(fs::exists(cfg.out_dir / "metrics.jsonl"));
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  EXPECT_FALSE(bytes[0].empty());
}

TEST(Train, DivergenceReportsStep) {
  auto cfg = tiny_train();
  cfg.steps = 50;
  cfg.peak_lr = 1e30;
  Rng rng(15);
  AvsrModel<float> model(cfg.model, rng);
  EXPECT_THROW(train(model, cfg), NumericError);
}

TEST(Train, ConfigValidation) {
  auto cfg = tiny_train();
  cfg.task.vocab_size = 7;
  Rng rng(16);
  AvsrModel<float> model(cfg.model, rng);
  EXPECT_THROW(train(model, cfg), ConfigError);
  cfg = tiny_train();
  cfg.accumulation = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Evaluate, PerfectPosteriorStubScoresZero) {
  ToyTaskSpec task;
  Rng rng(17);
  auto data = make_toy_batch(task, rng, 6);
  auto cfg = tiny_config(Modality::kAudio, 8, task.vocab_size);
  PosteriorFn stub = [&](size_t i, const ModelInput<float>&, Mode) {
    const auto& y = data[i].labels;
    const int64_t v = task.vocab_size, n = 2 * static_cast<int64_t>(y.size()) + 1;
    auto lp = Tensor<float>::full({n, v}, std::log(1e-6f));
    for (int64_t t = 0; t < n; ++t) lp[t * v + (t % 2 ? y[static_cast<size_t>(t / 2)] : 0)] = 0.0f;
    ModelOutput<float> out;
    out.log_probs = lp;
    out.length = n;
    return out;
  };
  EvalOptions opt;
  opt.beam_cfg = {4, 0.0, 0.0};
  auto rep = evaluate(stub, cfg, data, opt);
  EXPECT_EQ(rep.greedy_wer, 0.0);
  EXPECT_EQ(rep.beam_wer, 0.0);
  EXPECT_EQ(rep.utterances, 6);
}

TEST(Evaluate, SweepRecordsSortedOnePerSnr) {
  auto cfg = tiny_train(Modality::kAudioVisual);
  Rng rng(18);
  AvsrModel<float> model(cfg.model, rng);
  auto data = make_toy_batch(cfg.task, rng, 3);
  EvalOptions opt;
  opt.beam = false;
  opt.babble_source = cfg.task;
  auto recs = snr_sweep(model, data, opt, {5, -5, 0});
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].snr_db, -5);
  EXPECT_EQ(recs[2].snr_db, 5);
  for (const auto& r : recs) EXPECT_EQ(r.mode, Mode::kAudioVisual);
  auto rep = evaluate(model, data, opt);
  EXPECT_EQ(rep.inter_losses.size(), 3u);
  opt.mode = Mode::kMaskedAudio;
  EXPECT_NO_THROW(evaluate(model, data, opt));
}

}  // namespace
}  // namespace avsr

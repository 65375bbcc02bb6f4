// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Optimizer, schedule, checkpoints, weight averaging and the train/eval loops.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avsr/conformer.hpp"
#include "avsr/ctc.hpp"
#include "avsr/data.hpp"

namespace avsr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 1e-6;  // L2 coefficient added to every gradient
};

template <class T>
struct OptState {
  std::vector<std::vector<T>> m, v;
  int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a missing gradient counts as zero). Throws NumericError naming
/// the parameter when a gradient is not finite.
template <class T>
void adam_step(const NamedTensors<T>& params, OptState<T>& state, double lr, const AdamConfig& cfg = {});

/// peak * min(step / warmup, sqrt(warmup / step)).
double noam_lr(int64_t step, int64_t warmup = 10000, double peak = 1e-3);

/// Parameters followed by buffers, plus the step and a free-form stamp.
struct Checkpoint {
  int64_t step = 0;
  std::string stamp;
  NamedTensors<float> tensors;
};

Checkpoint capture(const Module<float>& model, int64_t step = 0, const std::string& stamp = "");
/// Copies values into the model. Throws InputError naming the first tensor
/// whose name or shape differs.
void restore(Module<float>& model, const Checkpoint& ckpt);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Element-wise mean. Throws InputError listing the differing names when the
/// manifests disagree.
Checkpoint swa_average(const std::vector<Checkpoint>& ckpts);

/// Re-estimates batch-norm running statistics as the plain average of the
/// batch statistics seen while `run(i)` performs passes i = 0..passes-1 in
/// training mode. Leaves the model in eval mode.
void recalibrate_batch_norm(Module<float>& model, int64_t passes, const std::function<void(int64_t)>& run);

/// Desk-scale model for the toy task: small stems, 1 block per stage.
ModelConfig desk_config(Modality m, int64_t vocab_size, int64_t d = 64);

struct TrainConfig {
  ModelConfig model;
  ToyTaskSpec task;
  int64_t steps = 3000;
  int64_t batch_size = 4;
  int64_t accumulation = 1;
  int64_t warmup = 300;
  double peak_lr = 1e-3;
  AdamConfig adam;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  int64_t swa_last = 0;          // average the last N saved checkpoints
  int64_t swa_recalibration_batches = 8;
  std::optional<Mode> mode;      // defaults to the model's own mode
  bool spec_augment = true;
  bool video_augment = true;
  /// Babble mixed into every training utterance at an SNR drawn uniformly
  /// from this dB range.
  std::optional<std::pair<double, double>> train_snr;
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::string stamp;              // copied into every checkpoint
  int64_t log_every = 50;

  void validate() const;
};

struct MetricRecord {
  int64_t step = 0;
  double lr = 0;
  double loss = 0;
  std::map<std::string, double> inter;  // mean inter-CTC loss per tag
  double wall_seconds = 0;
};

struct TrainResult {
  Checkpoint final;
  std::optional<Checkpoint> swa;
  std::vector<Checkpoint> checkpoints;  // saved during training, in order
  std::vector<MetricRecord> metrics;
};

/// The training utterance at global position `index` of step `step`.
Utterance training_utterance(const TrainConfig& cfg, int64_t step, int64_t index);

/// Runs `cfg.steps` optimizer steps. Each step sums the joint loss of
/// batch_size * accumulation utterances (divided by that count), then applies
/// one Adam update at noam_lr(step). Deterministic for a fixed seed.
/// Throws NumericError with the step index when the loss is not finite.
TrainResult train(AvsrModel<float>& model, const TrainConfig& cfg,
                  const std::function<void(const MetricRecord&)>& on_log = {});

struct EvalOptions {
  std::optional<Mode> mode;
  bool beam = true;
  BeamConfig beam_cfg;
  const NgramLm* lm = nullptr;
  std::optional<NoiseMixSpec> noise;  // for babble, the noise is drawn per utterance
  ToyTaskSpec babble_source;          // used when noise->kind is kBabble and has no samples
  uint64_t seed = 0;
  double inter_ctc_weight = 0.5;
};

struct EvalReport {
  double greedy_wer = 0;
  double beam_wer = 0;
  double loss = 0;  // mean joint loss over feasible utterances
  std::map<std::string, double> inter_losses;
  int64_t utterances = 0;
};

/// Produces posteriors for utterance `index` of the dataset.
using PosteriorFn = std::function<ModelOutput<float>(size_t index, const ModelInput<float>& in, Mode mode)>;

/// Corpus WER (summed edits over summed reference words) with token ids as words.
EvalReport evaluate(const PosteriorFn& fn, const ModelConfig& cfg, const std::vector<Utterance>& data,
                    const EvalOptions& opt);
EvalReport evaluate(AvsrModel<float>& model, const std::vector<Utterance>& data, const EvalOptions& opt);

struct SweepRecord {
  double snr_db = 0;
  double wer = 0;
  Mode mode = Mode::kAudioVisual;
};

/// One record per SNR, ascending. Uses beam WER when opt.beam, else greedy.
std::vector<SweepRecord> snr_sweep(AvsrModel<float>& model, const std::vector<Utterance>& data,
                                   EvalOptions opt, std::vector<double> snrs);

}  // namespace avsr

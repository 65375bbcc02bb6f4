// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// YAML run configuration shared by every command.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avsr/train.hpp"

namespace avsr {

struct EvalConfig {
  int64_t utterances = 100;
  uint64_t seed = 1;  // held-out toy set; distinct from the training stream
  std::optional<Mode> mode;
  bool beam = true;
  BeamConfig beam_cfg;
  int64_t lm_order = 0;  // 0 disables the n-gram LM
  int64_t lm_train_utterances = 2000;
  double lm_delta = 0.1;
  NoiseKind noise = NoiseKind::kBabble;
  std::vector<double> snr_db;  // empty: clean only
};

struct RunConfig {
  uint64_t seed = 0;
  int threads = 1;
  std::filesystem::path output_dir = "runs/default";
  TrainConfig train;  // carries the model and task sections
  EvalConfig eval;

  const ModelConfig& model() const { return train.model; }
  /// Cross-section checks on top of the per-section validators.
  void validate() const;
};

/// Parses a YAML document. Every error is a ConfigError of the form
/// "<origin>:<line>:<column>: <message>"; unknown keys are rejected.
/// The model section starts from a preset (tiny, desk or full) and then
/// applies the explicit fields.
RunConfig parse_run_config(const std::string& yaml, const std::string& origin = "<config>");
/// Throws ConfigError naming the path when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully explicit YAML that parses back to the same configuration.
std::string resolved_yaml(const RunConfig& cfg);
/// 16 hex digits of FNV-1a over resolved_yaml with output_dir cleared.
std::string config_hash(const RunConfig& cfg);

/// Evaluation options from the eval section, clean input (no noise set).
EvalOptions make_eval_options(const RunConfig& cfg, const NgramLm* lm = nullptr);

/// Held-out toy utterances for evaluation.
std::vector<Utterance> eval_dataset(const RunConfig& cfg);
/// Word-level n-gram LM over toy transcripts drawn from the training stream.
NgramLm train_toy_lm(const RunConfig& cfg);

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>

#include "avsr/config.hpp"

namespace avsr {
namespace {

std::string error_of(const std::string& yaml) {
  try {
    parse_run_config(yaml, "run.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfig, EmptyDocumentGivesDeskDefaults) {
  const auto cfg = parse_run_config("", "run.yaml");
  EXPECT_EQ(cfg.model().modality, Modality::kAudioVisual);
  EXPECT_EQ(cfg.model().audio_stages.front().d_model, 64);
  EXPECT_EQ(cfg.train.task.vocab_size, cfg.model().vocab_size);
  EXPECT_EQ(cfg.train.seed, cfg.seed);
}

TEST(RunConfig, BackendFieldsOverridePreset) {
  const auto cfg = parse_run_config(R"(
seed: 7
model:
  preset: full
  modality: audio
  vocab_size: 30
  audio_backend:
    num_stages: 3
    blocks_per_stage: [5, 6, 1]
    stage_feature_dim: [180, 256, 360]
    stage_attention: [grouped, regular, regular]
    stage_patch_size: [3, 1, 1]
    interctc_blocks: [8, 11]
task:
  image_size: 96
)");
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.model().vocab_size, 30);
  EXPECT_EQ(cfg.model().audio_stages[0].attention, AttentionVariant::kGrouped);
  EXPECT_EQ(cfg.model().audio_stages[0].factor, 3);
  EXPECT_EQ(cfg.model().audio_stem_filters, full_config(Modality::kAudio).audio_stem_filters);
}

TEST(RunConfig, ResolvedYamlRoundTrips) {
  for (const char* doc : {"", "model: {preset: tiny, modality: visual, d_model: 8}",
                          "model: {modality: audio}\ntrain: {snr_range: [-10, 10], peak_lr: 0.0007}\n"
                          "eval: {snr_db: [-5, 0, 5.5], mode: av-masked-video, lm_order: 2}"}) {
    const auto a = parse_run_config(doc, "a.yaml");
    const auto text = resolved_yaml(a);
    const auto b = parse_run_config(text, "b.yaml");
    EXPECT_EQ(resolved_yaml(b), text) << doc;
    EXPECT_EQ(config_hash(a), config_hash(b));
  }
}

TEST(RunConfig, HashChangesWithAnyField) {
  const auto a = parse_run_config("seed: 1");
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_NE(config_hash(a), config_hash(parse_run_config("seed: 2")));
  EXPECT_NE(config_hash(a), config_hash(parse_run_config("seed: 1\ntrain: {steps: 10}")));
  EXPECT_EQ(config_hash(a), config_hash(parse_run_config("seed: 1\noutput_dir: elsewhere")));
}

TEST(RunConfig, UnknownKeysRejectedWithLine) {
  EXPECT_EQ(error_of("seed: 1\nbogus: 2\n"), "run.yaml:2:1: unknown key 'bogus'");
  const auto msg = error_of("model:\n  audio_backend:\n    num_stage: 3\n");
  EXPECT_EQ(msg, "run.yaml:3:5: unknown key 'model.audio_backend.num_stage'");
}

TEST(RunConfig, TypeErrorsCarryLocation) {
  EXPECT_EQ(error_of("train:\n  steps: many\n"), "run.yaml:2:10: train.steps: cannot read 'many' as an integer");
  EXPECT_NE(error_of("model: [1, 2]").find("run.yaml:1:8: "), std::string::npos);
}

TEST(RunConfig, StageListsMustMatchStageCount) {
  const auto msg = error_of("model:\n  visual_backend:\n    num_stages: 2\n    blocks_per_stage: [1]\n");
  EXPECT_NE(msg.find("run.yaml:4:23: model.visual_backend.blocks_per_stage: has 1 entries"), std::string::npos)
      << msg;
}

TEST(RunConfig, SemanticErrorsPointAtTheirSection) {
  EXPECT_NE(error_of("seed: 0\ntrain:\n  batch_size: 0\n").find("run.yaml:3:3: train:"), std::string::npos);
  EXPECT_NE(error_of("model:\n  preset: huge\n").find("run.yaml:2:11: model.preset: unknown preset"),
            std::string::npos);
  EXPECT_NE(error_of("model: {modality: audio}\neval: {mode: sideways}").find("eval.mode"), std::string::npos);
  EXPECT_NE(error_of("model: {preset: full, d_model: 8}").find("d_model"), std::string::npos);
  EXPECT_NE(error_of("train: {snr_range: [1]}").find("snr_range"), std::string::npos);
  EXPECT_NE(error_of("seed: [").find("run.yaml:"), std::string::npos);
}

TEST(RunConfig, MissingFileNamesPath) {
  try {
    load_run_config("/nonexistent/run.yaml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.yaml"), std::string::npos);
  }
}

TEST(RunConfig, ThreadsDefaultFromEnvironment) {
  ::setenv("AVSR_THREADS", "3", 1);
  EXPECT_EQ(parse_run_config("").threads, 3);
  EXPECT_EQ(parse_run_config("threads: 2").threads, 2);
  ::setenv("AVSR_THREADS", "zero", 1);
  EXPECT_THROW(parse_run_config(""), UsageError);
  ::unsetenv("AVSR_THREADS");
  EXPECT_EQ(parse_run_config("").threads, 1);
}

TEST(RunConfig, EvalDatasetAndLmAreDeterministic) {
  const auto cfg = parse_run_config("eval: {utterances: 4, lm_order: 2, lm_train_utterances: 50}");
  const auto a = eval_dataset(cfg), b = eval_dataset(cfg);
  ASSERT_EQ(a.size(), 4u);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].labels, b[i].labels);
    EXPECT_EQ(a[i].audio.samples, b[i].audio.samples);
  }
  const auto lm = train_toy_lm(cfg);
  EXPECT_EQ(lm.order(), 2);
  EXPECT_DOUBLE_EQ(lm.score({1, 2}), train_toy_lm(cfg).score({1, 2}));
}

}  // namespace
}  // namespace avsr

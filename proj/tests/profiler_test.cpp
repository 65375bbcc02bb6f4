// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <string>

#include "avsr/profiler.hpp"
#include "avsr/train.hpp"

namespace avsr {
namespace {

const CostRecord& find(const CostReport& r, const std::string& name) {
  for (const auto& rec : r.records) {
    if (rec.name == name) return rec;
  }
  throw std::runtime_error("no record " + name);
}

int64_t stage1_flops(const CostReport& r, int64_t blocks) {
  int64_t f = 0;
  for (int64_t b = 1; b <= blocks; ++b) f += find(r, "audio_backend.block" + std::to_string(b)).flops;
  return f;
}

ModelConfig with_stage1(ModelConfig c, AttentionVariant v, int64_t factor) {
  c.audio_stages.front().attention = v;
  c.audio_stages.front().factor = factor;
  return c;
}

TEST(Profiler, ConventionGuard) {
  EXPECT_EQ(std::string(kFlopConvention).substr(0, 12), "avsr-flops/1");
  // Pinned totals: any change to the counting rules must bump the version above.
  const auto r = profile(tiny_config(Modality::kAudioVisual), 1.0);
  EXPECT_EQ(r.total_flops, 1983152);
  EXPECT_NE(r.csv().find(kFlopConvention), std::string::npos);
  EXPECT_NE(r.table().find(kFlopConvention), std::string::npos);
}

TEST(Profiler, BlockFlopsHandValue) {
  AttentionConfig a;
  a.heads = 1;
  a.variant = AttentionVariant::kRegular;
  // ffn 128 + attention 184 + positions 28 + conv 72 + ffn 128
  EXPECT_EQ(conformer_block_flops(4, 2, 2, 1, a, 3, 4), 540);
}

TEST(Profiler, TotalsAreSums) {
  for (auto m : {Modality::kAudio, Modality::kVisual, Modality::kAudioVisual}) {
    const auto r = profile(full_config(m));
    int64_t p = 0, f = 0, fp = 0, ff = 0;
    for (const auto& rec : r.records) {
      p += rec.params;
      f += rec.flops;
      if (rec.frontend) {
        fp += rec.params;
        ff += rec.flops;
      }
    }
    EXPECT_EQ(r.total_params, p);
    EXPECT_EQ(r.total_flops, f);
    EXPECT_EQ(r.frontend_params, fp);
    EXPECT_EQ(r.frontend_flops, ff);
    EXPECT_EQ(r.backend_flops + r.frontend_flops, r.total_flops);
  }
}

TEST(Profiler, LengthsAtTenSeconds) {
  const auto r = profile(full_config(Modality::kAudioVisual), 10.0);
  EXPECT_EQ(find(r, "audio_frontend").length, 1001 / 2 + 1);
  EXPECT_EQ(find(r, "video_frontend").length, 250);
  EXPECT_EQ(find(r, "fusion").length, 125);
  EXPECT_EQ(find(r, "head").length, 125);
}

TEST(Profiler, ParamsEqualInstantiatedTinyAndDesk) {
  for (auto m : {Modality::kAudio, Modality::kVisual, Modality::kAudioVisual}) {
    for (const auto& cfg : {tiny_config(m), desk_config(m, 12), desk_config(m, 20, 48)}) {
      const auto r = profile(cfg, 2.0);
      const auto problems = cross_check_params(cfg, r);
      EXPECT_TRUE(problems.empty()) << problems.front();
      Rng rng(0);
      AvsrModel<float> model(cfg, rng);
      EXPECT_EQ(r.total_params, model.num_parameters());
    }
  }
}

TEST(Profiler, ParamsEqualInstantiatedFullSize) {
  for (auto m : {Modality::kAudio, Modality::kVisual, Modality::kAudioVisual}) {
    const auto cfg = full_config(m);
    const auto problems = cross_check_params(cfg, profile(cfg));
    EXPECT_TRUE(problems.empty()) << problems.front();
  }
}

TEST(Profiler, CrossCheckReportsMismatch) {
  const auto cfg = tiny_config(Modality::kAudio);
  auto r = profile(cfg);
  r.records.back().params += 1;
  const auto problems = cross_check_params(cfg, r);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_NE(problems[0].find("head"), std::string::npos);
}

TEST(Profiler, StageOneOrderingAtTenSeconds) {
  const auto base = full_config(Modality::kAudio);
  const int64_t blocks = base.audio_stages.front().num_blocks;
  const auto patch = profile(with_stage1(base, AttentionVariant::kPatch, 3));
  const auto grouped = profile(with_stage1(base, AttentionVariant::kGrouped, 3));
  const auto regular = profile(with_stage1(base, AttentionVariant::kRegular, 1));
  EXPECT_LT(stage1_flops(patch, blocks), stage1_flops(grouped, blocks));
  EXPECT_LT(stage1_flops(grouped, blocks), stage1_flops(regular, blocks));
  EXPECT_LT(patch.total_flops, regular.total_flops);
  // Parameters do not depend on the attention variant.
  EXPECT_EQ(patch.total_params, regular.total_params);
}

TEST(Profiler, RegularToPatchReducesTotalForEveryModality) {
  for (auto m : {Modality::kAudio, Modality::kAudioVisual}) {
    const auto base = full_config(m);
    EXPECT_LT(profile(with_stage1(base, AttentionVariant::kPatch, 3)).total_flops,
              profile(with_stage1(base, AttentionVariant::kRegular, 1)).total_flops);
  }
}

TEST(Profiler, DoublingDuration) {
  auto cfg = full_config(Modality::kVisual);
  cfg.visual_stages.front().attention = AttentionVariant::kRegular;
  const auto a = profile(cfg, 10.0), b = profile(cfg, 20.0);
  // Frame-wise layers at lengths 250 -> 500 and 125 -> 250.
  EXPECT_EQ(find(b, "video_frontend").flops, 2 * find(a, "video_frontend").flops);
  EXPECT_EQ(find(b, "head").flops, 2 * find(a, "head").flops);
  EXPECT_EQ(find(b, "visual_backend.inter_ctc3").flops, 2 * find(a, "visual_backend.inter_ctc3").flops);
  EXPECT_GT(find(b, "visual_backend.block1").flops, 2 * find(a, "visual_backend.block1").flops);

  AttentionConfig reg;
  reg.variant = AttentionVariant::kRegular;
  reg.d_model = 180;
  EXPECT_GT(attention_flops(reg, 1002), 2 * attention_flops(reg, 501));
}

TEST(Profiler, RejectsNonPositiveDuration) {
  EXPECT_THROW(profile(tiny_config(Modality::kAudio), 0.0), ParameterError);
  EXPECT_THROW(profile(tiny_config(Modality::kAudio), -1.0), ParameterError);
}

TEST(FlopSweep, RecordCountAndOrdering) {
  const auto cfg = full_config(Modality::kAudio);
  const std::vector<SweepVariant> variants = {{AttentionVariant::kRegular, 1},
                                              {AttentionVariant::kGrouped, 3},
                                              {AttentionVariant::kPatch, 3}};
  std::vector<int64_t> ns;
  for (int64_t n = 50; n <= 1500; n += 50) ns.push_back(n);
  const auto recs = flop_sweep(cfg, variants, ns);
  ASSERT_EQ(recs.size(), variants.size() * ns.size());
  for (size_t i = 0; i < ns.size(); ++i) {
    const auto& r = recs[i];
    const auto& g = recs[ns.size() + i];
    const auto& p = recs[2 * ns.size() + i];
    EXPECT_EQ(r.variant, "regular");
    EXPECT_EQ(g.variant, "grouped(3)");
    EXPECT_EQ(p.variant, "patch(3)");
    EXPECT_EQ(r.n, ns[i]);
    EXPECT_LE(p.flops, g.flops);
    EXPECT_LE(g.flops, r.flops);
  }
  const auto csv = sweep_csv(recs);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(recs.size()) + 2);
}

TEST(FlopSweep, UnitFactorsCoincideWithRegular) {
  const auto cfg = full_config(Modality::kAudio);
  const std::vector<int64_t> ns = {1, 7, 64, 501, 999};
  const auto recs = flop_sweep(cfg,
                               {{AttentionVariant::kRegular, 1},
                                {AttentionVariant::kPatch, 1},
                                {AttentionVariant::kGrouped, 1}},
                               ns);
  for (size_t i = 0; i < ns.size(); ++i) {
    EXPECT_EQ(recs[ns.size() + i].flops, recs[i].flops);
    EXPECT_EQ(recs[2 * ns.size() + i].flops, recs[i].flops);
  }
}

TEST(FlopSweep, RejectsEmptyInputs) {
  const auto cfg = tiny_config(Modality::kAudio);
  EXPECT_THROW(flop_sweep(cfg, {}, {10}), ParameterError);
  EXPECT_THROW(flop_sweep(cfg, {{AttentionVariant::kRegular, 1}}, {}), ParameterError);
  EXPECT_THROW(flop_sweep(cfg, {{AttentionVariant::kRegular, 1}}, {0}), ParameterError);
}

}  // namespace
}  // namespace avsr

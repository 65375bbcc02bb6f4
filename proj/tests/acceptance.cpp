// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by number (all when none are given). Exit status 1 on any failure.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avsr/attention.hpp"
#include "avsr/audio.hpp"
#include "avsr/config.hpp"
#include "avsr/conformer.hpp"
#include "avsr/ctc.hpp"
#include "avsr/data.hpp"
#include "avsr/grad_suite.hpp"
#include "avsr/ops.hpp"
#include "avsr/profiler.hpp"
#include "avsr/train.hpp"
#include "avsr/video.hpp"

namespace avsr {
namespace {

namespace fs = std::filesystem;

// Pinned tolerances.
constexpr double kPatchTol = 1e-6;
constexpr double kCtcRelTol = 1e-10;
constexpr double kCtcSumTol = 1e-9;
constexpr double kBranchParamTol = 0.05;
constexpr double kVideoParamTol = 0.02;
constexpr double kSnrTol = 0.1;
constexpr double kToyTerBound = 0.05;
constexpr int64_t kToyStepBound = 3000;
constexpr double kBaselineTol = 0.01;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed sub-checks; the first few are reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o{failures_.empty(), summary};
    for (size_t i = 0; i < failures_.size() && i < 3; ++i) o.detail += "; " + failures_[i];
    if (failures_.size() > 3) o.detail += "; ...";
    return o;
  }

 private:
  std::vector<std::string> failures_;
};

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1

Outcome patch_equivalence() {
  Rng rng(101);
  Checks c;
  NoGradGuard ng;
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t heads = int64_t{1} << rng.uniform_int(0, 2);
    const int64_t d = heads * rng.uniform_int(1, 64 / heads);
    const int64_t n = rng.uniform_int(1, 32);
    AttentionConfig cfg;
    cfg.d_model = d;
    cfg.heads = heads;
    cfg.n_max = 64;
    MultiHeadAttention<float> m(cfg, rng);
    for (auto& [name, t] : m.named_parameters()) {
      for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    const auto x = random_tensor<float>({n, d}, rng);
    const auto a = m.patched(x, 1), b = m.regular(x);
    double diff = 0;
    for (int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, static_cast<double>(std::abs(a[i] - b[i])));
    worst = std::max(worst, diff);
    c.expect(diff <= kPatchTol, "n=" + std::to_string(n) + " d=" + std::to_string(d));
    for (int64_t k = 2; k <= 4; ++k) {
      const auto y = m.patched(x, k);
      bool constant = true;
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) constant &= y[i * d + j] == y[(i / k) * k * d + j];
      }
      c.expect(constant, "patch k=" + std::to_string(k) + " not constant");
    }
  }
  std::ostringstream s;
  s << "max|patch(k=1) - regular| = " << worst << " over 50 cases (tol " << kPatchTol
    << "), outputs exactly constant within patches for k=2..4";
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 2

std::vector<LabelSeq> all_labels(int64_t v, int64_t max_len) {
  std::vector<LabelSeq> out{{}};
  for (size_t i = 0; i < out.size(); ++i) {
    if (static_cast<int64_t>(out[i].size()) == max_len) continue;
    for (int64_t s = 1; s < v; ++s) {
      auto y = out[i];
      y.push_back(s);
      out.push_back(y);
    }
  }
  return out;
}

Tensor<double> random_probs(int64_t t, int64_t v, Rng& rng) {
  NoGradGuard ng;
  return softmax(random_tensor<double>({t, v}, rng, -2, 2), 1);
}

Outcome ctc_oracle() {
  Rng rng(202);
  Checks c;
  double worst = 0, worst_sum = 0;
  int64_t pairs = 0;
  for (int64_t t = 1; t <= 6; ++t) {
    for (int64_t v = 2; v <= 4; ++v) {
      const auto labels = all_labels(v, 3);
      for (int trial = 0; trial < 50; ++trial) {
        const auto z = random_probs(t, v, rng);
        auto lz = z.clone();
        for (auto& x : lz.vec()) x = std::log(x);
        for (const auto& y : labels) {
          ++pairs;
          const double p = ctc_brute_force(z, y);
          bool infeasible = false;
          const double loss = ctc_loss(lz, y, -1, &infeasible).item();
          if (p == 0.0) {
            c.expect(infeasible && std::isinf(loss), "infeasible target not flagged");
            continue;
          }
          const double rel = std::abs(std::exp(-loss) - p) / p;
          worst = std::max(worst, rel);
          c.expect(rel <= kCtcRelTol, "T=" + std::to_string(t) + " V=" + std::to_string(v));
        }
      }
    }
  }
  for (int64_t t = 1; t <= 4; ++t) {
    for (int64_t v = 2; v <= 3; ++v) {
      const auto labels = all_labels(v, t);
      for (int trial = 0; trial < 50; ++trial) {
        const auto z = random_probs(t, v, rng);
        double total = 0;
        for (const auto& y : labels) total += ctc_brute_force(z, y);
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        c.expect(std::abs(total - 1.0) <= kCtcSumTol, "sum T=" + std::to_string(t));
      }
    }
  }
  std::ostringstream s;
  s << "max relative error " << worst << " over " << pairs << " (Z, y) pairs (tol " << kCtcRelTol
    << "); max |sum P(y|Z) - 1| = " << worst_sum << " (tol " << kCtcSumTol << ")";
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 3

Outcome gradient_suite() {
  const auto cases = run_grad_suite("all", 3, 303);
  Checks c;
  double worst = 0;
  std::set<std::string> modules;
  for (const auto& g : cases) {
    modules.insert(g.module);
    worst = std::max(worst, g.result.max_rel_error);
    c.expect(g.result.passed, g.module + "/" + g.name + " rel " + std::to_string(g.result.max_rel_error));
  }
  c.expect(modules.size() == grad_suite_modules().size(), "missing module");
  std::ostringstream s;
  s << cases.size() << " checks over " << modules.size() << " modules x 3 draws, worst relative error " << worst
    << " (tol 1e-3)";
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 4

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

Outcome shape_contracts() {
  Rng rng(404);
  Checks c;
  NoGradGuard ng;
  const auto full = full_config(Modality::kAudioVisual);

  AudioStem<float> stem(full.audio_stem_filters, full.audio_stages.front().d_model, rng);
  for (int64_t n : {1600, 3200, 16000, 47999, 160000}) {
    Waveform w;
    for (int64_t i = 0; i < n; ++i) w.samples.push_back(static_cast<float>(rng.uniform(-0.3, 0.3)));
    const auto y = stem.forward(log_mel(w));
    c.expect(y.shape() == Shape{n / 320 + 1, 180}, "audio " + std::to_string(n) + " -> " + shape_str(y.shape()));
  }

  VideoFrontend<float> fe(full.video, rng);
  std::vector<Shape> traj;
  fe.trunk(fe.stem(Tensor<float>::zeros({1, 88, 88})), &traj);
  std::vector<int64_t> sides;
  for (const auto& s : traj) sides.push_back(s[2]);
  c.expect(sides == std::vector<int64_t>{22, 22, 11, 6, 3}, "visual trajectory");
  const auto vout = fe.forward(random_tensor<float>({3, 88, 88}, rng));
  c.expect(vout.shape() == Shape{3, 256}, "visual output " + shape_str(vout.shape()));

  // Lengths depend only on the stage layout; narrow copies keep this cheap.
  auto narrow = full;
  for (auto& s : narrow.audio_stages) s.d_model = 8;
  for (auto& s : narrow.visual_stages) s.d_model = 8;
  Encoder<float> audio("audio", narrow.audio_stages, narrow.audio_inter, narrow, rng);
  Encoder<float> visual("visual", narrow.visual_stages, narrow.visual_inter, narrow, rng);
  const auto a = audio.stage_lengths(AudioStem<float>::output_frames(160000));
  const auto v = visual.stage_lengths(250);
  c.expect(AudioStem<float>::output_frames(160000) == 501, "audio frames at 10 s");
  c.expect(a == std::vector<int64_t>{251, 126, 126}, "audio stage lengths");
  c.expect(v == std::vector<int64_t>{125, 125}, "visual stage lengths");
  return c.outcome(
      "audio front-end n/320+1 x 180 at 5 lengths; visual 22->11->6->3 then (T_v,256); stages 501->251->126 "
      "audio, 250->125 visual");
}

// ---------------------------------------------------------------- 5

Outcome parameter_parity() {
  Checks c;
  std::ostringstream s;
  s << std::fixed;
  s.precision(2);
  struct Branch {
    Modality m;
    const char* name;
    double target;
  };
  for (const auto& b : {Branch{Modality::kAudio, "audio", 17.9e6}, Branch{Modality::kVisual, "visual", 13.6e6},
                        Branch{Modality::kAudioVisual, "av", 15.9e6}}) {
    const auto cfg = full_config(b.m);
    Rng rng(505);
    AvsrModel<float> model(cfg, rng);
    const auto br = model.param_breakdown();
    const double got = static_cast<double>(b.m == Modality::kAudio    ? br.audio_backend
                                           : b.m == Modality::kVisual ? br.visual_backend
                                                                      : br.av_encoder);
    c.expect(std::abs(got / b.target - 1.0) <= kBranchParamTol, std::string(b.name) + " branch");
    s << b.name << " " << got / 1e6 << "M (target " << b.target / 1e6 << "M), ";
    if (b.m == Modality::kVisual) {
      const double fe = static_cast<double>(br.video_frontend);
      c.expect(std::abs(fe / 11.3e6 - 1.0) <= kVideoParamTol, "visual front-end");
      s << "visual front-end " << fe / 1e6 << "M (target 11.30M), ";
    }
    const auto report = profile(cfg);
    const auto mismatches = cross_check_params(cfg, report);
    c.expect(mismatches.empty(), mismatches.empty() ? "" : mismatches.front());
    c.expect(report.total_params == model.num_parameters(), std::string(b.name) + " profiler total");
  }
  s << "profiler counts equal instantiated counts for AO, VO and AV (tol " << kBranchParamTol * 100 << "% / "
    << kVideoParamTol * 100 << "%)";
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 6

Outcome complexity_ordering() {
  Checks c;
  const auto base = full_config(Modality::kAudio);
  const int64_t blocks = base.audio_stages.front().num_blocks;
  auto with_stage1 = [&](AttentionVariant v, int64_t factor) {
    auto cfg = base;
    cfg.audio_stages.front().attention = v;
    cfg.audio_stages.front().factor = factor;
    return profile(cfg);
  };
  auto stage1 = [&](const CostReport& r) {
    int64_t f = 0;
    for (const auto& rec : r.records) {
      for (int64_t b = 1; b <= blocks; ++b) f += rec.name == "audio_backend.block" + std::to_string(b) ? rec.flops : 0;
    }
    return f;
  };
  const auto patch = with_stage1(AttentionVariant::kPatch, 3);
  const auto grouped = with_stage1(AttentionVariant::kGrouped, 3);
  const auto regular = with_stage1(AttentionVariant::kRegular, 1);
  c.expect(stage1(patch) < stage1(grouped), "patch(3) < grouped(3)");
  c.expect(stage1(grouped) < stage1(regular), "grouped(3) < regular");
  c.expect(patch.total_flops < regular.total_flops, "total regular -> patch(3)");
  for (auto m : {Modality::kVisual, Modality::kAudioVisual}) {
    auto r = full_config(m), p = full_config(m);
    for (auto* cfg : {&r, &p}) {
      const bool is_patch = cfg == &p;
      for (auto* stages : {&cfg->audio_stages, &cfg->visual_stages}) {
        for (auto& st : *stages) st = {st.num_blocks, st.d_model, AttentionVariant::kRegular, 1};
      }
      cfg->av_stage = {cfg->av_stage.num_blocks, cfg->av_stage.d_model, AttentionVariant::kRegular, 1};
      if (is_patch) {
        auto& first = m == Modality::kVisual ? cfg->visual_stages.front() : cfg->audio_stages.front();
        first.attention = AttentionVariant::kPatch;
        first.factor = 3;
      }
    }
    c.expect(profile(p).total_flops < profile(r).total_flops, modality_name(m) + " total regular -> patch(3)");
  }
  std::ostringstream s;
  const std::string convention = kFlopConvention;
  s << convention.substr(0, convention.find(':')) << ", audio stage 1 at 10 s: patch(3) " << stage1(patch) << " < grouped(3) "
    << stage1(grouped) << " < regular " << stage1(regular) << "; AO total " << regular.total_flops << " -> "
    << patch.total_flops;
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 7

Outcome joint_loss_arithmetic() {
  using TD = Tensor<double>;
  Checks c;
  const auto f = TD::scalar(2.0, true);
  const std::vector<TD> inters{TD::scalar(4.0, true), TD::scalar(6.0, true)};
  auto j = joint_loss(f, inters, 0.5);
  c.expect(j.item() == 3.5, "lambda=0.5 value");
  j.backward();
  c.expect(f.grad()[0] == 0.5, "d/d final");
  c.expect(inters[0].grad()[0] == 0.25 && inters[1].grad()[0] == 0.25, "d/d inter");
  c.expect(joint_loss(TD::scalar(1.0), {TD::scalar(5.0)}, 0.5).item() == 3.0, "K=1");
  c.expect(joint_loss(TD::scalar(2.0), {TD::scalar(2.5), TD::scalar(3.5), TD::scalar(6.0)}, 0.5).item() == 3.0, "K=3");
  c.expect(joint_loss(TD::scalar(1.7), inters, 0.0).item() == 1.7, "lambda=0");
  c.expect(joint_loss(TD::scalar(1.7), {}, 0.5).item() == 1.7, "K=0");
  return c.outcome(
      "lambda=0.5: (2; 4, 6) -> 3.5 with gradients 0.5 / 0.25 / 0.25, K=1 and K=3 hand values exact; lambda=0 and "
      "K=0 return the final loss exactly");
}

// ---------------------------------------------------------------- 8

Outcome snr_machinery() {
  Rng rng(808);
  Checks c;
  ToyTaskSpec task;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto utt = make_toy_utterance(task, rng);
    for (auto& v : utt.audio.samples) v *= 0.2f;  // headroom so nothing clips
    NoiseMixSpec spec;
    spec.kind = static_cast<NoiseKind>(trial % 3);
    if (spec.kind != NoiseKind::kWhite) spec.noise = toy_babble(task, rng, 7000);
    spec.snr_db = rng.uniform(-10, 20);
    const auto r = mix_noise(utt.audio, spec, rng);
    std::vector<float> noise(r.mixed.samples.size());
    for (size_t i = 0; i < noise.size(); ++i) noise[i] = r.mixed.samples[i] - utt.audio.samples[i];
    const double err = std::abs(measure_snr_db(utt.audio.samples, noise) - spec.snr_db);
    worst = std::max(worst, err);
    c.expect(r.clip_fraction == 0.0 && err <= kSnrTol, "trial " + std::to_string(trial));
  }
  c.expect(noam_lr(10000) == 1e-3, "peak value");
  double peak = 0;
  int64_t argmax = 0;
  for (int64_t step = 1; step <= 40000; ++step) {
    if (noam_lr(step) > peak) peak = noam_lr(step), argmax = step;
  }
  c.expect(argmax == 10000, "peak step " + std::to_string(argmax));
  std::ostringstream s;
  s << "max |measured - target| = " << worst << " dB over 100 mixes (tol " << kSnrTol << "); Noam peak "
    << noam_lr(10000) << " at step " << argmax;
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 9

fs::path source_path(const std::string& rel) { return fs::path(AVSR_SOURCE_DIR) / rel; }

struct Trained {
  RunConfig cfg;
  std::unique_ptr<AvsrModel<float>> model;
  double seconds = 0;
};

Trained train_from(const std::string& config) {
  Trained t;
  t.cfg = load_run_config(source_path(config));
  t.cfg.train.out_dir.clear();
  set_num_threads(t.cfg.threads);
  Rng rng(t.cfg.seed);
  t.model = std::make_unique<AvsrModel<float>>(t.cfg.model(), rng);
  const auto res = train(*t.model, t.cfg.train);
  if (!res.metrics.empty()) t.seconds = res.metrics.back().wall_seconds;
  return t;
}

double wer_at(Trained& t, double snr_db) {
  auto opt = make_eval_options(t.cfg);
  opt.noise = NoiseMixSpec{NoiseKind::kBabble, {}, 0.0};
  return snr_sweep(*t.model, eval_dataset(t.cfg), opt, {snr_db}).front().wer;
}

Outcome toy_learning() {
  Checks c;
  std::ostringstream s;
  auto ao = train_from("configs/toy_ao.yaml");
  c.expect(ao.cfg.train.steps <= kToyStepBound, "step budget");
  const auto rep = evaluate(*ao.model, eval_dataset(ao.cfg), make_eval_options(ao.cfg));
  const double ter = rep.greedy_wer;
  c.expect(ter < kToyTerBound, "AO token error " + std::to_string(ter));
  s << "AO clean token error " << ter << " after " << ao.cfg.train.steps << " steps (bound " << kToyTerBound << ")";

  const auto baseline_file = source_path("tests/data/toy_ao_baseline.txt");
  if (fs::exists(baseline_file)) {
    std::ifstream is(baseline_file);
    std::string key;
    double baseline = -1;
    is >> key >> baseline;
    c.expect(key == "ao_clean_token_error" && std::abs(ter - baseline) <= kBaselineTol,
             "baseline " + std::to_string(baseline));
    s << ", baseline " << baseline << " (tol " << kBaselineTol << ")";
  } else if (ter < kToyTerBound) {
    fs::create_directories(baseline_file.parent_path());
    std::ofstream(baseline_file) << "ao_clean_token_error " << ter << "\n";
    s << ", baseline recorded";
  }

  auto ao_noisy = train_from("configs/toy_ao_babble.yaml");
  auto av_noisy = train_from("configs/toy_av_babble.yaml");
  c.expect(ao_noisy.cfg.train.steps == av_noisy.cfg.train.steps, "equal training budgets");
  const double ao_wer = wer_at(ao_noisy, -5.0), av_wer = wer_at(av_noisy, -5.0);
  c.expect(av_wer < ao_wer, "AV not below AO at -5 dB");
  s << "; at -5 dB babble AV WER " << av_wer << " < AO " << ao_wer << " (" << av_noisy.cfg.train.steps
    << " steps each)";
  return c.outcome(s.str());
}

// ---------------------------------------------------------------- 10

Outcome determinism() {
  Checks c;
  auto cfg = parse_run_config(
      "seed: 3\nthreads: 1\nmodel: {preset: tiny, modality: audio-visual}\n"
      "train: {steps: 4, batch_size: 2, checkpoint_every: 1, swa_last: 2, swa_recalibration_batches: 2}\n",
      "determinism");
  set_num_threads(cfg.threads);
  const auto root = fs::temp_directory_path() / ("avsr_acceptance_" + std::to_string(::getpid()));
  std::vector<std::string> bytes;
  Checkpoint final_ckpt;
  for (int run = 0; run < 2; ++run) {
    cfg.train.out_dir = root / ("run" + std::to_string(run));
    Rng rng(cfg.seed);
    AvsrModel<float> model(cfg.model(), rng);
    const auto res = train(model, cfg.train);
    std::string all;
    for (const auto& e : fs::directory_iterator(cfg.train.out_dir)) {
      if (e.path().extension() == ".ckpt") all += e.path().filename().string() + slurp(e.path());
    }
    bytes.push_back(all);
    final_ckpt = res.final;
  }
  fs::remove_all(root);
  c.expect(!bytes[0].empty() && bytes[0] == bytes[1], "checkpoints differ");
  const auto one = swa_average({final_ckpt});
  bool identity = one.tensors.size() == final_ckpt.tensors.size();
  for (size_t i = 0; identity && i < one.tensors.size(); ++i) {
    identity = one.tensors[i].first == final_ckpt.tensors[i].first &&
               one.tensors[i].second.vec() == final_ckpt.tensors[i].second.vec();
  }
  c.expect(identity, "SWA of one checkpoint is not the identity");
  std::ostringstream s;
  s << "two runs (seed 3, 1 thread) wrote byte-identical checkpoints (" << bytes[0].size()
    << " bytes incl. SWA); SWA of N=1 is bit-exact identity";
  return c.outcome(s.str());
}

int run(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"patch-equivalence", patch_equivalence}, {"ctc-oracle", ctc_oracle},
      {"gradient-suite", gradient_suite},       {"shape-contracts", shape_contracts},
      {"parameter-parity", parameter_parity},   {"complexity-ordering", complexity_ordering},
      {"joint-loss", joint_loss_arithmetic},    {"snr-machinery", snr_machinery},
      {"toy-learning", toy_learning},           {"determinism", determinism}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    char* end = nullptr;
    const long k = std::strtol(argv[i], &end, 10);
    if (*end != '\0' || k < 1 || k > static_cast<long>(criteria.size())) {
      std::cerr << "usage: acceptance [criterion number 1-" << criteria.size() << "]...\n";
      return 2;
    }
    selected.insert(static_cast<int>(k));
  }
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(k)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << k << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}

}  // namespace
}  // namespace avsr

int main(int argc, char** argv) { return avsr::run(argc, argv); }

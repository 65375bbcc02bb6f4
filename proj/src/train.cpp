// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "avsr/tensor_io.hpp"

namespace avsr {

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'V', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;
constexpr double kBatchNormMomentum = 0.1;

enum class Purpose : uint64_t { kData = 1, kAugment = 2, kDropout = 3, kEval = 4, kRecalibrate = 5 };

// splitmix64 finaliser; spreads (purpose, step, index) over the stream space.
uint64_t mix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t stream_id(Purpose p, int64_t step, int64_t index) {
  return mix(mix(mix(static_cast<uint64_t>(p)) ^ static_cast<uint64_t>(step)) ^ static_cast<uint64_t>(index));
}

Mode mode_for(const ModelConfig& cfg) {
  switch (cfg.modality) {
    case Modality::kAudio: return Mode::kAudioOnly;
    case Modality::kVisual: return Mode::kVideoOnly;
    case Modality::kAudioVisual: break;
  }
  return Mode::kAudioVisual;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw InputError("checkpoint: truncated string");
  return s;
}

std::vector<std::string> manifest_diff(const NamedTensors<float>& a, const NamedTensors<float>& b) {
  std::vector<std::string> diff;
  const size_t n = std::max(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    if (i >= a.size()) {
      diff.push_back("+" + b[i].first);
    } else if (i >= b.size()) {
      diff.push_back("-" + a[i].first);
    } else if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
      diff.push_back(a[i].first + " " + shape_str(a[i].second.shape()) + " vs " + b[i].first + " " +
                     shape_str(b[i].second.shape()));
    }
  }
  return diff;
}

}  // namespace

template <class T>
void adam_step(const NamedTensors<T>& params, OptState<T>& state, double lr, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(static_cast<size_t>(p.numel()), T(0));
      state.v.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
  }
  if (state.m.size() != params.size()) throw UsageError("adam: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != static_cast<size_t>(p.numel())) throw UsageError("adam: moment shape mismatch for " + name);
    auto* node = p.node();
    const bool has = node->grad.size() == node->data.size();
    for (size_t j = 0; j < m.size(); ++j) {
      const double g0 = has ? static_cast<double>(node->grad[j]) : 0.0;
      if (!std::isfinite(g0)) throw NumericError("adam: non-finite gradient in " + name);
      const double w = node->data[j];
      const double g = g0 + cfg.weight_decay * w;
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      node->data[j] = static_cast<T>(w - lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
    }
  }
}

double noam_lr(int64_t step, int64_t warmup, double peak) {
  if (step < 1) throw ParameterError("noam_lr: step must be >= 1");
  if (warmup < 1) throw ParameterError("noam_lr: warmup must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

Checkpoint capture(const Module<float>& model, int64_t step, const std::string& stamp) {
  Checkpoint c;
  c.step = step;
  c.stamp = stamp;
  for (auto& [name, t] : model.named_parameters()) c.tensors.emplace_back(name, t.detach().clone());
  for (auto& [name, t] : model.named_buffers()) c.tensors.emplace_back(name, t.detach().clone());
  return c;
}

void restore(Module<float>& model, const Checkpoint& ckpt) {
  NamedTensors<float> live = model.named_parameters();
  for (auto& b : model.named_buffers()) live.push_back(b);
  for (size_t i = 0; i < std::max(live.size(), ckpt.tensors.size()); ++i) {
    if (i >= live.size()) throw InputError("checkpoint has extra tensor " + ckpt.tensors[i].first);
    if (i >= ckpt.tensors.size()) throw InputError("checkpoint is missing tensor " + live[i].first);
    const auto& [name, src] = ckpt.tensors[i];
    if (name != live[i].first || src.shape() != live[i].second.shape()) {
      throw InputError("checkpoint manifest mismatch at " + live[i].first + " " +
                       shape_str(live[i].second.shape()) + ": checkpoint has " + name + " " +
                       shape_str(src.shape()));
    }
    live[i].second.vec() = src.vec();
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_u64(os, static_cast<uint64_t>(ckpt.step));
  write_string(os, ckpt.stamp);
  write_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_string(os, name);
    write_tensor(os, t);
  }
  if (!os) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw InputError(path.string() + " is not a checkpoint");
  }
  if (read_u32(is) != kCheckpointVersion) throw InputError(path.string() + ": unsupported checkpoint version");
  Checkpoint c;
  c.step = static_cast<int64_t>(read_u64(is));
  c.stamp = read_string(is);
  const uint32_t n = read_u32(is);
  for (uint32_t i = 0; i < n; ++i) {
    auto name = read_string(is);
    c.tensors.emplace_back(std::move(name), read_tensor<float>(is));
  }
  return c;
}

Checkpoint swa_average(const std::vector<Checkpoint>& ckpts) {
  if (ckpts.empty()) throw ParameterError("swa: need at least one checkpoint");
  Checkpoint out;
  out.step = ckpts.back().step;
  out.stamp = ckpts.back().stamp;
  for (size_t k = 1; k < ckpts.size(); ++k) {
    const auto diff = manifest_diff(ckpts[0].tensors, ckpts[k].tensors);
    if (!diff.empty()) {
      std::string msg = "swa: checkpoint " + std::to_string(k) + " manifest differs:";
      for (const auto& d : diff) msg += " " + d + ";";
      throw InputError(msg);
    }
  }
  const double inv = 1.0 / static_cast<double>(ckpts.size());
  for (size_t i = 0; i < ckpts[0].tensors.size(); ++i) {
    const auto& [name, first] = ckpts[0].tensors[i];
    std::vector<double> acc(first.vec().begin(), first.vec().end());
    for (size_t k = 1; k < ckpts.size(); ++k) {
      const auto& v = ckpts[k].tensors[i].second.vec();
      for (size_t j = 0; j < acc.size(); ++j) acc[j] += v[j];
    }
    std::vector<float> mean(acc.size());
    for (size_t j = 0; j < acc.size(); ++j) mean[j] = static_cast<float>(acc[j] * inv);
    out.tensors.emplace_back(name, Tensor<float>::from(first.shape(), std::move(mean)));
  }
  return out;
}

void recalibrate_batch_norm(Module<float>& model, int64_t passes, const std::function<void(int64_t)>& run) {
  auto bufs = model.named_buffers();
  std::vector<std::vector<double>> avg(bufs.size());
  for (size_t b = 0; b < bufs.size(); ++b) avg[b].assign(bufs[b].second.vec().begin(), bufs[b].second.vec().end());
  model.train();
  for (int64_t i = 0; i < passes; ++i) {
    std::vector<std::vector<float>> before;
    for (auto& [name, t] : bufs) before.push_back(t.vec());
    run(i);
    // The layer blended the batch statistic in with a fixed momentum; undo the blend.
    for (size_t b = 0; b < bufs.size(); ++b) {
      const auto& now = bufs[b].second.vec();
      for (size_t j = 0; j < now.size(); ++j) {
        const double batch = (now[j] - (1.0 - kBatchNormMomentum) * before[b][j]) / kBatchNormMomentum;
        avg[b][j] = i == 0 ? batch : avg[b][j] + (batch - avg[b][j]) / static_cast<double>(i + 1);
      }
    }
  }
  for (size_t b = 0; b < bufs.size(); ++b) {
    auto& v = bufs[b].second.vec();
    for (size_t j = 0; j < v.size(); ++j) v[j] = static_cast<float>(avg[b][j]);
  }
  model.eval();
}

ModelConfig desk_config(Modality m, int64_t vocab_size, int64_t d) {
  ModelConfig c;
  c.modality = m;
  c.vocab_size = vocab_size;
  c.heads = 4;
  c.dropout = 0.1;
  c.conv_kernel = 7;
  c.audio_stem_filters = 8;
  c.video = {8, {16, 32}, d};
  c.crop = 16;
  const int64_t d2 = d + d / 2;
  c.audio_stages = {{1, d, AttentionVariant::kPatch, 1}, {1, d2, AttentionVariant::kPatch, 1},
                    {1, 2 * d, AttentionVariant::kPatch, 1}};
  c.visual_stages = {{1, d2, AttentionVariant::kPatch, 1}, {1, 2 * d, AttentionVariant::kPatch, 1}};
  c.video.out_dim = d2;
  c.av_stage = {1, 2 * d, AttentionVariant::kPatch, 1};
  c.audio_inter = {2};
  c.visual_inter = {1};
  c.av_inter = {1};
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  task.validate();
  if (task.vocab_size != model.vocab_size) {
    throw ConfigError("train: task vocab_size " + std::to_string(task.vocab_size) + " != model vocab_size " +
                      std::to_string(model.vocab_size));
  }
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch_size < 1 || accumulation < 1) throw ConfigError("train: batch_size and accumulation must be >= 1");
  if (warmup < 1) throw ConfigError("train: warmup must be >= 1");
  if (!(peak_lr > 0)) throw ConfigError("train: peak_lr must be positive");
  if (checkpoint_every < 0 || swa_last < 0) throw ConfigError("train: negative checkpoint settings");
  if (train_snr && train_snr->first > train_snr->second) throw ConfigError("train: snr range is reversed");
}

Utterance training_utterance(const TrainConfig& cfg, int64_t step, int64_t index) {
  Rng rng(cfg.seed, stream_id(Purpose::kData, step, index));
  return make_toy_utterance(cfg.task, rng);
}

namespace {

struct StepLosses {
  double joint = 0;
  std::map<std::string, std::pair<double, int64_t>> inter;
};

// Forward, loss and backward for one utterance. Returns false if infeasible.
bool utterance_backward(AvsrModel<float>& model, const TrainConfig& cfg, Mode mode, int64_t step, int64_t j,
                        double weight, StepLosses& acc) {
  const auto utt = training_utterance(cfg, step, j);
  Rng aug(cfg.seed, stream_id(Purpose::kAugment, step, j));
  Rng drop(cfg.seed, stream_id(Purpose::kDropout, step, j));
  FeatureOptions fo;
  fo.training = true;
  fo.spec_augment = cfg.spec_augment;
  fo.video_augment = cfg.video_augment;
  if (cfg.train_snr) {
    NoiseMixSpec ns;
    ns.kind = NoiseKind::kBabble;
    ns.snr_db = aug.uniform(cfg.train_snr->first, cfg.train_snr->second);
    ns.noise = toy_babble(cfg.task, aug, static_cast<int64_t>(utt.audio.samples.size()));
    fo.noise = ns;
  }
  model.set_dropout_rng(&drop);
  const auto in = make_input(utt, cfg.model, fo, aug);
  auto out = model.forward(in, mode);
  bool infeasible = false;
  auto final_loss = ctc_loss(out.log_probs, utt.labels, -1, &infeasible);
  if (infeasible) return false;
  std::vector<Tensor<float>> inters;
  for (const auto& p : out.inters) {
    auto l = ctc_loss(p.log_probs, utt.labels, -1, &infeasible);
    if (infeasible) continue;
    auto& [sum, n] = acc.inter[p.tag];
    sum += l.item();
    ++n;
    inters.push_back(l);
  }
  auto loss = joint_loss(final_loss, inters, cfg.model.inter_ctc_weight);
  acc.joint += loss.item();
  scale(loss, static_cast<float>(weight)).backward();
  return true;
}

}  // namespace

TrainResult train(AvsrModel<float>& model, const TrainConfig& cfg,
                  const std::function<void(const MetricRecord&)>& on_log) {
  cfg.validate();
  const Mode mode = cfg.mode.value_or(model.default_mode());
  const auto t0 = std::chrono::steady_clock::now();
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
  std::ofstream metrics_log;
  if (!cfg.out_dir.empty()) metrics_log.open(cfg.out_dir / "metrics.jsonl", std::ios::app);

  TrainResult res;
  auto params = model.named_parameters();
  OptState<float> opt;
  const int64_t per_step = cfg.batch_size * cfg.accumulation;
  auto checkpoint_path = [&](const std::string& stem) { return cfg.out_dir / (stem + ".ckpt"); };

  model.train();
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    for (auto& [name, p] : params) p.zero_grad();
    StepLosses acc;
    int64_t used = 0;
    for (int64_t j = 0; j < per_step; ++j) {
      used += utterance_backward(model, cfg, mode, step, j, 1.0 / static_cast<double>(per_step), acc);
    }
    const double loss = used ? acc.joint / static_cast<double>(used) : 0.0;
    if (!std::isfinite(loss)) throw NumericError("training diverged at step " + std::to_string(step));
    const double lr = noam_lr(step, cfg.warmup, cfg.peak_lr);
    adam_step(params, opt, lr, cfg.adam);

    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) {
      MetricRecord rec;
      rec.step = step;
      rec.lr = lr;
      rec.loss = loss;
      for (const auto& [tag, sn] : acc.inter) rec.inter[tag] = sn.first / static_cast<double>(sn.second);
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.metrics.push_back(rec);
      if (metrics_log.is_open()) {
        nlohmann::json j{{"step", rec.step}, {"lr", rec.lr}, {"loss", rec.loss}, {"inter", rec.inter},
                         {"wall_seconds", rec.wall_seconds}};
        metrics_log << j.dump() << '\n' << std::flush;
      }
      if (on_log) on_log(rec);
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      res.checkpoints.push_back(capture(model, step, cfg.stamp));
      if (!cfg.out_dir.empty()) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "step_%08lld", static_cast<long long>(step));
        save_checkpoint(checkpoint_path(stem), res.checkpoints.back());
      }
    }
  }
  model.set_dropout_rng(nullptr);
  res.final = capture(model, cfg.steps, cfg.stamp);
  if (!cfg.out_dir.empty()) save_checkpoint(checkpoint_path("final"), res.final);

  if (cfg.swa_last > 0 && !res.checkpoints.empty()) {
    const auto n = std::min<size_t>(static_cast<size_t>(cfg.swa_last), res.checkpoints.size());
    std::vector<Checkpoint> last(res.checkpoints.end() - static_cast<std::ptrdiff_t>(n), res.checkpoints.end());
    restore(model, swa_average(last));
    NoGradGuard g;
    recalibrate_batch_norm(model, cfg.swa_recalibration_batches, [&](int64_t i) {
      const auto utt = training_utterance(cfg, cfg.steps + 1, i);
      Rng aug(cfg.seed, stream_id(Purpose::kRecalibrate, 0, i));
      Rng drop(cfg.seed, stream_id(Purpose::kRecalibrate, 1, i));
      model.set_dropout_rng(&drop);
      model.forward(make_input(utt, cfg.model, FeatureOptions{}, aug), mode);
    });
    model.set_dropout_rng(nullptr);
    res.swa = capture(model, cfg.steps, cfg.stamp.empty() ? "swa" : cfg.stamp + " swa");
    if (!cfg.out_dir.empty()) save_checkpoint(checkpoint_path("swa"), *res.swa);
    restore(model, res.final);
  }
  model.eval();
  return res;
}

EvalReport evaluate(const PosteriorFn& fn, const ModelConfig& cfg, const std::vector<Utterance>& data,
                    const EvalOptions& opt) {
  const Mode mode = opt.mode.value_or(mode_for(cfg));
  EvalReport rep;
  int64_t words = 0, greedy_edits = 0, beam_edits = 0, feasible = 0;
  std::map<std::string, std::pair<double, int64_t>> inter;
  NoGradGuard g;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& utt = data[i];
    Rng rng(opt.seed, stream_id(Purpose::kEval, 0, static_cast<int64_t>(i)));
    FeatureOptions fo;
    if (opt.noise) {
      NoiseMixSpec ns = *opt.noise;
      if (ns.kind == NoiseKind::kBabble && ns.noise.empty()) {
        ns.noise = toy_babble(opt.babble_source, rng, static_cast<int64_t>(utt.audio.samples.size()));
      }
      fo.noise = ns;
    }
    const auto in = make_input(utt, cfg, fo, rng);
    const auto out = fn(i, in, mode);
    words += static_cast<int64_t>(utt.labels.size());
    greedy_edits += edit_distance(utt.labels, greedy_decode(out.log_probs));
    if (opt.beam) {
      const auto hyps = beam_search(out.log_probs, opt.beam_cfg, opt.lm);
      beam_edits += edit_distance(utt.labels, hyps.empty() ? LabelSeq{} : hyps[0].tokens);
    }
    bool infeasible = false;
    auto final_loss = ctc_loss(out.log_probs, utt.labels, -1, &infeasible);
    std::vector<Tensor<float>> inters;
    for (const auto& p : out.inters) {
      bool bad = false;
      auto l = ctc_loss(p.log_probs, utt.labels, -1, &bad);
      if (bad) continue;
      auto& [sum, n] = inter[p.tag];
      sum += l.item();
      ++n;
      inters.push_back(l);
    }
    if (!infeasible) {
      rep.loss += joint_loss(final_loss, inters, opt.inter_ctc_weight).item();
      ++feasible;
    }
  }
  rep.utterances = static_cast<int64_t>(data.size());
  if (words > 0) {
    rep.greedy_wer = static_cast<double>(greedy_edits) / static_cast<double>(words);
    rep.beam_wer = opt.beam ? static_cast<double>(beam_edits) / static_cast<double>(words) : rep.greedy_wer;
  }
  if (feasible > 0) rep.loss /= static_cast<double>(feasible);
  for (const auto& [tag, sn] : inter) rep.inter_losses[tag] = sn.first / static_cast<double>(sn.second);
  return rep;
}

EvalReport evaluate(AvsrModel<float>& model, const std::vector<Utterance>& data, const EvalOptions& opt) {
  model.eval();
  EvalOptions o = opt;
  o.inter_ctc_weight = model.config().inter_ctc_weight;
  return evaluate([&](size_t, const ModelInput<float>& in, Mode mode) { return model.forward(in, mode); },
                  model.config(), data, o);
}

std::vector<SweepRecord> snr_sweep(AvsrModel<float>& model, const std::vector<Utterance>& data, EvalOptions opt,
                                   std::vector<double> snrs) {
  std::sort(snrs.begin(), snrs.end());
  const Mode mode = opt.mode.value_or(model.default_mode());
  opt.mode = mode;
  NoiseMixSpec base = opt.noise.value_or(NoiseMixSpec{NoiseKind::kBabble, {}, 0.0});
  std::vector<SweepRecord> out;
  for (double snr : snrs) {
    base.snr_db = snr;
    opt.noise = base;
    const auto rep = evaluate(model, data, opt);
    out.push_back({snr, opt.beam ? rep.beam_wer : rep.greedy_wer, mode});
  }
  return out;
}

template void adam_step(const NamedTensors<float>&, OptState<float>&, double, const AdamConfig&);
template void adam_step(const NamedTensors<double>&, OptState<double>&, double, const AdamConfig&);

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace avsr {
namespace {

int64_t linear_params(int64_t in, int64_t out, bool bias = true) { return in * out + (bias ? out : 0); }

int64_t ffn_params(int64_t d, int64_t e) { return 2 * d + linear_params(d, e * d) + linear_params(e * d, d); }

int64_t attended_length(const AttentionConfig& a, int64_t n) {
  switch (a.variant) {
    case AttentionVariant::kRegular: return n;
    case AttentionVariant::kGrouped: return (n + a.group - 1) / a.group;
    case AttentionVariant::kPatch: return (n + a.patch - 1) / a.patch;
  }
  return n;
}

int64_t block_params(int64_t d_in, int64_t d_out, int64_t stride, int64_t kernel, int64_t e) {
  int64_t p = ffn_params(d_in, e) + 2 * d_in;
  p += 4 * linear_params(d_in, d_in) + linear_params(d_in, d_in, false);
  p += 2 * d_in + linear_params(d_in, 2 * d_out) + d_out * kernel + d_out + 2 * d_out +
       linear_params(d_out, d_out);
  if (stride != 1 || d_in != d_out) p += linear_params(d_in, d_out);
  p += ffn_params(d_out, e) + 2 * d_out;
  return p;
}

AttentionConfig stage_attention(const StageConfig& st, const ModelConfig& cfg) {
  AttentionConfig a;
  a.heads = cfg.heads;
  a.variant = st.attention;
  a.group = a.patch = st.factor;
  a.n_max = cfg.n_max;
  a.d_model = st.d_model;
  return a;
}

// Appends one record per block and Inter-CTC module; returns the output length.
int64_t encoder_costs(const std::string& prefix, const std::vector<StageConfig>& stages,
                      const std::vector<int64_t>& inter, const ModelConfig& cfg, int64_t n,
                      std::vector<CostRecord>& out) {
  int64_t index = 0;
  for (size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const auto attn = stage_attention(st, cfg);
    for (int64_t b = 0; b < st.num_blocks; ++b) {
      ++index;
      const bool transition = s + 1 < stages.size() && b + 1 == st.num_blocks;
      const int64_t d_out = transition ? stages[s + 1].d_model : st.d_model;
      const int64_t stride = transition ? 2 : 1;
      CostRecord r;
      r.name = prefix + ".block" + std::to_string(index);
      r.length = n;
      r.params = block_params(st.d_model, d_out, stride, cfg.conv_kernel, cfg.ffn_expansion);
      r.flops = conformer_block_flops(n, st.d_model, d_out, stride, attn, cfg.conv_kernel, cfg.ffn_expansion);
      out.push_back(r);
      n = ConformerBlock<float>::output_length(n, stride);
      if (std::find(inter.begin(), inter.end(), index) != inter.end()) {
        CostRecord c;
        c.name = prefix + ".inter_ctc" + std::to_string(index);
        c.length = n;
        c.params = linear_params(d_out, cfg.vocab_size) + linear_params(cfg.vocab_size, d_out);
        c.flops = 2 * n * d_out * cfg.vocab_size;
        out.push_back(c);
      }
    }
  }
  return n;
}

CostRecord audio_frontend_cost(const ModelConfig& cfg, int64_t samples) {
  const int64_t mel_frames = samples / kHop + 1;
  const int64_t ft = (mel_frames - 1) / 2 + 1;
  const int64_t fq = (cfg.mel_bins - 1) / 2 + 1;
  const int64_t c = cfg.audio_stem_filters, d = cfg.audio_stages.front().d_model;
  CostRecord r;
  r.name = "audio_frontend";
  r.length = ft;
  r.frontend = true;
  r.params = c * 9 + c + linear_params(c * fq, d);
  r.flops = c * fq * ft * 9 + ft * c * fq * d;
  return r;
}

CostRecord video_frontend_cost(const ModelConfig& cfg, int64_t frames) {
  const auto& v = cfg.video;
  const int64_t c0 = v.stem_channels;
  int64_t h = (cfg.crop + 6 - 7) / 2 + 1;
  int64_t params = c0 * 245 + 2 * c0;
  int64_t per_frame = c0 * h * h * 245;
  h = (h + 2 - 3) / 2 + 1;
  int64_t cin = c0;
  for (size_t s = 0; s < v.widths.size(); ++s) {
    const int64_t cout = v.widths[s];
    for (int b = 0; b < 2; ++b) {
      const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      h = (h - 1) / stride + 1;
      const int64_t area = h * h;
      params += 9 * cin * cout + 9 * cout * cout + 4 * cout;
      per_frame += area * cout * cin * 9 + area * cout * cout * 9;
      if (stride != 1 || cin != cout) {
        params += cin * cout + 2 * cout;
        per_frame += area * cout * cin;
      }
      cin = cout;
    }
  }
  const int64_t d = cfg.visual_stages.front().d_model;
  CostRecord r;
  r.name = "video_frontend";
  r.length = frames;
  r.frontend = true;
  r.params = params + linear_params(cin, d);
  r.flops = frames * (per_frame + cin * d);
  return r;
}

std::string fmt_count(int64_t v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(v) / 1e6);
  return buf;
}

}  // namespace

int64_t conformer_block_flops(int64_t n, int64_t d_in, int64_t d_out, int64_t stride,
                              const AttentionConfig& attn, int64_t kernel, int64_t expansion) {
  auto a = attn;
  a.d_model = d_in;
  const int64_t n_out = ConformerBlock<float>::output_length(n, stride);
  const int64_t m = attended_length(a, n);
  int64_t f = 2 * n * expansion * d_in * d_in;
  f += attention_flops(a, n, true) + (2 * m - 1) * d_in * d_in;
  f += n * d_in * 2 * d_out + n_out * d_out * kernel + n_out * d_out * d_out;
  if (stride != 1 || d_in != d_out) f += n_out * d_in * d_out;
  f += 2 * n_out * expansion * d_out * d_out;
  return f;
}

CostReport profile(const ModelConfig& cfg, double input_seconds) {
  if (!(input_seconds > 0)) throw ParameterError("profile: input_seconds must be > 0");
  cfg.validate();
  CostReport rep;
  rep.input_seconds = input_seconds;
  auto& rec = rep.records;
  const int64_t samples = std::llround(input_seconds * kSampleRate);
  const int64_t frames = std::max<int64_t>(1, std::llround(input_seconds * kVideoFps));

  int64_t n_final = 0, d_final = 0, n_a = 0, n_v = 0;
  if (cfg.has_audio()) {
    rec.push_back(audio_frontend_cost(cfg, samples));
    n_a = encoder_costs("audio_backend", cfg.audio_stages, cfg.audio_inter, cfg, rec.back().length, rec);
    n_final = n_a;
    d_final = cfg.audio_stages.back().d_model;
  }
  if (cfg.has_video()) {
    rec.push_back(video_frontend_cost(cfg, frames));
    n_v = encoder_costs("visual_backend", cfg.visual_stages, cfg.visual_inter, cfg, frames, rec);
    n_final = n_v;
    d_final = cfg.visual_stages.back().d_model;
  }
  if (cfg.modality == Modality::kAudioVisual) {
    const int64_t d = cfg.av_stage.d_model, e = cfg.ffn_expansion, n = std::min(n_a, n_v);
    CostRecord f;
    f.name = "fusion";
    f.length = n;
    f.params = linear_params(2 * d, e * d) + linear_params(e * d, d);
    f.flops = n * 2 * d * e * d + n * e * d * d;
    rec.push_back(f);
    n_final = encoder_costs("av_encoder", {cfg.av_stage}, cfg.av_inter, cfg, n, rec);
    d_final = d;
  }
  CostRecord head;
  head.name = "head";
  head.length = n_final;
  head.params = linear_params(d_final, cfg.vocab_size);
  head.flops = n_final * d_final * cfg.vocab_size;
  rec.push_back(head);

  for (const auto& r : rec) {
    (r.frontend ? rep.frontend_params : rep.backend_params) += r.params;
    (r.frontend ? rep.frontend_flops : rep.backend_flops) += r.flops;
  }
  rep.total_params = rep.frontend_params + rep.backend_params;
  rep.total_flops = rep.frontend_flops + rep.backend_flops;
  return rep;
}

std::string CostReport::table() const {
  std::ostringstream os;
  os << "# " << convention << "\n";
  os << "# input " << input_seconds << " s; params in M, flops in M multiply-adds\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-32s %8s %12s %14s\n", "module", "length", "params", "flops");
  os << line;
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%-32s %8lld %12s %14s\n", r.name.c_str(),
                  static_cast<long long>(r.length), fmt_count(r.params).c_str(), fmt_count(r.flops).c_str());
    os << line;
  }
  const std::pair<const char*, std::pair<int64_t, int64_t>> sums[] = {
      {"front-end", {frontend_params, frontend_flops}},
      {"back-end", {backend_params, backend_flops}},
      {"total", {total_params, total_flops}}};
  for (const auto& [label, pf] : sums) {
    std::snprintf(line, sizeof line, "%-32s %8s %12s %14s\n", label, "", fmt_count(pf.first).c_str(),
                  fmt_count(pf.second).c_str());
    os << line;
  }
  return os.str();
}

std::string CostReport::csv() const {
  std::ostringstream os;
  os << "# " << convention << "\n# input_seconds=" << input_seconds << "\n";
  os << "name,length,params,flops,frontend\n";
  for (const auto& r : records) {
    os << r.name << ',' << r.length << ',' << r.params << ',' << r.flops << ',' << (r.frontend ? 1 : 0) << '\n';
  }
  os << "total,," << total_params << ',' << total_flops << ",\n";
  return os.str();
}

std::vector<std::string> cross_check_params(const ModelConfig& cfg, const CostReport& report) {
  Rng rng(0);
  AvsrModel<float> model(cfg, rng);
  std::map<std::string, int64_t> actual;
  std::vector<std::string> problems;
  for (const auto& [name, t] : model.named_parameters()) {
    const CostRecord* best = nullptr;
    for (const auto& r : report.records) {
      if (name.compare(0, r.name.size() + 1, r.name + ".") == 0 && (!best || r.name.size() > best->name.size())) {
        best = &r;
      }
    }
    if (!best) {
      problems.push_back(name + ": no profiler record");
      continue;
    }
    actual[best->name] += t.numel();
  }
  for (const auto& r : report.records) {
    const int64_t got = actual.count(r.name) ? actual[r.name] : 0;
    if (got != r.params) {
      problems.push_back(r.name + ": profiler " + std::to_string(r.params) + ", model " + std::to_string(got));
    }
  }
  return problems;
}

std::string SweepVariant::label() const {
  if (variant == AttentionVariant::kRegular) return "regular";
  return variant_name(variant) + "(" + std::to_string(factor) + ")";
}

std::vector<FlopSweepRecord> flop_sweep(const ModelConfig& cfg, const std::vector<SweepVariant>& variants,
                                        const std::vector<int64_t>& n_range) {
  if (variants.empty() || n_range.empty()) throw ParameterError("flop_sweep: empty variant or length list");
  if (cfg.audio_stages.empty()) throw ConfigError("flop_sweep: config has no audio stages");
  std::vector<FlopSweepRecord> out;
  for (const auto& v : variants) {
    auto stages = cfg.audio_stages;
    stages.front().attention = v.variant;
    stages.front().factor = v.factor;
    for (int64_t n : n_range) {
      if (n < 1) throw ParameterError("flop_sweep: lengths must be >= 1");
      std::vector<CostRecord> rec;
      encoder_costs("audio_backend", stages, cfg.audio_inter, cfg, n, rec);
      int64_t total = 0;
      for (const auto& r : rec) total += r.flops;
      out.push_back({v.label(), n, total});
    }
  }
  return out;
}

std::string sweep_csv(const std::vector<FlopSweepRecord>& records) {
  std::ostringstream os;
  os << "# " << kFlopConvention << "\nvariant,n,flops\n";
  for (const auto& r : records) os << r.variant << ',' << r.n << ',' << r.flops << '\n';
  return os.str();
}

}  // namespace avsr

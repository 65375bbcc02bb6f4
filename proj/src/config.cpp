// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace avsr {
namespace {

class Section {
 public:
  Section(YAML::Node node, std::string path, const std::string& origin)
      : node_(std::move(node)), path_(std::move(path)), origin_(origin) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) fail(node_, "expected a mapping");
  }

  void mark(const std::string& key) { seen_.insert(key); }
  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!has(key)) return;
    out = convert<V>(node_[key], key);
  }

  template <class V>
  void get_list(const std::string& key, std::vector<V>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto n = node_[key];
    if (n.IsScalar()) {
      out = {convert<V>(n, key)};
      return;
    }
    if (!n.IsSequence()) fail(n, qualified(key) + ": expected a list");
    out.clear();
    for (const auto& item : n) out.push_back(convert<V>(item, key));
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(has(key) ? node_[key] : YAML::Node(), qualified(key), origin_);
  }

  YAML::Node node(const std::string& key) const { return node_[key]; }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) fail(kv.first, "unknown key '" + qualified(key) + "'");
    }
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const auto m = at.Mark();
    throw ConfigError(origin_ + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": " + msg);
  }
  [[noreturn]] void fail_key(const std::string& key, const std::string& msg) const {
    if (has(key)) fail(node_[key], qualified(key) + ": " + msg);
    throw ConfigError(origin_ + ": " + qualified(key) + ": " + msg);
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <class V>
  V convert(const YAML::Node& n, const std::string& key) const {
    if (!n.IsScalar()) fail(n, qualified(key) + ": expected a scalar");
    try {
      return n.as<V>();
    } catch (const YAML::BadConversion&) {
      fail(n, qualified(key) + ": cannot read '" + n.Scalar() + "' as " + type_name<V>());
    }
  }

  template <class V>
  static const char* type_name() {
    if constexpr (std::is_same_v<V, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<V>) return "an integer";
    else if constexpr (std::is_floating_point_v<V>) return "a number";
    else return "a string";
  }

  YAML::Node node_;
  std::string path_;
  const std::string& origin_;
  std::set<std::string> seen_;
};

// Re-throws a validator's error at the section it most likely concerns.
template <class F>
void located(const Section& s, const YAML::Node& root, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    std::string key = "model";
    for (const auto& [prefix, k] : {std::pair<const char*, const char*>{"train", "train"}, {"toy task", "task"},
                                    {"eval", "eval"}, {"threads", "threads"}, {"model.crop", "model"}}) {
      if (msg.rfind(prefix, 0) == 0) key = k;
    }
    if (root && root.IsMap() && root[key]) s.fail(root[key], msg);
    throw ConfigError(msg);
  }
}

void read_branch(Section s, std::vector<StageConfig>& stages, std::vector<int64_t>& inter) {
  int64_t num_stages = static_cast<int64_t>(stages.size());
  std::vector<int64_t> blocks, dims, factors;
  std::vector<std::string> attention;
  for (const auto& st : stages) {
    blocks.push_back(st.num_blocks);
    dims.push_back(st.d_model);
    factors.push_back(st.factor);
    attention.push_back(variant_name(st.attention));
  }
  s.get("num_stages", num_stages);
  s.get_list("blocks_per_stage", blocks);
  s.get_list("stage_feature_dim", dims);
  s.get_list("stage_attention", attention);
  s.get_list("stage_patch_size", factors);
  s.get_list("interctc_blocks", inter);
  s.finish();
  if (num_stages < 1) s.fail_key("num_stages", "must be >= 1");
  const auto n = static_cast<size_t>(num_stages);
  for (const auto& [key, size] : {std::pair<const char*, size_t>{"blocks_per_stage", blocks.size()},
                                  {"stage_feature_dim", dims.size()},
                                  {"stage_attention", attention.size()},
                                  {"stage_patch_size", factors.size()}}) {
    if (size != n) {
      s.fail_key(key, "has " + std::to_string(size) + " entries but num_stages is " + std::to_string(n));
    }
  }
  stages.assign(n, {});
  for (size_t i = 0; i < n; ++i) {
    stages[i].num_blocks = blocks[i];
    stages[i].d_model = dims[i];
    stages[i].factor = factors[i];
    try {
      stages[i].attention = parse_variant(attention[i]);
    } catch (const std::exception& e) {
      s.fail_key("stage_attention", e.what());
    }
  }
}

void read_model(Section s, ModelConfig& m) {
  std::string preset = "desk", modality = modality_name(m.modality);
  int64_t d = 64, vocab = m.vocab_size;
  s.get("preset", preset);
  s.get("modality", modality);
  s.get("d_model", d);
  s.get("vocab_size", vocab);
  Modality mod;
  try {
    mod = parse_modality(modality);
  } catch (const ConfigError& e) {
    s.fail_key("modality", e.what());
  }
  if (preset == "full") {
    if (s.has("d_model")) s.fail_key("d_model", "only applies to the tiny and desk presets");
    m = full_config(mod);
    m.vocab_size = vocab;
  } else if (preset == "desk") {
    m = desk_config(mod, vocab, d);
  } else if (preset == "tiny") {
    m = tiny_config(mod, d, vocab);
  } else {
    s.fail_key("preset", "unknown preset '" + preset + "' (expected tiny, desk or full)");
  }
  s.get("interctc_weight", m.inter_ctc_weight);
  s.get("dropout", m.dropout);
  s.get("attention_heads", m.heads);
  s.get("conv_kernel_size", m.conv_kernel);
  s.get("ffn_expansion", m.ffn_expansion);
  s.get("max_relative_positions", m.n_max);
  s.get("mel_bins", m.mel_bins);
  s.get("audio_stem_filters", m.audio_stem_filters);
  s.get("crop_size", m.crop);
  {
    auto v = s.sub("video_frontend");
    v.get("stem_channels", m.video.stem_channels);
    v.get_list("stage_widths", m.video.widths);
    v.finish();
  }
  read_branch(s.sub("audio_backend"), m.audio_stages, m.audio_inter);
  read_branch(s.sub("visual_backend"), m.visual_stages, m.visual_inter);
  std::vector<StageConfig> av = {m.av_stage};
  read_branch(s.sub("av_encoder"), av, m.av_inter);
  if (av.size() != 1) s.fail_key("av_encoder", "must have exactly one stage");
  m.av_stage = av.front();
  m.video.out_dim = m.visual_stages.front().d_model;
  s.finish();
}

std::optional<Mode> read_mode(Section& s, const std::string& key, std::optional<Mode> current) {
  std::string v = current ? mode_name(*current) : "default";
  s.get(key, v);
  if (v == "default") return std::nullopt;
  try {
    return parse_mode(v);
  } catch (const std::exception& e) {
    s.fail_key(key, e.what());
  }
}

void read_train(Section s, TrainConfig& t) {
  s.get("steps", t.steps);
  s.get("batch_size", t.batch_size);
  s.get("accumulation", t.accumulation);
  s.get("warmup", t.warmup);
  s.get("peak_lr", t.peak_lr);
  s.get("adam_beta1", t.adam.beta1);
  s.get("adam_beta2", t.adam.beta2);
  s.get("adam_eps", t.adam.eps);
  s.get("weight_decay", t.adam.weight_decay);
  s.get("checkpoint_every", t.checkpoint_every);
  s.get("swa_last", t.swa_last);
  s.get("swa_recalibration_batches", t.swa_recalibration_batches);
  t.mode = read_mode(s, "mode", t.mode);
  s.get("spec_augment", t.spec_augment);
  s.get("video_augment", t.video_augment);
  s.get("log_every", t.log_every);
  s.mark("snr_range");
  if (s.has("snr_range") && !s.node("snr_range").IsNull()) {
    std::vector<double> r;
    s.get_list("snr_range", r);
    if (r.size() != 2) s.fail_key("snr_range", "expected [low_db, high_db]");
    t.train_snr = {r[0], r[1]};
  } else if (s.has("snr_range")) {
    t.train_snr.reset();
  }
  s.finish();
}

void read_task(Section s, ToyTaskSpec& t) {
  s.get("min_tokens", t.min_tokens);
  s.get("max_tokens", t.max_tokens);
  s.get("frames_per_token", t.frames_per_token);
  s.get("gap_frames", t.gap_frames);
  s.get("image_size", t.image_size);
  s.get("tone_amplitude", t.tone_amplitude);
  s.get("noise_floor", t.noise_floor);
  s.finish();
}

void read_eval(Section s, EvalConfig& e) {
  s.get("utterances", e.utterances);
  s.get("seed", e.seed);
  e.mode = read_mode(s, "mode", e.mode);
  s.get("beam", e.beam);
  s.get("beam_width", e.beam_cfg.width);
  s.get("lm_weight", e.beam_cfg.lm_weight);
  s.get("length_bonus", e.beam_cfg.length_bonus);
  s.get("lm_order", e.lm_order);
  s.get("lm_train_utterances", e.lm_train_utterances);
  s.get("lm_delta", e.lm_delta);
  std::string noise = e.noise == NoiseKind::kWhite ? "white" : "babble";
  s.get("noise", noise);
  if (noise == "white") e.noise = NoiseKind::kWhite;
  else if (noise == "babble") e.noise = NoiseKind::kBabble;
  else s.fail_key("noise", "expected babble or white");
  s.get_list("snr_db", e.snr_db);
  s.finish();
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  train.validate();
  if (model().has_video() && model().crop > train.task.image_size) {
    throw ConfigError("model.crop_size exceeds task.image_size");
  }
  if (eval.utterances < 1) throw ConfigError("eval.utterances must be >= 1");
  if (eval.beam_cfg.width < 1) throw ConfigError("eval.beam_width must be >= 1");
  if (eval.lm_order < 0) throw ConfigError("eval.lm_order must be >= 0");
  for (double s : eval.snr_db) {
    if (std::isnan(s)) throw ConfigError("eval.snr_db entries must be numbers");
  }
}

RunConfig parse_run_config(const std::string& yaml, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(origin + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                      ": " + e.msg);
  }
  RunConfig cfg;
  cfg.threads = default_num_threads();
  cfg.train.model = desk_config(Modality::kAudioVisual, cfg.train.task.vocab_size);
  Section top(root, "", origin);
  top.get("seed", cfg.seed);
  top.get("threads", cfg.threads);
  std::string out = cfg.output_dir.string();
  top.get("output_dir", out);
  cfg.output_dir = out;
  read_model(top.sub("model"), cfg.train.model);
  read_task(top.sub("task"), cfg.train.task);
  read_train(top.sub("train"), cfg.train);
  read_eval(top.sub("eval"), cfg.eval);
  top.finish();

  cfg.train.seed = cfg.seed;
  cfg.train.task.seed = cfg.seed;
  cfg.train.task.vocab_size = cfg.train.model.vocab_size;
  cfg.train.out_dir = cfg.output_dir;
  located(top, root, [&] { cfg.validate(); });
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

namespace {

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, r.ptr);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

std::vector<std::string> nums(const std::vector<double>& v) {
  std::vector<std::string> out;
  for (double x : v) out.push_back(num(x));
  return out;
}

void emit_branch(YAML::Emitter& e, const char* name, const std::vector<StageConfig>& stages,
                 const std::vector<int64_t>& inter) {
  std::vector<int64_t> blocks, dims, factors;
  std::vector<std::string> attn;
  for (const auto& s : stages) {
    blocks.push_back(s.num_blocks);
    dims.push_back(s.d_model);
    factors.push_back(s.factor);
    attn.push_back(variant_name(s.attention));
  }
  e << YAML::Key << name << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_stages" << YAML::Value << stages.size();
  e << YAML::Key << "blocks_per_stage" << YAML::Value << YAML::Flow << blocks;
  e << YAML::Key << "stage_feature_dim" << YAML::Value << YAML::Flow << dims;
  e << YAML::Key << "stage_attention" << YAML::Value << YAML::Flow << attn;
  e << YAML::Key << "stage_patch_size" << YAML::Value << YAML::Flow << factors;
  e << YAML::Key << "interctc_blocks" << YAML::Value << YAML::Flow << inter;
  e << YAML::EndMap;
}

std::string mode_or_default(const std::optional<Mode>& m) { return m ? mode_name(*m) : "default"; }

}  // namespace

std::string resolved_yaml(const RunConfig& cfg) {
  const auto& m = cfg.model();
  const auto& t = cfg.train;
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << cfg.seed;
  e << YAML::Key << "threads" << YAML::Value << cfg.threads;
  e << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir.string();

  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "modality" << YAML::Value << modality_name(m.modality);
  e << YAML::Key << "vocab_size" << YAML::Value << m.vocab_size;
  e << YAML::Key << "interctc_weight" << YAML::Value << num(m.inter_ctc_weight);
  e << YAML::Key << "dropout" << YAML::Value << num(m.dropout);
  e << YAML::Key << "attention_heads" << YAML::Value << m.heads;
  e << YAML::Key << "conv_kernel_size" << YAML::Value << m.conv_kernel;
  e << YAML::Key << "ffn_expansion" << YAML::Value << m.ffn_expansion;
  e << YAML::Key << "max_relative_positions" << YAML::Value << m.n_max;
  e << YAML::Key << "mel_bins" << YAML::Value << m.mel_bins;
  e << YAML::Key << "audio_stem_filters" << YAML::Value << m.audio_stem_filters;
  e << YAML::Key << "crop_size" << YAML::Value << m.crop;
  e << YAML::Key << "video_frontend" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "stem_channels" << YAML::Value << m.video.stem_channels;
  e << YAML::Key << "stage_widths" << YAML::Value << YAML::Flow << m.video.widths;
  e << YAML::EndMap;
  emit_branch(e, "audio_backend", m.audio_stages, m.audio_inter);
  emit_branch(e, "visual_backend", m.visual_stages, m.visual_inter);
  emit_branch(e, "av_encoder", {m.av_stage}, m.av_inter);
  e << YAML::EndMap;

  e << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "min_tokens" << YAML::Value << t.task.min_tokens;
  e << YAML::Key << "max_tokens" << YAML::Value << t.task.max_tokens;
  e << YAML::Key << "frames_per_token" << YAML::Value << t.task.frames_per_token;
  e << YAML::Key << "gap_frames" << YAML::Value << t.task.gap_frames;
  e << YAML::Key << "image_size" << YAML::Value << t.task.image_size;
  e << YAML::Key << "tone_amplitude" << YAML::Value << num(t.task.tone_amplitude);
  e << YAML::Key << "noise_floor" << YAML::Value << num(t.task.noise_floor);
  e << YAML::EndMap;

  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "steps" << YAML::Value << t.steps;
  e << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  e << YAML::Key << "accumulation" << YAML::Value << t.accumulation;
  e << YAML::Key << "warmup" << YAML::Value << t.warmup;
  e << YAML::Key << "peak_lr" << YAML::Value << num(t.peak_lr);
  e << YAML::Key << "adam_beta1" << YAML::Value << num(t.adam.beta1);
  e << YAML::Key << "adam_beta2" << YAML::Value << num(t.adam.beta2);
  e << YAML::Key << "adam_eps" << YAML::Value << num(t.adam.eps);
  e << YAML::Key << "weight_decay" << YAML::Value << num(t.adam.weight_decay);
  e << YAML::Key << "checkpoint_every" << YAML::Value << t.checkpoint_every;
  e << YAML::Key << "swa_last" << YAML::Value << t.swa_last;
  e << YAML::Key << "swa_recalibration_batches" << YAML::Value << t.swa_recalibration_batches;
  e << YAML::Key << "mode" << YAML::Value << mode_or_default(t.mode);
  e << YAML::Key << "spec_augment" << YAML::Value << t.spec_augment;
  e << YAML::Key << "video_augment" << YAML::Value << t.video_augment;
  e << YAML::Key << "log_every" << YAML::Value << t.log_every;
  e << YAML::Key << "snr_range" << YAML::Value;
  if (t.train_snr) {
    e << YAML::Flow << nums({t.train_snr->first, t.train_snr->second});
  } else {
    e << YAML::Null;
  }
  e << YAML::EndMap;

  const auto& ev = cfg.eval;
  e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "utterances" << YAML::Value << ev.utterances;
  e << YAML::Key << "seed" << YAML::Value << ev.seed;
  e << YAML::Key << "mode" << YAML::Value << mode_or_default(ev.mode);
  e << YAML::Key << "beam" << YAML::Value << ev.beam;
  e << YAML::Key << "beam_width" << YAML::Value << ev.beam_cfg.width;
  e << YAML::Key << "lm_weight" << YAML::Value << num(ev.beam_cfg.lm_weight);
  e << YAML::Key << "length_bonus" << YAML::Value << num(ev.beam_cfg.length_bonus);
  e << YAML::Key << "lm_order" << YAML::Value << ev.lm_order;
  e << YAML::Key << "lm_train_utterances" << YAML::Value << ev.lm_train_utterances;
  e << YAML::Key << "lm_delta" << YAML::Value << num(ev.lm_delta);
  e << YAML::Key << "noise" << YAML::Value << (ev.noise == NoiseKind::kWhite ? "white" : "babble");
  e << YAML::Key << "snr_db" << YAML::Value << YAML::Flow << nums(ev.snr_db);
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  RunConfig keyed = cfg;
  keyed.output_dir.clear();
  keyed.train.out_dir.clear();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : resolved_yaml(keyed)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalOptions make_eval_options(const RunConfig& cfg, const NgramLm* lm) {
  EvalOptions o;
  o.mode = cfg.eval.mode;
  o.beam = cfg.eval.beam;
  o.beam_cfg = cfg.eval.beam_cfg;
  o.lm = lm;
  o.babble_source = cfg.train.task;
  o.seed = cfg.eval.seed;
  o.inter_ctc_weight = cfg.model().inter_ctc_weight;
  return o;
}

std::vector<Utterance> eval_dataset(const RunConfig& cfg) {
  Rng rng(cfg.eval.seed, 0xE7A1);
  return make_toy_batch(cfg.train.task, rng, cfg.eval.utterances);
}

NgramLm train_toy_lm(const RunConfig& cfg) {
  if (cfg.eval.lm_order < 1) throw ConfigError("eval.lm_order must be >= 1 to train an LM");
  Rng rng(cfg.seed, 0x1A46);
  std::vector<LabelSeq> corpus;
  for (int64_t i = 0; i < cfg.eval.lm_train_utterances; ++i) {
    const auto k = rng.uniform_int(cfg.train.task.min_tokens, cfg.train.task.max_tokens);
    LabelSeq y;
    for (int64_t j = 0; j < k; ++j) y.push_back(rng.uniform_int(1, cfg.train.task.vocab_size - 1));
    corpus.push_back(std::move(y));
  }
  return NgramLm::train(corpus, cfg.eval.lm_order, cfg.model().vocab_size, cfg.eval.lm_delta);
}

}  // namespace avsr

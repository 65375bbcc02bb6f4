// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// avsr: train, evaluate, decode, profile, mix-noise, wer and grad-check.
// Exit codes: 0 success, 1 quality or assertion failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "avsr/config.hpp"
#include "avsr/grad_suite.hpp"
#include "avsr/profiler.hpp"

namespace avsr {
namespace {

struct QualityFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_number_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
      throw UsageError(std::string(what) + ": cannot read '" + item + "' as a number");
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + ": empty list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct Common {
  std::string config;
  int threads = 0;
};

RunConfig load(const Common& c) {
  auto cfg = load_run_config(c.config);
  if (c.threads > 0) cfg.threads = c.threads;
  set_num_threads(cfg.threads);
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
}

std::unique_ptr<AvsrModel<float>> load_model(const RunConfig& cfg, const std::string& checkpoint) {
  Rng rng(cfg.seed);
  auto model = std::make_unique<AvsrModel<float>>(cfg.model(), rng);
  const auto ckpt = load_checkpoint(checkpoint);
  restore(*model, ckpt);
  model->eval();
  return model;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  int64_t steps = -1;
  std::string output_dir;
  int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = load(a.common);
  if (a.steps >= 0) cfg.train.steps = a.steps;
  if (a.seed >= 0) cfg.seed = cfg.train.seed = cfg.train.task.seed = static_cast<uint64_t>(a.seed);
  if (!a.output_dir.empty()) cfg.output_dir = cfg.train.out_dir = a.output_dir;
  cfg.validate();
  const auto hash = config_hash(cfg);
  cfg.train.stamp = hash;
  write_text(cfg.output_dir / "config.yaml", resolved_yaml(cfg));

  Rng rng(cfg.seed);
  AvsrModel<float> model(cfg.model(), rng);
  std::cout << "config " << hash << ", " << model.num_parameters() << " parameters, " << cfg.train.steps
            << " steps\n";
  const auto res = train(model, cfg.train, [](const MetricRecord& m) {
    std::cout << "step " << m.step << " lr " << m.lr << " loss " << fmt(m.loss) << " time "
              << fmt(m.wall_seconds) << "\n"
              << std::flush;
  });
  std::cout << "wrote " << (cfg.output_dir / "final.ckpt").string() << " (" << res.checkpoints.size()
            << " intermediate";
  if (res.swa) std::cout << ", swa.ckpt";
  std::cout << ")\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string mode;
  std::string snr;
  int64_t utterances = 0;
  bool greedy = false;
  double max_wer = -1;
  std::string output;
};

int cmd_eval(const EvalArgs& a) {
  auto cfg = load(a.common);
  if (!a.mode.empty()) cfg.eval.mode = parse_mode(a.mode);
  if (!a.snr.empty()) cfg.eval.snr_db = parse_number_list(a.snr, "--snr");
  if (a.utterances > 0) cfg.eval.utterances = a.utterances;
  if (a.greedy) cfg.eval.beam = false;
  cfg.validate();
  auto model = load_model(cfg, a.checkpoint);
  const auto data = eval_dataset(cfg);
  std::optional<NgramLm> lm;
  if (cfg.eval.lm_order > 0) lm = train_toy_lm(cfg);
  auto opt = make_eval_options(cfg, lm ? &*lm : nullptr);

  std::ostringstream out;
  out << "# config " << config_hash(cfg) << "\n";
  double headline = 0;
  if (!cfg.eval.snr_db.empty()) {
    opt.noise = NoiseMixSpec{cfg.eval.noise, {}, 0.0};
    const auto recs = snr_sweep(*model, data, opt, cfg.eval.snr_db);
    out << "snr_db,wer,mode\n";
    for (const auto& r : recs) {
      out << r.snr_db << ',' << fmt(r.wer) << ',' << mode_name(r.mode) << '\n';
      headline = std::max(headline, r.wer);
    }
  } else {
    const auto rep = evaluate(*model, data, opt);
    out << "mode " << mode_name(opt.mode.value_or(model->default_mode())) << "\n";
    out << "utterances " << rep.utterances << "\n";
    out << "greedy_wer " << fmt(rep.greedy_wer) << "\n";
    if (cfg.eval.beam) out << "beam_wer " << fmt(rep.beam_wer) << "\n";
    out << "loss " << fmt(rep.loss) << "\n";
    for (const auto& [tag, l] : rep.inter_losses) out << "inter_loss " << tag << " " << fmt(l) << "\n";
    headline = cfg.eval.beam ? rep.beam_wer : rep.greedy_wer;
  }
  if (a.output.empty()) {
    std::cout << out.str();
  } else {
    write_text(a.output, out.str());
  }
  if (a.max_wer >= 0 && headline > a.max_wer) {
    throw QualityFailure("WER " + fmt(headline) + " exceeds --max-wer " + fmt(a.max_wer));
  }
  return 0;
}

// ---------------------------------------------------------------- decode

struct DecodeArgs {
  Common common;
  std::string checkpoint;
  std::string mode;
  std::string wav;
  std::string posteriors;
  bool log_domain = false;
  int64_t utterances = 0;
  bool greedy = false;
};

// Whitespace-separated rows, one frame per line.
Tensor<double> read_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read posteriors file: " + path);
  std::vector<double> data;
  int64_t rows = 0, cols = -1;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) throw InputError(path + ":" + std::to_string(rows + 1) + ": not a number");
    if (row.empty()) continue;
    if (cols >= 0 && static_cast<int64_t>(row.size()) != cols) {
      throw InputError(path + ":" + std::to_string(rows + 1) + ": row has " + std::to_string(row.size()) +
                       " columns, expected " + std::to_string(cols));
    }
    cols = static_cast<int64_t>(row.size());
    data.insert(data.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw InputError(path + ": no frames");
  return Tensor<double>::from({rows, cols}, std::move(data));
}

LabelSeq decode_one(const Tensor<float>& log_probs, const EvalConfig& ev, const NgramLm* lm) {
  if (!ev.beam) return greedy_decode(log_probs);
  const auto hyps = beam_search(log_probs, ev.beam_cfg, lm);
  return hyps.empty() ? LabelSeq{} : hyps.front().tokens;
}

std::string join_ids(const LabelSeq& y) {
  std::string s;
  for (size_t i = 0; i < y.size(); ++i) s += (i ? " " : "") + std::to_string(y[i]);
  return s;
}

int cmd_decode(const DecodeArgs& a) {
  if (!a.posteriors.empty()) {
    // No model involved; the config only supplies token names and beam settings.
    std::optional<RunConfig> cfg;
    if (!a.common.config.empty()) cfg = load(a.common);
    auto m = read_matrix(a.posteriors);
    std::vector<float> lp(m.vec().size());
    for (size_t i = 0; i < lp.size(); ++i) {
      const double v = a.log_domain ? m.vec()[i] : std::log(std::max(m.vec()[i], kProbFloor));
      lp[i] = static_cast<float>(v);
    }
    EvalConfig ev = cfg ? cfg->eval : EvalConfig{};
    if (a.greedy) ev.beam = false;
    const auto y = decode_one(Tensor<float>::from(m.shape(), std::move(lp)), ev, nullptr);
    if (cfg && cfg->model().vocab_size == m.dim(1)) {
      std::cout << toy_vocab(cfg->train.task).decode(y) << "\n";
    } else {
      std::cout << join_ids(y) << "\n";
    }
    return 0;
  }
  if (a.common.config.empty() || a.checkpoint.empty()) {
    throw UsageError("decode needs --config and --checkpoint unless --posteriors is given");
  }
  auto cfg = load(a.common);
  if (!a.mode.empty()) cfg.eval.mode = parse_mode(a.mode);
  if (a.utterances > 0) cfg.eval.utterances = a.utterances;
  if (a.greedy) cfg.eval.beam = false;
  auto model = load_model(cfg, a.checkpoint);
  const Mode mode = cfg.eval.mode.value_or(model->default_mode());
  const auto vocab = toy_vocab(cfg.train.task);
  std::optional<NgramLm> lm;
  if (cfg.eval.lm_order > 0) lm = train_toy_lm(cfg);
  NoGradGuard ng;
  Rng rng(cfg.eval.seed);

  if (!a.wav.empty()) {
    Utterance u;
    u.audio = read_wav(a.wav);
    const auto in = make_input(u, cfg.model(), FeatureOptions{}, rng);
    const auto out = model->forward(in, mode);
    std::cout << vocab.decode(decode_one(out.log_probs, cfg.eval, lm ? &*lm : nullptr)) << "\n";
    return 0;
  }
  const auto data = eval_dataset(cfg);
  int64_t edits = 0, words = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto in = make_input(data[i], cfg.model(), FeatureOptions{}, rng);
    const auto out = model->forward(in, mode);
    const auto hyp = decode_one(out.log_probs, cfg.eval, lm ? &*lm : nullptr);
    edits += edit_distance(data[i].labels, hyp);
    words += static_cast<int64_t>(data[i].labels.size());
    std::cout << i << "\t" << vocab.decode(data[i].labels) << "\t" << vocab.decode(hyp) << "\n";
  }
  std::cout << "# wer " << fmt(static_cast<double>(edits) / static_cast<double>(std::max<int64_t>(1, words)))
            << " (" << edits << "/" << words << ")\n";
  return 0;
}

// ---------------------------------------------------------------- profile

struct ProfileArgs {
  Common common;
  double seconds = 10.0;
  std::string sweep;
  std::string variants = "regular,grouped:3,patch:3";
  bool check_params = false;
  std::string output_dir;
};

std::vector<int64_t> parse_range(const std::string& s) {
  // "lo:hi:step" or a comma list.
  std::vector<int64_t> out;
  if (s.find(':') != std::string::npos) {
    const auto v = parse_number_list(std::string(s).replace(s.find(':'), 1, ",").replace(s.rfind(':'), 1, ","),
                                     "--sweep");
    if (v.size() != 3 || v[2] <= 0 || v[0] < 1 || v[1] < v[0]) throw UsageError("--sweep: expected lo:hi:step");
    for (double n = v[0]; n <= v[1]; n += v[2]) out.push_back(static_cast<int64_t>(n));
  } else {
    for (double n : parse_number_list(s, "--sweep")) out.push_back(static_cast<int64_t>(n));
  }
  return out;
}

std::vector<SweepVariant> parse_variants(const std::string& s) {
  std::vector<SweepVariant> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    SweepVariant v;
    const auto colon = item.find(':');
    v.variant = parse_variant(item.substr(0, colon));
    if (colon != std::string::npos) v.factor = static_cast<int64_t>(parse_number_list(item.substr(colon + 1), "--variants")[0]);
    if (v.factor < 1) throw UsageError("--variants: factor must be >= 1");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--variants: empty list");
  return out;
}

int cmd_profile(const ProfileArgs& a) {
  auto cfg = load(a.common);
  if (!(a.seconds > 0)) throw UsageError("--seconds must be > 0");
  const auto dir = a.output_dir.empty() ? cfg.output_dir : std::filesystem::path(a.output_dir);
  const auto rep = profile(cfg.model(), a.seconds);
  std::cout << rep.table();
  write_text(dir / "profile.txt", rep.table());
  write_text(dir / "profile.csv", rep.csv());
  if (!a.sweep.empty()) {
    const auto recs = flop_sweep(cfg.model(), parse_variants(a.variants), parse_range(a.sweep));
    write_text(dir / "sweep.csv", sweep_csv(recs));
    std::cout << "sweep: " << recs.size() << " records -> " << (dir / "sweep.csv").string() << "\n";
  }
  if (a.check_params) {
    const auto problems = cross_check_params(cfg.model(), rep);
    for (const auto& p : problems) std::cerr << "param mismatch: " << p << "\n";
    if (!problems.empty()) throw QualityFailure("profiler parameter counts differ from the model");
    std::cout << "params cross-check: ok\n";
  }
  return 0;
}

// ---------------------------------------------------------------- mix-noise

struct MixArgs {
  std::string input, output, noise;
  double snr = std::numeric_limits<double>::quiet_NaN();
  bool white = false, babble = false;
  uint64_t seed = 0;
};

int cmd_mix_noise(const MixArgs& a) {
  if (std::isnan(a.snr)) throw UsageError("--snr is required");
  if (static_cast<int>(!a.noise.empty()) + a.white + a.babble != 1) {
    throw UsageError("choose exactly one of --noise, --white, --babble");
  }
  const auto signal = read_wav(a.input);
  Rng rng(a.seed);
  NoiseMixSpec spec;
  spec.snr_db = a.snr;
  if (a.white) {
    spec.kind = NoiseKind::kWhite;
  } else if (a.babble) {
    spec.kind = NoiseKind::kBabble;
    spec.noise = toy_babble(ToyTaskSpec{}, rng, static_cast<int64_t>(signal.samples.size()));
  } else {
    spec.kind = NoiseKind::kWaveform;
    spec.noise = read_wav(a.noise).samples;
  }
  const auto res = mix_noise(signal, spec, rng);
  write_wav(a.output, res.mixed);
  std::vector<float> added(signal.samples.size());
  for (size_t i = 0; i < added.size(); ++i) added[i] = res.mixed.samples[i] - signal.samples[i];
  std::cout << "scale " << fmt(res.scale) << "\n";
  if (res.scale > 0) std::cout << "measured_snr_db " << fmt(measure_snr_db(signal.samples, added)) << "\n";
  std::cout << "clip_fraction " << fmt(res.clip_fraction) << "\n";
  return 0;
}

// ---------------------------------------------------------------- wer

struct WerArgs {
  std::string ref, hyp;
  double max_wer = -1;
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

int cmd_wer(const WerArgs& a) {
  const auto ref = read_lines(a.ref), hyp = read_lines(a.hyp);
  if (ref.size() != hyp.size()) {
    throw UsageError("reference has " + std::to_string(ref.size()) + " lines, hypothesis has " +
                     std::to_string(hyp.size()));
  }
  int64_t edits = 0, words = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const auto r = split_words(ref[i]);
    edits += edit_distance(r, split_words(hyp[i]));
    words += static_cast<int64_t>(r.size());
  }
  const double w = words ? static_cast<double>(edits) / static_cast<double>(words) : (edits ? 1.0 : 0.0);
  std::cout << "wer " << fmt(w) << " (" << edits << "/" << words << " over " << ref.size() << " lines)\n";
  if (a.max_wer >= 0 && w > a.max_wer) throw QualityFailure("WER " + fmt(w) + " exceeds --max-wer " + fmt(a.max_wer));
  return 0;
}

// ---------------------------------------------------------------- grad-check

struct GradArgs {
  std::string module = "all";
  int trials = 1;
  uint64_t seed = 0;
};

int cmd_grad_check(const GradArgs& a) {
  const auto cases = run_grad_suite(a.module, a.trials, a.seed);
  int64_t failed = 0;
  for (const auto& c : cases) {
    failed += !c.result.passed;
    std::cout << (c.result.passed ? "PASS " : "FAIL ") << c.module << "/" << c.name << " trial " << c.trial
              << " rel " << c.result.max_rel_error;
    if (!c.result.passed) std::cout << " at " << c.result.worst;
    std::cout << "\n";
  }
  std::cout << cases.size() - static_cast<size_t>(failed) << "/" << cases.size() << " checks passed\n";
  if (failed) throw QualityFailure(std::to_string(failed) + " gradient checks failed");
  return 0;
}

}  // namespace
}  // namespace avsr

int main(int argc, char** argv) {
  using namespace avsr;
  CLI::App app{"Audio-visual speech recognition: training, evaluation and analysis tools"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, Common& c, bool config_required) {
    auto* opt = sub->add_option("-c,--config", c.config, "YAML run configuration");
    if (config_required) opt->required();
    sub->add_option("--threads", c.threads, "BLAS threads (default: config, then AVSR_THREADS, then 1)");
  };

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic token task");
  add_common(train_cmd, ta.common, true);
  train_cmd->add_option("--steps", ta.steps, "Override train.steps");
  train_cmd->add_option("--output-dir", ta.output_dir, "Override output_dir");
  train_cmd->add_option("--seed", ta.seed, "Override seed");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy/beam WER and inter-CTC losses, optionally over SNRs");
  add_common(eval_cmd, ea.common, true);
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--mode", ea.mode, "ao, vo, av, av-masked-audio or av-masked-video");
  eval_cmd->add_option("--snr", ea.snr, "Comma-separated SNRs in dB, e.g. \"-5,0,5\"");
  eval_cmd->add_option("--utterances", ea.utterances, "Override eval.utterances");
  eval_cmd->add_flag("--greedy", ea.greedy, "Report greedy decoding only");
  eval_cmd->add_option("--max-wer", ea.max_wer, "Exit 1 when the WER exceeds this value");
  eval_cmd->add_option("-o,--output", ea.output, "Write the report here instead of stdout");

  DecodeArgs da;
  auto* decode_cmd = app.add_subcommand("decode", "Transcribe toy utterances, a WAV file or a posterior matrix");
  add_common(decode_cmd, da.common, false);
  decode_cmd->add_option("--checkpoint", da.checkpoint, "Checkpoint");
  decode_cmd->add_option("--mode", da.mode, "ao, vo, av, av-masked-audio or av-masked-video");
  decode_cmd->add_option("--wav", da.wav, "16 kHz mono WAV to transcribe (audio models)");
  decode_cmd->add_option("--posteriors", da.posteriors, "Text matrix of per-frame probabilities");
  decode_cmd->add_flag("--log", da.log_domain, "Posteriors are log-probabilities");
  decode_cmd->add_option("--utterances", da.utterances, "Override eval.utterances");
  decode_cmd->add_flag("--greedy", da.greedy, "Greedy decoding instead of beam search");

  ProfileArgs pa;
  auto* profile_cmd = app.add_subcommand("profile", "Parameter and FLOP accounting");
  add_common(profile_cmd, pa.common, true);
  profile_cmd->add_option("--seconds", pa.seconds, "Input duration in seconds")->capture_default_str();
  profile_cmd->add_option("--sweep", pa.sweep, "Back-end lengths, lo:hi:step or a comma list");
  profile_cmd->add_option("--variants", pa.variants, "Stage-1 attention variants for --sweep")->capture_default_str();
  profile_cmd->add_flag("--check-params", pa.check_params, "Compare counts with the instantiated model");
  profile_cmd->add_option("--output-dir", pa.output_dir, "Override output_dir");

  MixArgs ma;
  auto* mix_cmd = app.add_subcommand("mix-noise", "Mix noise into a WAV file at a target SNR");
  mix_cmd->add_option("-i,--input", ma.input, "Clean WAV")->required();
  mix_cmd->add_option("-o,--output", ma.output, "Output WAV")->required();
  mix_cmd->add_option("--snr", ma.snr, "Target SNR in dB (inf leaves the signal unchanged)")->required();
  mix_cmd->add_option("--noise", ma.noise, "Noise WAV, tiled to the signal length");
  mix_cmd->add_flag("--white", ma.white, "Gaussian white noise");
  mix_cmd->add_flag("--babble", ma.babble, "Toy babble (six overlapping toy utterances)");
  mix_cmd->add_option("--seed", ma.seed, "Noise generator seed");

  WerArgs wa;
  auto* wer_cmd = app.add_subcommand("wer", "Corpus word error rate of line-aligned transcripts");
  wer_cmd->add_option("--ref", wa.ref, "Reference transcripts")->required();
  wer_cmd->add_option("--hyp", wa.hyp, "Hypothesis transcripts")->required();
  wer_cmd->add_option("--max-wer", wa.max_wer, "Exit 1 when the WER exceeds this value");

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  grad_cmd->add_option("--module", ga.module, "all, ops, attention, audio, video, conformer, ctc or model")
      ->capture_default_str();
  grad_cmd->add_option("--trials", ga.trials, "Random draws per check")->capture_default_str();
  grad_cmd->add_option("--seed", ga.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*decode_cmd) return cmd_decode(da);
    if (*profile_cmd) return cmd_profile(pa);
    if (*mix_cmd) return cmd_mix_noise(ma);
    if (*wer_cmd) return cmd_wer(wa);
    if (*grad_cmd) return cmd_grad_check(ga);
  } catch (const QualityFailure& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

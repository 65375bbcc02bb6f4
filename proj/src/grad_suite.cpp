// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/grad_suite.hpp"

#include <functional>
#include <utility>

#include "avsr/audio.hpp"
#include "avsr/conformer.hpp"
#include "avsr/ctc.hpp"
#include "avsr/video.hpp"

namespace avsr {
namespace {

using TD = Tensor<double>;
using Leaves = std::vector<std::pair<std::string, TD>>;

constexpr double kTol = 1e-3;

TD rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = TD::zeros(std::move(shape), true);
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> rand_w(int64_t n, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

void randomize(Module<double>& m, Rng& rng) {
  for (auto& [name, t] : m.named_parameters()) {
    for (auto& v : t.vec()) v = rng.uniform(-0.5, 0.5);
  }
}

class Runner {
 public:
  Runner(std::string module, int trial, std::vector<GradCase>& out) : module_(std::move(module)), trial_(trial), out_(out) {}
  void check(const std::string& name, const std::function<TD()>& loss, const Leaves& leaves, double h = 1e-5,
             int64_t max_per_leaf = 0) {
    out_.push_back({module_, name, trial_, check_gradients(loss, leaves, h, kTol, max_per_leaf)});
  }

 private:
  std::string module_;
  int trial_;
  std::vector<GradCase>& out_;
};

void ops_checks(Runner& r, Rng& rng) {
  const int64_t n = rng.uniform_int(2, 5), d = rng.uniform_int(2, 5);
  auto a = rand_t({n, d}, rng), b = rand_t({n, d}, rng), pos = rand_t({n, d}, rng, 0.5, 2.0);
  auto w = rand_w(n * d, rng);
  r.check("add", [&] { return dot_const(add(a, b), w); }, {{"a", a}, {"b", b}});
  r.check("sub", [&] { return dot_const(sub(a, b), w); }, {{"a", a}, {"b", b}});
  r.check("mul", [&] { return dot_const(mul(a, b), w); }, {{"a", a}, {"b", b}});
  r.check("scale", [&] { return dot_const(scale(a, 1.7), w); }, {{"a", a}});
  r.check("add_scalar", [&] { return dot_const(mul(add_scalar(a, 0.3), a), w); }, {{"a", a}});
  r.check("exp", [&] { return dot_const(exp(a), w); }, {{"a", a}});
  r.check("log", [&] { return dot_const(log(pos), w); }, {{"pos", pos}});
  r.check("sigmoid", [&] { return dot_const(sigmoid(a), w); }, {{"a", a}});
  r.check("swish", [&] { return dot_const(swish(a), w); }, {{"a", a}});
  r.check("relu", [&] { return dot_const(relu(a), w); }, {{"a", a}});
  auto bias = rand_t({d}, rng);
  r.check("add_bias", [&] { return dot_const(add_bias(a, bias), w); }, {{"a", a}, {"bias", bias}});
  auto a2 = rand_t({n, 2 * d}, rng);
  r.check("glu", [&] { return dot_const(glu(a2), w); }, {{"a2", a2}});
  r.check("sum", [&] { return sum(mul(a, b)); }, {{"a", a}, {"b", b}});
  r.check("mean", [&] { return mean(mul(a, a)); }, {{"a", a}});
  r.check("softmax", [&] { return dot_const(softmax(a, 1), w); }, {{"a", a}});
  r.check("log_softmax", [&] { return dot_const(log_softmax(a, 1), w); }, {{"a", a}});
  r.check("transpose", [&] { return dot_const(transpose(a, 0, 1), w); }, {{"a", a}});
  auto wc = rand_w(2 * n * d, rng);
  r.check("concat", [&] { return dot_const(concat<double>({a, b}, 1), wc); }, {{"a", a}, {"b", b}});
  r.check("slice", [&] { return sum(mul(slice(a, 0, 1, n - 1), slice(b, 0, 0, n - 1))); }, {{"a", a}, {"b", b}});
  auto mb = rand_t({d, 3}, rng);
  auto w3 = rand_w(n * 3, rng);
  r.check("matmul", [&] { return dot_const(matmul(a, mb), w3); }, {{"a", a}, {"b", mb}});
  auto bl = rand_t({3}, rng);
  r.check("linear", [&] { return dot_const(linear(a, mb, bl), w3); }, {{"a", a}, {"w", mb}, {"b", bl}});
  auto g = rand_t({d}, rng, 0.5, 1.5), be = rand_t({d}, rng);
  r.check("layer_norm", [&] { return dot_const(layer_norm(a, g, be), w); }, {{"a", a}, {"g", g}, {"be", be}});
  BatchNormStats<double> st{TD::zeros({d}), TD::full({d}, 1.0)};
  r.check("batch_norm", [&] { return dot_const(batch_norm(a, 1, g, be, st, true), w); },
          {{"a", a}, {"g", g}, {"be", be}});
  for (int64_t k = 1; k <= 3; ++k) {
    const int64_t m = (n + k - 1) / k;
    auto wp = rand_w(m * d, rng);
    r.check("avg_pool1d", [&] { return dot_const(avg_pool1d(a, k), wp); }, {{"a", a}});
    auto small = rand_t({m, d}, rng);
    r.check("upsample_nearest1d", [&] { return dot_const(upsample_nearest1d(small, k, n), w); }, {{"small", small}});
  }
  auto x1 = rand_t({2, 4, 6}, rng), k1 = rand_t({4, 2, 3}, rng), c1b = rand_t({4}, rng);
  auto w1 = rand_w(2 * 4 * 3, rng);
  r.check("conv1d", [&] { return dot_const(conv(x1, k1, c1b, {{2}, {1}, 2}), w1); }, {{"x", x1}, {"k", k1}, {"b", c1b}});
  auto x2 = rand_t({1, 2, 5, 4}, rng), k2 = rand_t({3, 2, 3, 3}, rng);
  auto w2 = rand_w(3 * 3 * 4, rng);
  r.check("conv2d", [&] { return dot_const(conv(x2, k2, TD(), {{2, 1}, {1, 1}, 1}), w2); }, {{"x", x2}, {"k", k2}});
  auto x3 = rand_t({1, 1, 3, 4, 4}, rng), k3 = rand_t({2, 1, 3, 3, 3}, rng);
  auto w3d = rand_w(2 * 3 * 2 * 2, rng);
  r.check("conv3d", [&] { return dot_const(conv(x3, k3, TD(), {{1, 2, 2}, {1, 1, 1}, 1}), w3d); }, {{"x", x3}, {"k", k3}});
  // Distinct values 0.01 apart so no window has a near-tie within the step.
  auto xm = TD::zeros(x3.shape(), true);
  for (int64_t i = 0; i < xm.numel(); ++i) xm.vec()[static_cast<size_t>(i)] = 0.01 * static_cast<double>(i);
  for (int64_t i = xm.numel() - 1; i > 0; --i) std::swap(xm.vec()[static_cast<size_t>(i)], xm.vec()[static_cast<size_t>(rng.uniform_int(0, i))]);
  auto wm = rand_w(3 * 2 * 2, rng);
  r.check("max_pool", [&] { return dot_const(max_pool(xm, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}), wm); }, {{"x", xm}});
  auto wt = rand_w(2, rng);
  r.check("mean_trailing", [&] { return dot_const(mean_trailing(x2, 2), wt); }, {{"x", x2}});
  auto dw = rand_t({d, 3}, rng), dwb = rand_t({d}, rng);
  auto wd = rand_w(((n - 1) / 2 + 1) * d, rng);
  r.check("depthwise_conv1d", [&] { return dot_const(depthwise_conv1d(a, dw, dwb, 2, 1), wd); },
          {{"a", a}, {"w", dw}, {"b", dwb}});
  auto q = rand_t({2, n, 3}, rng), e = rand_t({2, 2 * (n + 1) - 1, 3}, rng);
  auto wr = rand_w(2 * n * n, rng);
  r.check("rel_scores", [&] { return dot_const(rel_scores(q, e, n + 1), wr); }, {{"q", q}, {"e", e}});
  auto ws = rand_w(((n + 1) / 2) * d, rng);
  r.check("subsample_rows", [&] { return dot_const(subsample_rows(a, 2), ws); }, {{"a", a}});
  auto wpad = rand_w((n + 2) * d, rng);
  r.check("pad_rows", [&] { return dot_const(pad_rows(a, n + 2), wpad); }, {{"a", a}});
  auto wperm = rand_w(x2.numel(), rng);
  r.check("permute", [&] { return dot_const(permute(x2, {2, 0, 3, 1}), wperm); }, {{"x", x2}});
  r.check("reshape", [&] { return dot_const(reshape(a, {d, n}), w); }, {{"a", a}});
  std::vector<bool> valid(static_cast<size_t>(d), true);
  valid[0] = false;
  r.check("mask_keys", [&] { return dot_const(softmax(mask_keys(a, valid), 1), w); }, {{"a", a}});
}

void attention_checks(Runner& r, Rng& rng) {
  AttentionConfig c;
  c.d_model = 8;
  c.heads = 2;
  MultiHeadAttention<double> m(c, rng);
  randomize(m, rng);
  const int64_t n = rng.uniform_int(3, 7);
  auto x = rand_t({n, 8}, rng);
  auto w = rand_w(n * 8, rng);
  auto leaves = m.named_parameters();
  leaves.emplace_back("x", x);
  r.check("regular", [&] { return dot_const(m.regular(x), w); }, leaves);
  r.check("grouped(3)", [&] { return dot_const(m.grouped(x, 3), w); }, leaves);
  r.check("patch(3)", [&] { return dot_const(m.patched(x, 3), w); }, leaves);
}

void audio_checks(Runner& r, Rng& rng) {
  AudioStem<double> stem(2, 3, rng, 6);
  auto mel = rand_t({6, 5}, rng);
  auto w = rand_w(3 * 3, rng);
  auto leaves = stem.named_parameters();
  leaves.emplace_back("mel", mel);
  r.check("audio_stem", [&] { return dot_const(stem.forward(mel), w); }, leaves);
}

void video_checks(Runner& r, Rng& rng) {
  VideoFrontend<double> fe({2, {2, 2}, 3}, rng);
  auto x = rand_t({3, 16, 16}, rng);
  auto w = rand_w(3 * 3, rng);
  auto leaves = fe.named_parameters();
  leaves.emplace_back("frames", x);
  r.check("video_frontend", [&] { return dot_const(fe.forward(x), w); }, leaves);
}

void conformer_checks(Runner& r, Rng& rng) {
  AttentionConfig c;
  c.heads = 2;
  c.variant = AttentionVariant::kPatch;
  c.patch = 2;
  ConformerBlock<double> block(8, 8, 1, c, 5, 4, 0.0, rng);
  auto x = rand_t({5, 8}, rng);
  auto w = rand_w(40, rng);
  auto leaves = block.named_parameters();
  leaves.emplace_back("x", x);
  r.check("block", [&] { return dot_const(block.forward(x), w); }, leaves);

  ConformerBlock<double> trans(8, 12, 2, c, 5, 4, 0.0, rng);
  auto wt = rand_w(3 * 12, rng);
  auto tl = trans.named_parameters();
  tl.emplace_back("x", x);
  r.check("transition_block", [&] { return dot_const(trans.forward(x), wt); }, tl);

  InterCtc<double> ic(8, 5, rng);
  auto wi = rand_w(40, rng);
  auto il = ic.named_parameters();
  il.emplace_back("x", x);
  r.check("inter_ctc", [&] {
    auto y = x;
    auto lp = ic.forward(y);
    return add(dot_const(y, wi), scale(sum(lp), 0.1));
  }, il);

  Fusion<double> f(8, 4, rng);
  auto v = rand_t({4, 8}, rng);
  auto wf = rand_w(32, rng);
  auto fl = f.named_parameters();
  fl.emplace_back("a", x);
  fl.emplace_back("v", v);
  r.check("fusion", [&] { return dot_const(f.forward(x, v), wf); }, fl);
}

void ctc_checks(Runner& r, Rng& rng) {
  const int64_t t = rng.uniform_int(4, 7);
  LabelSeq y;
  for (int64_t i = 0, k = rng.uniform_int(1, 3); i < k; ++i) y.push_back(rng.uniform_int(1, 3));
  auto logits = rand_t({t, 4}, rng, -2, 2);
  r.check("ctc_loss", [&] { return ctc_loss(log_softmax(logits, 1), y); }, {{"logits", logits}});
  auto inter = rand_t({t, 4}, rng, -2, 2);
  r.check("joint_loss", [&] {
    return joint_loss(ctc_loss(log_softmax(logits, 1), y), {ctc_loss(log_softmax(inter, 1), y)}, 0.5);
  }, {{"logits", logits}, {"inter", inter}});
}

void model_checks(Runner& r, Rng& rng) {
  auto cfg = tiny_config(Modality::kAudioVisual, 16, 5);
  cfg.dropout = 0.0;
  cfg.mel_bins = 8;
  AvsrModel<double> model(cfg, rng);
  ModelInput<double> in;
  in.mel = rand_t({8, 9}, rng);
  in.frames = rand_t({3, 16, 16}, rng);
  auto out0 = model.forward(in, Mode::kAudioVisual);
  const auto w = rand_w(out0.log_probs.numel(), rng);
  auto leaves = model.named_parameters();
  leaves.emplace_back("mel", *in.mel);
  leaves.emplace_back("frames", *in.frames);
  r.check("end_to_end", [&] {
    auto out = model.forward(in, Mode::kAudioVisual);
    auto loss = dot_const(out.log_probs, w);
    for (const auto& p : out.inters) loss = add(loss, scale(sum(p.log_probs), 0.01));
    return loss;
  }, leaves, 1e-5, 6);
}

using SuiteFn = void (*)(Runner&, Rng&);

const std::vector<std::pair<std::string, SuiteFn>>& suites() {
  static const std::vector<std::pair<std::string, SuiteFn>> s = {
      {"ops", ops_checks},       {"attention", attention_checks}, {"audio", audio_checks},
      {"video", video_checks},   {"conformer", conformer_checks}, {"ctc", ctc_checks},
      {"model", model_checks}};
  return s;
}

}  // namespace

const std::vector<std::string>& grad_suite_modules() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : suites()) out.push_back(name);
    return out;
  }();
  return names;
}

std::vector<GradCase> run_grad_suite(const std::string& module, int trials, uint64_t seed) {
  if (trials < 1) throw UsageError("grad-check: trials must be >= 1");
  bool found = module == "all";
  for (const auto& [name, fn] : suites()) found = found || name == module;
  if (!found) throw UsageError("grad-check: unknown module '" + module + "'");
  std::vector<GradCase> out;
  for (size_t s = 0; s < suites().size(); ++s) {
    const auto& [name, fn] = suites()[s];
    if (module != "all" && module != name) continue;
    for (int t = 0; t < trials; ++t) {
      Rng rng(seed, s * 1000 + static_cast<uint64_t>(t));
      Runner runner(name, t, out);
      fn(runner, rng);
    }
  }
  return out;
}

}  // namespace avsr

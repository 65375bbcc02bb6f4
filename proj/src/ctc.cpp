// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "avsr/ops.hpp"

namespace avsr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

template <class T>
int64_t valid_frames(const Tensor<T>& z, int64_t length, const char* who) {
  if (z.rank() != 2) {
    throw DimensionError(std::string(who) + ": expected [T, V] posteriors, got " + shape_str(z.shape()));
  }
  if (z.dim(1) < 2) throw DimensionError(std::string(who) + ": vocabulary needs at least 2 entries");
  if (length < 0) return z.dim(0);
  if (length > z.dim(0)) {
    throw ParameterError(std::string(who) + ": length " + std::to_string(length) + " exceeds " +
                         std::to_string(z.dim(0)) + " frames");
  }
  return length;
}

void check_labels(const LabelSeq& y, int64_t v, const char* who) {
  for (int64_t id : y) {
    if (id < 1 || id >= v) {
      throw ParameterError(std::string(who) + ": label " + std::to_string(id) + " outside [1, " +
                           std::to_string(v) + ")");
    }
  }
}

}  // namespace

void Vocab::validate() const {
  if (tokens.size() < 2) throw ConfigError("vocab: needs the blank plus at least one token");
  if (tokens[0] != kBlankToken) throw ConfigError(std::string("vocab: index 0 must be ") + kBlankToken);
  if (std::count(tokens.begin(), tokens.end(), kBlankToken) != 1) {
    throw ConfigError("vocab: blank token appears more than once");
  }
}

int64_t Vocab::id(const std::string& token) const {
  auto it = std::find(tokens.begin(), tokens.end(), token);
  if (it == tokens.end() || it == tokens.begin()) throw InputError("vocab: unknown token '" + token + "'");
  return static_cast<int64_t>(it - tokens.begin());
}

std::string Vocab::decode(const LabelSeq& y, const std::string& sep) const {
  std::string out;
  for (size_t i = 0; i < y.size(); ++i) {
    if (i) out += sep;
    out += tokens.at(static_cast<size_t>(y[i]));
  }
  return out;
}

Vocab Vocab::with_blank(const std::vector<std::string>& tokens) {
  Vocab v;
  v.tokens.push_back(kBlankToken);
  v.tokens.insert(v.tokens.end(), tokens.begin(), tokens.end());
  v.validate();
  return v;
}

int64_t ctc_min_frames(const LabelSeq& y) {
  int64_t n = static_cast<int64_t>(y.size());
  for (size_t i = 1; i < y.size(); ++i) n += y[i] == y[i - 1];
  return n;
}

template <class T>
Tensor<T> ctc_loss(const Tensor<T>& log_z, const LabelSeq& y, int64_t length, bool* infeasible) {
  const int64_t tn = valid_frames(log_z, length, "ctc_loss");
  const int64_t v = log_z.dim(1);
  check_labels(y, v, "ctc_loss");
  const bool bad = tn < std::max<int64_t>(1, ctc_min_frames(y));
  if (infeasible) *infeasible = bad;
  if (bad) {
    return detail::make_result<T>({}, {std::numeric_limits<T>::infinity()}, {log_z}, [](TensorNode<T>&) {});
  }

  const auto& lz = log_z.vec();
  const int64_t L = 2 * static_cast<int64_t>(y.size()) + 1;
  std::vector<int64_t> ext(static_cast<size_t>(L), kBlank);
  for (size_t i = 0; i < y.size(); ++i) ext[2 * i + 1] = y[i];
  auto at = [&](int64_t t, int64_t s) { return static_cast<double>(lz[static_cast<size_t>(t * v + ext[s])]); };
  auto skip_ok = [&](int64_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(static_cast<size_t>(tn * L), kNegInf), beta(alpha.size(), kNegInf);
  auto A = [&](int64_t t, int64_t s) -> double& { return alpha[static_cast<size_t>(t * L + s)]; };
  auto B = [&](int64_t t, int64_t s) -> double& { return beta[static_cast<size_t>(t * L + s)]; };

  A(0, 0) = at(0, 0);
  if (L > 1) A(0, 1) = at(0, 1);
  for (int64_t t = 1; t < tn; ++t) {
    for (int64_t s = 0; s < L; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (skip_ok(s)) acc = log_add(acc, A(t - 1, s - 2));
      if (acc != kNegInf) A(t, s) = acc + at(t, s);
    }
  }
  B(tn - 1, L - 1) = at(tn - 1, L - 1);
  if (L > 1) B(tn - 1, L - 2) = at(tn - 1, L - 2);
  for (int64_t t = tn - 2; t >= 0; --t) {
    for (int64_t s = 0; s < L; ++s) {
      double acc = B(t + 1, s);
      if (s + 1 < L) acc = log_add(acc, B(t + 1, s + 1));
      if (s + 2 < L && skip_ok(s + 2)) acc = log_add(acc, B(t + 1, s + 2));
      if (acc != kNegInf) B(t, s) = acc + at(t, s);
    }
  }
  double log_p = A(tn - 1, L - 1);
  if (L > 1) log_p = log_add(log_p, A(tn - 1, L - 2));

  // d(-log P)/d log z[t, k] = -sum over s with ext[s] = k of alpha * beta / (z * P).
  auto occupancy = std::make_shared<std::vector<T>>(lz.size(), T(0));
  for (int64_t t = 0; t < tn; ++t) {
    for (int64_t s = 0; s < L; ++s) {
      if (A(t, s) == kNegInf || B(t, s) == kNegInf) continue;
      (*occupancy)[static_cast<size_t>(t * v + ext[s])] +=
          static_cast<T>(std::exp(A(t, s) + B(t, s) - at(t, s) - log_p));
    }
  }
  return detail::make_result<T>({}, {static_cast<T>(-log_p)}, {log_z},
                                [log_z, occupancy](TensorNode<T>& self) {
                                  auto& g = detail::grad_of(log_z);
                                  for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[0] * (*occupancy)[i];
                                });
}

double ctc_brute_force(const Tensor<double>& z, const LabelSeq& y) {
  const int64_t tn = valid_frames(z, -1, "ctc_brute_force"), v = z.dim(1);
  check_labels(y, v, "ctc_brute_force");
  double paths = 1;
  for (int64_t t = 0; t < tn; ++t) paths *= static_cast<double>(v);
  if (paths > 1e7) {
    throw ParameterError("ctc_brute_force: " + std::to_string(v) + "^" + std::to_string(tn) +
                         " paths exceeds the 1e7 enumeration limit");
  }
  LabelSeq path(static_cast<size_t>(tn), 0);
  double total = 0;
  for (;;) {
    if (ctc_collapse(path) == y) {
      double p = 1;
      for (int64_t t = 0; t < tn; ++t) p *= z[t * v + path[static_cast<size_t>(t)]];
      total += p;
    }
    int64_t t = tn - 1;
    while (t >= 0 && ++path[static_cast<size_t>(t)] == v) path[static_cast<size_t>(t--)] = 0;
    if (t < 0) break;
  }
  return total;
}

template <class T>
Tensor<T> joint_loss(const Tensor<T>& final_loss, const std::vector<Tensor<T>>& inter_losses,
                     double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("joint_loss: lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
  if (inter_losses.empty()) return final_loss;
  Tensor<T> acc = inter_losses[0];
  for (size_t i = 1; i < inter_losses.size(); ++i) acc = add(acc, inter_losses[i]);
  const double k = static_cast<double>(inter_losses.size());
  return add(scale(final_loss, static_cast<T>(1.0 - lambda)), scale(acc, static_cast<T>(lambda / k)));
}

LabelSeq ctc_collapse(const LabelSeq& path) {
  LabelSeq out;
  int64_t prev = kBlank;
  for (int64_t p : path) {
    if (p != kBlank && p != prev) out.push_back(p);
    prev = p;
  }
  return out;
}

template <class T>
LabelSeq greedy_decode(const Tensor<T>& z, int64_t length) {
  const int64_t tn = valid_frames(z, length, "greedy_decode"), v = z.dim(1);
  LabelSeq path(static_cast<size_t>(tn));
  for (int64_t t = 0; t < tn; ++t) {
    const auto row = z.data().subspan(static_cast<size_t>(t * v), static_cast<size_t>(v));
    path[static_cast<size_t>(t)] = std::max_element(row.begin(), row.end()) - row.begin();
  }
  return ctc_collapse(path);
}

NgramLm::NgramLm(int64_t order, int64_t vocab_size, double delta)
    : order_(order), vocab_size_(vocab_size), delta_(delta) {
  if (order < 1) throw ParameterError("ngram: order must be >= 1");
  if (vocab_size < 2) throw ParameterError("ngram: vocab size must be >= 2");
  if (!(delta > 0)) throw ParameterError("ngram: smoothing delta must be positive");
}

void NgramLm::add(const LabelSeq& seq) {
  LabelSeq padded(static_cast<size_t>(order_ - 1), -1);
  padded.insert(padded.end(), seq.begin(), seq.end());
  for (size_t p = static_cast<size_t>(order_ - 1); p < padded.size(); ++p) {
    for (int64_t n = 1; n <= order_; ++n) {
      LabelSeq gram(padded.begin() + static_cast<std::ptrdiff_t>(p + 1 - static_cast<size_t>(n)),
                    padded.begin() + static_cast<std::ptrdiff_t>(p + 1));
      ++ngrams_[gram];
      gram.pop_back();
      ++contexts_[gram];
    }
  }
}

NgramLm NgramLm::train(const std::vector<LabelSeq>& corpus, int64_t order, int64_t vocab_size,
                       double delta) {
  NgramLm lm(order, vocab_size, delta);
  int64_t tokens = 0;
  for (const auto& seq : corpus) {
    check_labels(seq, vocab_size, "ngram");
    tokens += static_cast<int64_t>(seq.size());
    lm.add(seq);
  }
  if (tokens == 0) throw InputError("ngram: training corpus is empty");
  return lm;
}

double NgramLm::log_prob(int64_t token, const LabelSeq& history) const {
  if (order_ < 1) throw UsageError("ngram: model is not initialised");
  if (token < 1 || token >= vocab_size_) throw ParameterError("ngram: token out of range");
  LabelSeq h(static_cast<size_t>(order_ - 1), -1);
  h.insert(h.end(), history.begin(), history.end());
  const double words = static_cast<double>(vocab_size_ - 1);
  for (int64_t n = order_; n >= 1; --n) {
    LabelSeq gram(h.end() - (n - 1), h.end());
    auto ctx = contexts_.find(gram);
    if (ctx == contexts_.end() && n > 1) continue;
    const double cc = ctx == contexts_.end() ? 0.0 : static_cast<double>(ctx->second);
    gram.push_back(token);
    auto it = ngrams_.find(gram);
    const double c = it == ngrams_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((c + delta_) / (cc + delta_ * words));
  }
  return -std::log(words);
}

double NgramLm::score(const LabelSeq& seq) const {
  double s = 0;
  LabelSeq hist;
  for (int64_t tok : seq) {
    s += log_prob(tok, hist);
    hist.push_back(tok);
  }
  return s;
}

double NgramLm::perplexity(const std::vector<LabelSeq>& corpus) const {
  double lp = 0;
  int64_t n = 0;
  for (const auto& seq : corpus) {
    lp += score(seq);
    n += static_cast<int64_t>(seq.size());
  }
  if (n == 0) throw InputError("ngram: perplexity of an empty corpus");
  return std::exp(-lp / static_cast<double>(n));
}

void NgramLm::save(std::ostream& os) const {
  os.precision(17);
  os << "ngram " << order_ << ' ' << vocab_size_ << ' ' << delta_ << '\n';
  for (const auto& [gram, count] : ngrams_) {
    os << gram.size() << ' ' << count;
    for (int64_t id : gram) os << ' ' << id;
    os << '\n';
  }
}

NgramLm NgramLm::load(std::istream& is) {
  std::string magic;
  int64_t order = 0, vocab = 0;
  double delta = 0;
  if (!(is >> magic >> order >> vocab >> delta) || magic != "ngram") {
    throw InputError("ngram: missing 'ngram <order> <vocab> <delta>' header");
  }
  NgramLm lm(order, vocab, delta);
  int64_t n = 0, count = 0;
  while (is >> n >> count) {
    if (n < 1 || n > order || count < 1) throw InputError("ngram: malformed record");
    LabelSeq gram(static_cast<size_t>(n));
    for (auto& id : gram) {
      if (!(is >> id)) throw InputError("ngram: truncated record");
    }
    lm.ngrams_[gram] += count;
    gram.pop_back();
    lm.contexts_[gram] += count;
  }
  if (!is.eof()) throw InputError("ngram: malformed record");
  return lm;
}

template <class T>
std::vector<Hypothesis> beam_search(const Tensor<T>& log_z, const BeamConfig& cfg, const NgramLm* lm,
                                    int64_t length) {
  if (cfg.width < 1) throw ParameterError("beam_search: width must be >= 1");
  const int64_t tn = valid_frames(log_z, length, "beam_search"), v = log_z.dim(1);
  const double floor = std::log(kProbFloor);
  struct Entry {
    double pb = kNegInf, pnb = kNegInf, lm = 0;
    double total() const { return log_add(pb, pnb); }
  };
  auto score = [&](const LabelSeq& prefix, const Entry& e) {
    return e.total() + cfg.lm_weight * e.lm + cfg.length_bonus * static_cast<double>(prefix.size());
  };

  std::vector<std::pair<LabelSeq, Entry>> beam{{LabelSeq{}, Entry{0.0, kNegInf, 0.0}}};
  for (int64_t t = 0; t < tn; ++t) {
    auto lp = [&](int64_t k) { return std::max(floor, static_cast<double>(log_z[t * v + k])); };
    std::map<LabelSeq, Entry> next;
    for (const auto& [prefix, e] : beam) {
      auto& same = next[prefix];
      same.lm = e.lm;
      same.pb = log_add(same.pb, e.total() + lp(kBlank));
      for (int64_t c = 1; c < v; ++c) {
        LabelSeq ext = prefix;
        ext.push_back(c);
        auto [it, fresh] = next.try_emplace(ext);
        if (fresh) it->second.lm = e.lm + (lm ? lm->log_prob(c, prefix) : 0.0);
        if (!prefix.empty() && prefix.back() == c) {
          it->second.pnb = log_add(it->second.pnb, e.pb + lp(c));
          auto& stay = next[prefix];
          stay.pnb = log_add(stay.pnb, e.pnb + lp(c));
        } else {
          it->second.pnb = log_add(it->second.pnb, e.total() + lp(c));
        }
      }
    }
    beam.clear();
    for (auto& kv : next) {
      if (kv.second.total() != kNegInf) beam.push_back(std::move(kv));
    }
    std::stable_sort(beam.begin(), beam.end(),
                     [&](const auto& a, const auto& b) { return score(a.first, a.second) > score(b.first, b.second); });
    if (static_cast<int64_t>(beam.size()) > cfg.width) beam.resize(static_cast<size_t>(cfg.width));
  }

  std::vector<Hypothesis> out;
  for (const auto& [prefix, e] : beam) out.push_back({prefix, score(prefix, e), e.total(), e.lm});
  return out;
}

std::vector<Hypothesis> rescore(std::vector<Hypothesis> hyps, const SequenceScorer& scorer, double weight) {
  for (auto& h : hyps) h.log_score += weight * scorer(h.tokens);
  std::stable_sort(hyps.begin(), hyps.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.log_score > b.log_score; });
  return hyps;
}

template <class Sym>
int64_t edit_distance(const std::vector<Sym>& a, const std::vector<Sym>& b) {
  std::vector<int64_t> row(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) row[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    int64_t diag = row[0];
    row[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= b.size(); ++j) {
      const int64_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw InputError("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double token_error_rate(const LabelSeq& ref, const LabelSeq& hyp) {
  if (ref.empty()) throw InputError("token error rate: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

#define AVSR_INSTANTIATE(T)                                                                          \
  template Tensor<T> ctc_loss(const Tensor<T>&, const LabelSeq&, int64_t, bool*);                    \
  template Tensor<T> joint_loss(const Tensor<T>&, const std::vector<Tensor<T>>&, double);            \
  template LabelSeq greedy_decode(const Tensor<T>&, int64_t);                                        \
  template std::vector<Hypothesis> beam_search(const Tensor<T>&, const BeamConfig&, const NgramLm*, \
                                               int64_t);
AVSR_INSTANTIATE(float)
AVSR_INSTANTIATE(double)
#undef AVSR_INSTANTIATE

template int64_t edit_distance(const std::vector<std::string>&, const std::vector<std::string>&);
template int64_t edit_distance(const std::vector<int64_t>&, const std::vector<int64_t>&);

}  // namespace avsr

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "avsr/tensor.hpp"

namespace avsr {

using LabelSeq = std::vector<int64_t>;

constexpr int64_t kBlank = 0;
constexpr double kProbFloor = 1e-12;

/// Token inventory with the CTC blank at index 0.
struct Vocab {
  std::vector<std::string> tokens;

  /// Throws ConfigError unless tokens[0] is the only blank and size >= 2.
  void validate() const;
  int64_t size() const { return static_cast<int64_t>(tokens.size()); }
  /// Throws InputError for unknown tokens.
  int64_t id(const std::string& token) const;
  std::string decode(const LabelSeq& y, const std::string& sep = " ") const;

  static constexpr const char* kBlankToken = "<b>";
  /// Blank followed by the given tokens.
  static Vocab with_blank(const std::vector<std::string>& tokens);
};

/// Fewest frames any alignment of y needs: |y| plus one blank per adjacent repeat.
int64_t ctc_min_frames(const LabelSeq& y);

/// -log P(y | Z) for log-posteriors log_z [T, V], using the first `length`
/// frames (all when negative). Differentiable with respect to log_z.
/// Infeasible targets give +inf with a zero gradient and set *infeasible.
template <class T>
Tensor<T> ctc_loss(const Tensor<T>& log_z, const LabelSeq& y, int64_t length = -1,
                   bool* infeasible = nullptr);

/// P(y | Z) by enumerating all V^T paths of probabilities z [T, V].
/// Throws ParameterError when V^T exceeds 1e7.
double ctc_brute_force(const Tensor<double>& z, const LabelSeq& y);

/// (1 - lambda) * final + lambda * mean(inter); K = 0 leaves final unchanged.
template <class T>
Tensor<T> joint_loss(const Tensor<T>& final_loss, const std::vector<Tensor<T>>& inter_losses,
                     double lambda);

/// Per-frame argmax, repeats collapsed, blanks dropped.
template <class T>
LabelSeq greedy_decode(const Tensor<T>& z, int64_t length = -1);

/// Collapse map applied to a frame-level path.
LabelSeq ctc_collapse(const LabelSeq& path);

/// Count-based n-gram model over token ids 1..V-1.
///
/// P(w | h) = (c(h' w) + delta) / (c(h') + delta * (V - 1)), where h' is the
/// longest suffix of the (BOS-padded) history with a non-zero context count.
/// Each conditional is a normalised distribution over the V - 1 tokens.
class NgramLm {
 public:
  NgramLm() = default;
  NgramLm(int64_t order, int64_t vocab_size, double delta = 0.1);

  static NgramLm train(const std::vector<LabelSeq>& corpus, int64_t order, int64_t vocab_size,
                       double delta = 0.1);

  double log_prob(int64_t token, const LabelSeq& history) const;
  double score(const LabelSeq& seq) const;
  double perplexity(const std::vector<LabelSeq>& corpus) const;

  int64_t order() const { return order_; }
  int64_t vocab_size() const { return vocab_size_; }
  double delta() const { return delta_; }

  /// Text records "n count id id ...", sorted by n-gram.
  void save(std::ostream& os) const;
  static NgramLm load(std::istream& is);

 private:
  void add(const LabelSeq& seq);

  int64_t order_ = 0;
  int64_t vocab_size_ = 0;
  double delta_ = 0.1;
  // n-gram (context followed by word, BOS = -1) -> count. Context counts are
  // kept separately so backoff never needs a scan.
  std::map<LabelSeq, int64_t> ngrams_;
  std::map<LabelSeq, int64_t> contexts_;
};

struct Hypothesis {
  LabelSeq tokens;
  double log_score = 0;  // log_ctc + alpha * log_lm + beta * |tokens|
  double log_ctc = 0;
  double log_lm = 0;
};

struct BeamConfig {
  int64_t width = 16;
  double lm_weight = 0.6;     // alpha
  double length_bonus = 0.5;  // beta
};

/// CTC prefix beam search over log-posteriors [T, V], optionally fused with
/// an n-gram LM. Returns up to `width` hypotheses, best first.
template <class T>
std::vector<Hypothesis> beam_search(const Tensor<T>& log_z, const BeamConfig& cfg,
                                    const NgramLm* lm = nullptr, int64_t length = -1);

/// Log-probability of a whole token sequence from an external model.
using SequenceScorer = std::function<double(const LabelSeq&)>;

/// Adds weight * scorer(tokens) to every score and re-sorts.
std::vector<Hypothesis> rescore(std::vector<Hypothesis> hyps, const SequenceScorer& scorer,
                                double weight);

/// Unit-cost Levenshtein distance.
template <class Sym>
int64_t edit_distance(const std::vector<Sym>& a, const std::vector<Sym>& b);

std::vector<std::string> split_words(const std::string& line);

/// edit_distance / |ref|. Throws InputError on an empty reference.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
double token_error_rate(const LabelSeq& ref, const LabelSeq& hyp);

}  // namespace avsr

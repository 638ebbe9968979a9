#pragma once

// Monotone one-to-one word substitution decoder. Each output position picks
// one candidate for the aligned input word; the hypothesis score is a weighted
// sum of five features: forward and backward lexical log-probabilities, the
// log-probabilities of the output under both style language models, and a
// word count.

#include <span>
#include <utility>
#include <vector>

#include "stylemt/corpus.hpp"
#include "stylemt/lexicon.hpp"
#include "stylemt/ngram_lm.hpp"
#include "stylemt/pseudo.hpp"

namespace stylemt {

/// Weights are attached to absolute styles: `w_lm_tgt` scales the style-t
/// language model and `w_lm_src` the style-s one, whichever way we translate.
struct FeatureWeights {
  double w_fwd = 1;
  double w_bwd = 1;
  double w_lm_tgt = 1;
  double w_lm_src = -1;
  double w_count = 1;

  /// All ones except -1 on the language model of the input style.
  static FeatureWeights defaults(Style from);
  bool finite() const;
};

struct SmtConfig {
  std::size_t beam = 8;
  double floor_prob = 1e-4;  ///< lexical probability of identity/OOV candidates absent from a table
  double log_zero = -30;     ///< log-probability used for absent non-identity entries
};

struct SmtResult {
  Sentence tokens;
  double score = 0;
};

class SmtSystem {
 public:
  /// `forward` maps input words to output candidates, `backward` the reverse.
  /// The tables and models must outlive the system.
  SmtSystem(Style from, const TransferTable& forward, const TransferTable& backward, const NGramLM& lm_source,
            const NGramLM& lm_target, FeatureWeights weights, SmtConfig config);

  Style from() const { return from_; }
  const FeatureWeights& weights() const { return weights_; }
  const SmtConfig& config() const { return config_; }

  /// Candidate outputs for one input word with their forward log-probabilities.
  std::vector<std::pair<int, double>> candidates(int word) const;
  double forward_log_prob(int x, int y) const;
  double backward_log_prob(int x, int y) const;

  SmtResult translate_scored(std::span<const int> x) const;
  SmtResult translate_scored(std::span<const int> x, std::size_t beam) const;
  Sentence translate(std::span<const int> x) const { return translate_scored(x).tokens; }
  /// From-scratch feature evaluation of the aligned pair (x, y); |x| == |y|.
  double score(std::span<const int> x, std::span<const int> y) const;

 private:
  Style from_;
  const TransferTable* forward_;
  const TransferTable* backward_;
  const NGramLM* lm_source_;
  const NGramLM* lm_target_;
  FeatureWeights weights_;
  SmtConfig config_;
};

Sentence smt_translate(std::span<const int> x, const SmtSystem& system);

enum class PseudoPairing {
  back_translation,  ///< authentic output side: (SMT_{t->s}(y), y) trains s->t
  forward,           ///< authentic input side: (x, SMT_{s->t}(x)) trains s->t
};

struct PseudoCorpora {
  PseudoCorpus s2t;
  PseudoCorpus t2s;
};

PseudoCorpora build_pseudo_corpus(const StyleCorpus& source, const StyleCorpus& target, const SmtSystem& s2t,
                                  const SmtSystem& t2s, PseudoPairing pairing = PseudoPairing::back_translation);

}  // namespace stylemt

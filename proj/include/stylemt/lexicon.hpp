#pragma once

// Word-level transfer tables. A source word x of style `from` is mapped to
// candidates y with score P(from|x) * P(y|x) * P(to|y): the style preference
// of x, the normalized embedding similarity of y to x, and the style
// preference of y. Scores are renormalized over the retained candidates.

#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "stylemt/corpus.hpp"
#include "stylemt/embedding.hpp"

namespace stylemt {

struct StylePreference {
  double p_source = 0.5;
  double p_target = 0.5;

  double of(Style s) const { return s == Style::source ? p_source : p_target; }
};

/// Relative corpus frequency of `w` in each style. Throws std::invalid_argument
/// when the word never occurs.
StylePreference style_preference(const Vocabulary& vocab, int w);

/// Top-`k` candidates by cosine (ties to the lower id), negative cosines
/// clamped to zero, then linearly normalized. Falls back to {x: 1} when no
/// candidate has positive similarity.
std::vector<std::pair<int, double>> similarity_distribution(const EmbeddingMatrix& emb, int x,
                                                            std::span<const int> candidates, std::size_t k);

struct Candidate {
  int token = 0;
  double prob = 0;
  double pref_src = 0;
  double sim = 0;
  double pref_tgt = 0;

  bool operator==(const Candidate&) const = default;
};

struct LexiconConfig {
  std::size_t top_k = 10;
  double threshold = 0.2;        ///< fraction of the best score below which candidates are pruned
  double identity_floor = 1e-4;  ///< minimum pre-normalization score of the identity candidate
};

class TransferTable {
 public:
  TransferTable() = default;
  TransferTable(Style from, std::size_t vocab_size, std::size_t top_k);

  Style from() const { return from_; }
  Style to() const { return opposite(from_); }
  std::size_t vocab_size() const { return entries_.size(); }
  std::size_t top_k() const { return top_k_; }

  /// Candidates of `src`, sorted by probability descending (empty if none).
  std::span<const Candidate> candidates(int src) const;
  std::optional<double> prob(int src, int cand) const;
  /// Replaces the entry of `src`; candidates are re-sorted.
  void set(int src, std::vector<Candidate> cands);
  bool operator==(const TransferTable&) const = default;

  /// TSV `src<TAB>cand<TAB>prob<TAB>pref_src<TAB>sim<TAB>pref_tgt`, by source id then probability.
  void save_tsv(const std::filesystem::path& path, const Vocabulary& vocab) const;
  static TransferTable load_tsv(const std::filesystem::path& path, const Vocabulary& vocab, Style from,
                                std::size_t top_k);

 private:
  Style from_ = Style::source;
  std::size_t top_k_ = 0;
  std::vector<std::vector<Candidate>> entries_;
};

/// Every non-special word that occurs in the corpora and has a trained vector
/// is a source word and a candidate (itself included). The identity candidate
/// is never pruned and scores at least `identity_floor`.
TransferTable build_transfer_table(const Vocabulary& vocab, const EmbeddingMatrix& emb, Style from,
                                   const LexiconConfig& config);

}  // namespace stylemt

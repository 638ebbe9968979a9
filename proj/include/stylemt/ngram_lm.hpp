#pragma once

// Interpolated modified Kneser-Ney n-gram language model (Chen & Goodman
// discounts D1, D2, D3+ per order, continuation counts below the top order,
// interpolation down to a uniform distribution over the predictable words).
//
// After training the model is compiled to backoff form: every observed n-gram
// stores its fully interpolated probability and every observed context its
// interpolation weight. That is also exactly what the ARPA format holds, so a
// dumped and reloaded model scores identically up to print precision.

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "stylemt/corpus.hpp"

namespace stylemt {

struct KneserNeyDiscounts {
  double d1 = 0.75;
  double d2 = 0.75;
  double d3 = 0.75;
  bool fallback = true;  ///< absolute discounting used because counts-of-counts were degenerate

  double for_count(double count) const {
    if (count <= 0) return 0;
    if (count < 2) return d1;
    if (count < 3) return d2;
    return d3;
  }
};

class NGramLM {
 public:
  NGramLM() = default;

  /// Sentences are padded as `<s> w1 ... wn </s>`. Throws std::invalid_argument
  /// for an empty corpus or order outside what the key packing supports.
  static NGramLM train(const StyleCorpus& corpus, std::size_t vocab_size, std::size_t order = 4);

  std::size_t order() const { return order_; }
  std::size_t vocab_size() const { return vocab_size_; }
  /// Number of predictable tokens: the vocabulary minus `<s>` and `<pad>`.
  std::size_t predictable_count() const { return vocab_size_ - 2; }
  bool predictable(int w) const;
  /// Discounts of order n (1-based).
  const KneserNeyDiscounts& discounts(std::size_t n) const { return discounts_.at(n - 1); }

  /// Natural-log p(w | context); only the last order-1 context tokens matter.
  double log_prob(std::span<const int> context, int w) const;
  double prob(std::span<const int> context, int w) const;
  /// Sum of log p over the sentence and the closing `</s>`, starting after `<s>`.
  double score(std::span<const int> sentence) const;
  /// Contexts (length n-1) with at least one observed n-gram at order n.
  std::vector<std::vector<int>> observed_contexts(std::size_t n) const;

  void save_arpa(const std::filesystem::path& path, const Vocabulary& vocab) const;
  static NGramLM load_arpa(const std::filesystem::path& path, const Vocabulary& vocab);

 private:
  struct Entry {
    double log_prob = 0;     // natural log, fully interpolated
    double log_backoff = 0;  // natural log of the interpolation weight when used as context
    bool has_prob = false;
    bool is_context = false;
  };

  std::uint64_t key(std::span<const int> ids) const;
  std::vector<int> unkey(std::uint64_t k, std::size_t n) const;
  int clean(int w) const;
  int clean_context(int w) const;
  void set_bits();

  std::size_t order_ = 0;
  std::size_t vocab_size_ = 0;
  unsigned bits_ = 16;
  std::vector<KneserNeyDiscounts> discounts_;
  std::vector<std::unordered_map<std::uint64_t, Entry>> tables_;  // tables_[n-1] holds n-grams
};

}  // namespace stylemt

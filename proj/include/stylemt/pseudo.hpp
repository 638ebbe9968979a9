#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stylemt/corpus.hpp"

namespace stylemt {

enum class Provenance { smt, back_translated, self_sample };

std::string provenance_name(Provenance p);

struct PseudoPair {
  Sentence input;
  Sentence output;
  double weight = 1.0;
  Provenance provenance = Provenance::smt;
};

/// Training pairs for the model translating out of style `from`.
struct PseudoCorpus {
  Style from = Style::source;
  std::size_t epoch = 0;
  std::vector<PseudoPair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Writes line-aligned `pseudo.<dir>.src` / `pseudo.<dir>.tgt` (plus `.weight`
/// when `with_weights`) into `dir`.
void save_pseudo(const std::filesystem::path& dir, const PseudoCorpus& corpus, const Vocabulary& vocab,
                 bool with_weights = false);
PseudoCorpus load_pseudo(const std::filesystem::path& dir, Style from, const Vocabulary& vocab);

}  // namespace stylemt

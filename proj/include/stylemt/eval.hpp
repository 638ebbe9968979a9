#pragma once

// Automatic evaluation: corpus BLEU-4 against single references, transfer
// accuracy under a held-out style classifier, and report writers.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stylemt/classifier.hpp"
#include "stylemt/corpus.hpp"

namespace stylemt {

struct BleuStats {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  void add(const TokenLine& hypothesis, const TokenLine& reference);
  /// Percentage in [0, 100]; 0 when any precision is 0 or nothing was hypothesized.
  double bleu() const;
};

/// Case-insensitive corpus BLEU-4 without smoothing, brevity penalty
/// exp(1 - r/c) when the hypotheses are shorter. Throws std::invalid_argument
/// on empty or mismatched lists.
double corpus_bleu(const std::vector<TokenLine>& hypotheses, const std::vector<TokenLine>& references);

/// Fraction of outputs whose classifier probability for `target` exceeds 0.5;
/// empty outputs count as failures. Throws std::invalid_argument for an
/// untrained classifier.
double transfer_accuracy(const std::vector<Sentence>& outputs, Style target, const StyleClassifier& clf);

struct SentenceRecord {
  TokenLine input;
  TokenLine output;
  std::optional<TokenLine> reference;
  double target_prob = 0;
  std::string error;  ///< non-empty when the system failed on this sentence
};

struct EvalReport {
  std::string system;
  Style from = Style::source;
  double transfer_accuracy = 0;
  std::optional<double> bleu;
  std::vector<SentenceRecord> records;
};

using TransferFunction = std::function<Sentence(const Sentence&)>;

/// Runs `system` on every test sentence and scores the outputs. A system
/// exception is recorded on its sentence and counted as a failed transfer.
EvalReport evaluate_system(const std::string& name, const TransferFunction& system, const StyleCorpus& test,
                           const std::vector<TokenLine>* references, const StyleClassifier& clf,
                           const Vocabulary& vocab);

std::string report_json(const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);
/// Columns: input, output, reference, target probability, error.
void write_records_tsv(const std::filesystem::path& path, const EvalReport& report);
/// Aligned plain-text summary table of several reports.
std::string format_table(const std::vector<EvalReport>& reports);

}  // namespace stylemt

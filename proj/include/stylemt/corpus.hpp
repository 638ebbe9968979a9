#pragma once

// Style-labeled corpora, the shared two-style vocabulary, and a synthetic
// task generator with known ground-truth transfers.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace stylemt {

enum class Style : int { source = 0, target = 1 };

inline Style opposite(Style s) { return s == Style::source ? Style::target : Style::source; }
inline int style_index(Style s) { return static_cast<int>(s); }
/// "s2t" for source, "t2s" for target: the transfer direction starting at `from`.
std::string direction_name(Style from);

struct StyleLabel {
  Style id = Style::source;
  std::string name;
};

/// The two labels of one task. Throws std::invalid_argument when names collide.
struct TaskStyles {
  StyleLabel source{Style::source, "source"};
  StyleLabel target{Style::target, "target"};

  TaskStyles() = default;
  TaskStyles(std::string source_name, std::string target_name);
  const StyleLabel& operator[](Style s) const { return s == Style::source ? source : target; }
};

using TokenLine = std::vector<std::string>;
using Sentence = std::vector<int>;

enum class LongSentencePolicy { drop, truncate, keep };

struct TokenizerConfig {
  bool lowercase = true;
  std::size_t max_len = 30;
  LongSentencePolicy long_policy = LongSentencePolicy::drop;
};

/// Whitespace split with optional ASCII lowercasing.
TokenLine tokenize(std::string_view line, bool lowercase = true);
std::string detokenize(const TokenLine& tokens);

struct RawCorpus {
  Style style = Style::source;
  std::vector<TokenLine> sentences;
};

/// Reads one tokenized sentence per line. Throws DataError on a missing file
/// or when nothing survives filtering.
RawCorpus read_corpus_text(const std::filesystem::path& path, Style style, const TokenizerConfig& config);
void write_corpus_text(const std::filesystem::path& path, const std::vector<TokenLine>& sentences);

inline constexpr std::size_t kMaxVocabulary = 65000;

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  /// Unknown tokens map to kUnk.
  int id(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }
  std::uint64_t freq(Style style, int id) const;
  std::uint64_t total_freq(int id) const { return freq(Style::source, id) + freq(Style::target, id); }

  /// TSV rows `token<TAB>id<TAB>F(s)<TAB>F(t)`, specials included with zero counts.
  void save_tsv(const std::filesystem::path& path) const;
  static Vocabulary load_tsv(const std::filesystem::path& path);

  // Used by the builder.
  int add(const std::string& token, std::uint64_t freq_source, std::uint64_t freq_target);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::uint64_t> freq_[2];
};

/// Shared vocabulary over both styles: tokens ranked by total frequency (ties
/// by first occurrence, source corpus first), tokens with total count below
/// `min_count` dropped, top `cap` kept.
Vocabulary build_vocabulary(const RawCorpus& source, const RawCorpus& target, std::size_t cap,
                            std::size_t min_count = 1);

struct StyleCorpus {
  Style style = Style::source;
  std::vector<Sentence> sentences;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
};

StyleCorpus encode(const RawCorpus& raw, const Vocabulary& vocab);
StyleCorpus load_corpus(const std::filesystem::path& path, Style style, const Vocabulary& vocab,
                        const TokenizerConfig& config);
Sentence encode_line(const TokenLine& tokens, const Vocabulary& vocab);
TokenLine decode(const Sentence& ids, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t n_templates = 12;
  std::size_t n_sentences = 2000;  ///< per style, training split
  std::size_t lexicon_size = 20;
  /// Probability that an attribute slot in a training sentence is filled with
  /// the opposite style's word (label noise as found in review corpora).
  double noise = 0.0;
  std::size_t n_test = 0;  ///< per style, always noise-free
  /// The last `rare_pairs` attribute pairs are used in target-style sentences
  /// only `rare_weight` times as often as the others, and noise flips in
  /// source-style sentences show their target words at the same reduced rate.
  std::size_t rare_pairs = 0;
  double rare_weight = 1.0;
};

struct SyntheticTask {
  std::vector<std::string> templates;
  /// Bijection from source-style words to target-style words.
  std::vector<std::pair<std::string, std::string>> swap_lexicon;
  /// Ground-truth transfer of every generated sentence, line-aligned with the corpora.
  std::vector<TokenLine> truth_train[2];
  std::vector<TokenLine> truth_test[2];

  /// Applies the swap in place to words of style `from`; everything else is kept.
  TokenLine transfer(const TokenLine& sentence, Style from) const;
};

struct SyntheticData {
  RawCorpus train[2];
  RawCorpus test[2];
  SyntheticTask task;
};

SyntheticData generate_synthetic(const SyntheticConfig& config);
SyntheticData generate_synthetic(std::uint64_t seed, std::size_t n_templates, std::size_t n_sentences,
                                 std::size_t lexicon_size);

/// Writes `<task>.{train,test}.{0,1}`, `<task>.test.{0,1}.ref` and `<task>.lexicon.tsv`.
void save_synthetic(const std::filesystem::path& dir, const std::string& task_name, const SyntheticData& data);

}  // namespace stylemt

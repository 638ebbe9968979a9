#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "stylemt/corpus.hpp"
#include "stylemt/error.hpp"

using namespace stylemt;

namespace {

RawCorpus raw(Style s, std::vector<std::string> lines) {
  RawCorpus c;
  c.style = s;
  for (const auto& l : lines) c.sentences.push_back(tokenize(l));
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stylemt_corpus_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("tokenization lowercases and splits on whitespace") {
  const auto dir = temp_dir("tok");
  std::ofstream(dir / "in.txt") << "Good food .\n\n  \n";
  TokenizerConfig cfg;
  const RawCorpus c = read_corpus_text(dir / "in.txt", Style::source, cfg);
  REQUIRE(c.sentences.size() == 1);
  CHECK(c.sentences[0] == TokenLine{"good", "food", "."});
  CHECK(tokenize("A  B\tc", false) == TokenLine{"A", "B", "c"});
  CHECK(detokenize({"a", "b"}) == "a b");
  CHECK_THROWS_AS(read_corpus_text(dir / "missing.txt", Style::source, cfg), DataError);
}

TEST_CASE("long sentence policies") {
  const auto dir = temp_dir("long");
  std::ofstream(dir / "in.txt") << "a b c d\na b\n";
  TokenizerConfig cfg;
  cfg.max_len = 3;
  cfg.long_policy = LongSentencePolicy::drop;
  CHECK(read_corpus_text(dir / "in.txt", Style::source, cfg).sentences.size() == 1);
  cfg.long_policy = LongSentencePolicy::truncate;
  CHECK(read_corpus_text(dir / "in.txt", Style::source, cfg).sentences[0] == TokenLine{"a", "b", "c"});
  cfg.long_policy = LongSentencePolicy::keep;
  CHECK(read_corpus_text(dir / "in.txt", Style::source, cfg).sentences[0].size() == 4);
}

TEST_CASE("per-style frequencies and the vocabulary cap") {
  const RawCorpus s = raw(Style::source, {"a a b"});
  const RawCorpus t = raw(Style::target, {"a c"});
  const Vocabulary v = build_vocabulary(s, t, 100);
  const int a = v.id("a"), b = v.id("b"), c = v.id("c");
  CHECK(v.freq(Style::source, a) == 2);
  CHECK(v.freq(Style::target, a) == 1);
  CHECK(v.freq(Style::source, b) == 1);
  CHECK(v.freq(Style::target, c) == 1);

  // b and c tie on count; b was seen first.
  const Vocabulary capped = build_vocabulary(s, t, 2);
  CHECK(capped.size() == 2 + Vocabulary::kNumSpecial);
  CHECK(capped.find("a").has_value());
  CHECK(capped.find("b").has_value());
  CHECK_FALSE(capped.find("c").has_value());
  CHECK(capped.id("c") == Vocabulary::kUnk);

  const RawCorpus empty = raw(Style::target, {});
  CHECK_THROWS(build_vocabulary(s, empty, 10));
  CHECK_THROWS_AS(build_vocabulary(s, t, kMaxVocabulary), ConfigError);
}

TEST_CASE("min_count maps rare tokens to unk") {
  const Vocabulary v = build_vocabulary(raw(Style::source, {"a a b"}), raw(Style::target, {"a"}), 100, 2);
  CHECK(v.id("b") == Vocabulary::kUnk);
  CHECK(encode_line({"a", "b"}, v) == Sentence{v.id("a"), Vocabulary::kUnk});
}

TEST_CASE("vocabulary cap counts ordinary words only") {
  RawCorpus s;
  s.style = Style::source;
  for (int i = 0; i < 50; ++i) s.sentences.push_back({"w" + std::to_string(i)});
  const Vocabulary v = build_vocabulary(s, raw(Style::target, {"w0"}), 10);
  CHECK(v.size() == 10 + Vocabulary::kNumSpecial);
}

TEST_CASE("vocabulary TSV round trip") {
  const auto dir = temp_dir("vocab");
  const Vocabulary v = build_vocabulary(raw(Style::source, {"x y y"}), raw(Style::target, {"z y"}), 10);
  v.save_tsv(dir / "vocab.tsv");
  const Vocabulary w = Vocabulary::load_tsv(dir / "vocab.tsv");
  REQUIRE(w.size() == v.size());
  for (int i = 0; i < static_cast<int>(v.size()); ++i) {
    CHECK(w.token(i) == v.token(i));
    CHECK(w.freq(Style::source, i) == v.freq(Style::source, i));
    CHECK(w.freq(Style::target, i) == v.freq(Style::target, i));
  }
}

TEST_CASE("synthetic task generation") {
  SyntheticConfig cfg;
  cfg.seed = 5;
  cfg.n_sentences = 2000;
  cfg.lexicon_size = 20;
  cfg.n_test = 50;
  const SyntheticData a = generate_synthetic(cfg);
  const SyntheticData b = generate_synthetic(cfg);
  for (int s = 0; s < 2; ++s) {
    CHECK(a.train[s].sentences == b.train[s].sentences);
    CHECK(a.test[s].sentences == b.test[s].sentences);
  }

  // Every pair occurs at least 10 times in each style.
  for (const auto& [src, tgt] : a.task.swap_lexicon) {
    std::size_t ns = 0, nt = 0;
    for (const auto& line : a.train[0].sentences) ns += static_cast<std::size_t>(std::count(line.begin(), line.end(), src));
    for (const auto& line : a.train[1].sentences) nt += static_cast<std::size_t>(std::count(line.begin(), line.end(), tgt));
    CHECK(ns >= 10);
    CHECK(nt >= 10);
  }

  // Ground truth is length preserving and involutive.
  for (const auto& line : a.train[0].sentences) {
    const TokenLine t = a.task.transfer(line, Style::source);
    CHECK(t.size() == line.size());
    CHECK(a.task.transfer(t, Style::target) == line);
  }
  const auto& [bad, good] = a.task.swap_lexicon[0];
  CHECK(a.task.transfer({"the", "food", "is", bad}, Style::source) == TokenLine{"the", "food", "is", good});
  REQUIRE(a.task.truth_test[0].size() == a.test[0].sentences.size());
  for (std::size_t i = 0; i < a.test[0].sentences.size(); ++i)
    CHECK(a.task.truth_test[0][i] == a.task.transfer(a.test[0].sentences[i], Style::source));
}

TEST_CASE("rare target-side pairs") {
  SyntheticConfig cfg;
  cfg.seed = 2;
  cfg.rare_pairs = 5;
  cfg.rare_weight = 0.1;
  const SyntheticData d = generate_synthetic(cfg);
  auto count = [&](int s, const std::string& w) {
    std::size_t n = 0;
    for (const auto& line : d.train[s].sentences) n += static_cast<std::size_t>(std::count(line.begin(), line.end(), w));
    return n;
  };
  const auto& common = d.task.swap_lexicon.front();
  const auto& rare = d.task.swap_lexicon.back();
  CHECK(count(1, rare.second) < count(1, common.second) / 3);
  CHECK(count(0, rare.first) > count(0, common.first) / 2);
  cfg.rare_pairs = 20;
  CHECK_THROWS(generate_synthetic(cfg));
}

TEST_CASE("synthetic dump layout") {
  const auto dir = temp_dir("dump");
  SyntheticConfig cfg;
  cfg.n_sentences = 40;
  cfg.lexicon_size = 4;
  cfg.n_test = 5;
  save_synthetic(dir, "toy", generate_synthetic(cfg));
  for (const char* f : {"toy.train.0", "toy.train.1", "toy.test.0", "toy.test.1", "toy.test.0.ref", "toy.lexicon.tsv"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream lex(dir / "toy.lexicon.tsv");
  std::string line;
  std::size_t n = 0;
  while (std::getline(lex, line)) {
    CHECK(line.find('\t') != std::string::npos);
    ++n;
  }
  CHECK(n == 4);
}

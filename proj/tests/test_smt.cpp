#include <doctest.h>

#include "oracles.hpp"
#include "stylemt/smt_decoder.hpp"

using namespace stylemt;

namespace {

TransferTable identity_table(Style from, std::size_t vocab) {
  TransferTable t(from, vocab, 3);
  for (int w = Vocabulary::kNumSpecial; w < static_cast<int>(vocab); ++w) t.set(w, {{w, 1.0, 0, 0, 0}});
  return t;
}

StyleCorpus corpus(Style s, std::vector<Sentence> sents) {
  StyleCorpus c;
  c.style = s;
  c.sentences = std::move(sents);
  return c;
}

}  // namespace

TEST_CASE("default feature weights") {
  const FeatureWeights s2t = FeatureWeights::defaults(Style::source);
  CHECK(s2t.w_fwd == 1);
  CHECK(s2t.w_bwd == 1);
  CHECK(s2t.w_lm_tgt == 1);
  CHECK(s2t.w_lm_src == -1);
  CHECK(s2t.w_count == 1);
  const FeatureWeights t2s = FeatureWeights::defaults(Style::target);
  CHECK(t2s.w_lm_tgt == -1);
  CHECK(t2s.w_lm_src == 1);
}

TEST_CASE("identity tables reproduce the input and give identity pseudo pairs") {
  const std::size_t vocab = 10;
  const StyleCorpus x = corpus(Style::source, {{4, 5, 6}, {7}, {8, 9, 4, 5}});
  const StyleCorpus y = corpus(Style::target, {{5, 5}, {9, 8}});
  const NGramLM lm_s = NGramLM::train(x, vocab, 3), lm_t = NGramLM::train(y, vocab, 3);
  const TransferTable fs = identity_table(Style::source, vocab), ft = identity_table(Style::target, vocab);
  const SmtSystem s2t(Style::source, fs, ft, lm_s, lm_t, FeatureWeights::defaults(Style::source), {});
  const SmtSystem t2s(Style::target, ft, fs, lm_s, lm_t, FeatureWeights::defaults(Style::target), {});
  for (const auto& s : x.sentences) CHECK(s2t.translate(s) == s);

  const PseudoCorpora p = build_pseudo_corpus(x, y, s2t, t2s);
  REQUIRE(p.s2t.size() == y.size());
  REQUIRE(p.t2s.size() == x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(p.s2t.pairs[i].input == y.sentences[i]);
    CHECK(p.s2t.pairs[i].output == y.sentences[i]);
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(p.t2s.pairs[i].output == x.sentences[i]);
  CHECK_THROWS(build_pseudo_corpus(x, y, t2s, s2t));
}

TEST_CASE("small lattice matches exhaustive enumeration") {
  const std::size_t vocab = 9;
  TransferTable f(Style::source, vocab, 3), b(Style::target, vocab, 3);
  f.set(4, {{5, 0.6, 0, 0, 0}, {4, 0.4, 0, 0, 0}});
  f.set(6, {{7, 0.7, 0, 0, 0}, {6, 0.3, 0, 0, 0}});
  f.set(8, {{8, 1.0, 0, 0, 0}});
  b.set(5, {{4, 0.9, 0, 0, 0}, {5, 0.1, 0, 0, 0}});
  b.set(7, {{6, 1.0, 0, 0, 0}});
  const NGramLM lm_s = NGramLM::train(corpus(Style::source, {{4, 6, 8}, {4, 8}}), vocab, 2);
  const NGramLM lm_t = NGramLM::train(corpus(Style::target, {{5, 7, 8}, {5, 6}}), vocab, 2);
  const FeatureWeights w = FeatureWeights::defaults(Style::source);
  SmtConfig cfg;
  cfg.beam = 8;
  const SmtSystem sys(Style::source, f, b, lm_s, lm_t, w, cfg);
  const Sentence x{4, 6, 8};
  const auto best = oracle::exhaustive_smt(x, f, b, lm_s, lm_t, w, cfg);
  CHECK(best.paths == 4);
  const SmtResult r = sys.translate_scored(x);
  CHECK(r.tokens == best.tokens);
  CHECK(r.score == doctest::Approx(best.score).epsilon(1e-12));
  CHECK(sys.score(x, r.tokens) == doctest::Approx(r.score).epsilon(1e-12));
  CHECK_THROWS(sys.score(x, Sentence{5}));
}

TEST_CASE("random lattices with a covering beam") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto t = oracle::smt_lattice_trial(seed);
    CHECK(t.same_tokens);
    CHECK(t.score_gap < 1e-9);
    CHECK(t.paths <= 243);
  }
}

TEST_CASE("planted swap on the synthetic corpus") {
  SyntheticConfig sc;
  sc.seed = 4;
  sc.n_sentences = 500;
  sc.lexicon_size = 4;
  const SyntheticData d = generate_synthetic(sc);
  const Vocabulary v = build_vocabulary(d.train[0], d.train[1], 1000);
  const NGramLM lm_s = NGramLM::train(encode(d.train[0], v), v.size(), 3);
  const NGramLM lm_t = NGramLM::train(encode(d.train[1], v), v.size(), 3);
  TransferTable f = identity_table(Style::source, v.size()), b = identity_table(Style::target, v.size());
  const int bad = v.id("bad"), good = v.id("good");
  f.set(bad, {{good, 0.9, 0, 0, 0}, {bad, 0.1, 0, 0, 0}});
  b.set(good, {{bad, 0.9, 0, 0, 0}, {good, 0.1, 0, 0, 0}});
  const FeatureWeights w = FeatureWeights::defaults(Style::source);
  const SmtSystem sys(Style::source, f, b, lm_s, lm_t, w, {});
  const Sentence x = encode_line(tokenize("the food was bad ."), v);
  const Sentence y = sys.translate(x);
  CHECK(decode(y, v) == tokenize("the food was good ."));
  CHECK(y == oracle::exhaustive_smt(x, f, b, lm_s, lm_t, w, {}).tokens);
}

TEST_CASE("constructor preconditions") {
  const std::size_t vocab = 6;
  const StyleCorpus c = corpus(Style::source, {{4, 5}});
  const NGramLM lm = NGramLM::train(c, vocab, 2);
  const TransferTable fs = identity_table(Style::source, vocab), ft = identity_table(Style::target, vocab);
  FeatureWeights bad;
  bad.w_fwd = std::nan("");
  CHECK_THROWS(SmtSystem(Style::source, fs, ft, lm, lm, bad, {}));
  CHECK_THROWS(SmtSystem(Style::source, ft, fs, lm, lm, {}, {}));
  SmtConfig zero;
  zero.beam = 0;
  CHECK_THROWS(SmtSystem(Style::source, fs, ft, lm, lm, {}, zero));
}

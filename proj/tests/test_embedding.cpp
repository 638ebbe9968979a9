#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "stylemt/embedding.hpp"

using namespace stylemt;

TEST_CASE("cosine of plain vectors") {
  const std::vector<double> a{1, 0}, b{1, 1}, c{0, 1}, z{0, 0};
  CHECK(cosine(a, a) == doctest::Approx(1.0));
  CHECK(cosine(a, c) == 0.0);
  CHECK(std::abs(cosine(a, b) - 0.70710678) < 1e-6);
  CHECK(cosine(a, z) == 0.0);
  CHECK_THROWS(cosine(a, std::vector<double>{1, 2, 3}));
}

TEST_CASE("words sharing every context get similar vectors") {
  // "p" and "q" only ever appear between the same neighbours; "r" has its own.
  RawCorpus s, t;
  s.style = Style::source;
  t.style = Style::target;
  std::mt19937_64 rng(3);
  const std::vector<std::string> left{"l1", "l2", "l3"}, right{"r1", "r2", "r3"};
  for (int i = 0; i < 400; ++i) {
    const auto& l = left[rng() % 3];
    const auto& r = right[rng() % 3];
    s.sentences.push_back({l, "p", r});
    t.sentences.push_back({l, "q", r});
    s.sentences.push_back({"m1", "z", "m2"});
  }
  const Vocabulary v = build_vocabulary(s, t, 100);
  SgnsConfig cfg;
  cfg.dim = 20;
  cfg.window = 1;
  cfg.epochs = 5;
  cfg.seed = 9;
  const SgnsResult r = train_sgns(encode(s, v), encode(t, v), v.size(), cfg);
  const EmbeddingMatrix& e = r.embeddings;
  CHECK(e.cosine(v.id("p"), v.id("q")) > 0.8);
  CHECK(e.cosine(v.id("p"), v.id("p")) == doctest::Approx(1.0));
  CHECK(e.cosine(v.id("p"), v.id("q")) > e.cosine(v.id("p"), v.id("z")));
  CHECK_FALSE(e.trained(Vocabulary::kPad));
  CHECK_THROWS(e.cosine(Vocabulary::kPad, v.id("p")));
  REQUIRE(r.epoch_loss.size() == 5);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());

  // Same seed, same vectors.
  const SgnsResult again = train_sgns(encode(s, v), encode(t, v), v.size(), cfg);
  for (int w = 0; w < static_cast<int>(v.size()); ++w)
    if (e.trained(w))
      for (std::size_t j = 0; j < e.dim(); ++j) CHECK(e.row(w)[j] == again.embeddings.row(w)[j]);

  const auto dir = std::filesystem::temp_directory_path() / "stylemt_emb";
  std::filesystem::create_directories(dir);
  e.save_text(dir / "emb.txt", v);
  const EmbeddingMatrix loaded = EmbeddingMatrix::load_text(dir / "emb.txt", v);
  CHECK(std::abs(loaded.cosine(v.id("p"), v.id("q")) - e.cosine(v.id("p"), v.id("q"))) < 1e-12);
}

TEST_CASE("zero dimension is rejected") {
  RawCorpus s, t;
  s.style = Style::source;
  t.style = Style::target;
  s.sentences = {{"a", "b"}};
  t.sentences = {{"b", "a"}};
  const Vocabulary v = build_vocabulary(s, t, 10);
  SgnsConfig cfg;
  cfg.dim = 0;
  CHECK_THROWS(train_sgns(encode(s, v), encode(t, v), v.size(), cfg));
}

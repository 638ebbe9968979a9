#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "stylemt/seq2seq.hpp"

using namespace stylemt;

namespace {

Seq2SeqConfig small_config(std::size_t vocab = 12) {
  Seq2SeqConfig c;
  c.vocab_size = vocab;
  c.emb_dim = 6;
  c.hidden = 5;
  c.attention = 4;
  return c;
}

Sentence random_sentence(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<int> tok(Vocabulary::kNumSpecial, static_cast<int>(vocab) - 1);
  Sentence s(len(rng));
  for (auto& t : s) t = tok(rng);
  return s;
}

// log p(w | x, prefix) read off the teacher-forced pass.
double next_log_prob(const Seq2Seq& m, const Sentence& x, Sentence prefix, int w) {
  const std::size_t at = prefix.size();
  if (w == Vocabulary::kEos) return m.log_prob(x, prefix).steps.back();
  prefix.push_back(w);
  return m.log_prob(x, prefix).steps[at];
}

}  // namespace

TEST_CASE("initialization follows the fan-based normal and is seeded") {
  nn::ParamSet ps;
  ps.add("w", {300, 300});
  ps.add("b", {1, 300}, true);
  nn::init_normal_fan(ps, 7);
  double sum = 0, sq = 0;
  for (double v : ps[0].value) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(ps[0].value.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(std::abs(sd - std::sqrt(6.0 / 600.0)) < 0.05 * std::sqrt(6.0 / 600.0));
  CHECK(std::all_of(ps[1].value.begin(), ps[1].value.end(), [](double v) { return v == 0.0; }));

  Seq2Seq a(small_config(), 3), b(small_config(), 3);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value == b.params()[i].value);
}

TEST_CASE("log_prob is a normalized teacher-forced score") {
  Seq2Seq m(small_config(), 11);
  const Sentence x{4, 5, 6}, y{7, 8};
  const auto lp = m.log_prob(x, y);
  REQUIRE(lp.steps.size() == 3);
  CHECK(lp.total <= 0);
  double sum = 0;
  for (double s : lp.steps) sum += s;
  CHECK(lp.total == doctest::Approx(sum).epsilon(1e-12));

  // Every step distribution sums to one over the emittable tokens.
  for (std::size_t i = 0; i <= y.size(); ++i) {
    Sentence prefix(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(i));
    double mass = 0;
    for (int w = 0; w < 12; ++w)
      if (w != Vocabulary::kPad && w != Vocabulary::kBos) mass += std::exp(next_log_prob(m, x, prefix, w));
    CHECK(std::abs(mass - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(m.log_prob(x, Sentence{99}), std::invalid_argument);
  CHECK_THROWS_AS(m.log_prob(Sentence{}, y), std::invalid_argument);
}

TEST_CASE("attention weights sum to one at every step") {
  Seq2Seq m(small_config(), 5);
  for (const auto& row : m.attention_weights(Sentence{4, 9, 6, 5}, Sentence{7, 8, 10})) {
    double s = 0;
    for (double a : row) s += a;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("a single pair is memorized within 200 updates") {
  Seq2Seq m(small_config(), 2);
  Seq2SeqTrainer trainer(m);
  const Sentence x{4, 5, 6, 7}, y{8, 9, 10};
  const WeightedPair batch[] = {{x, y, 1.0}};
  for (int i = 0; i < 200; ++i) trainer.train_step(batch);
  CHECK(std::exp(m.log_prob(x, y).total / static_cast<double>(y.size())) >= 0.9);
}

TEST_CASE("zero weights leave the parameters untouched") {
  Seq2Seq m(small_config(), 2);
  const nn::ParamSet before = m.params();
  Seq2SeqTrainer trainer(m);
  const Sentence x{4, 5}, y{6};
  const WeightedPair batch[] = {{x, y, 0.0}, {y, x, 0.0}};
  CHECK(trainer.train_step(batch) == 0.0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.params()[i].value == before[i].value);
  const WeightedPair bad[] = {{x, y, 1.5}};
  CHECK_THROWS_AS(trainer.train_step(bad), std::invalid_argument);
}

TEST_CASE("training loss falls over the first 20 steps of a toy set") {
  Seq2Seq m(small_config(), 4);
  Seq2SeqTrainer trainer(m);
  std::mt19937_64 rng(9);
  std::vector<Sentence> xs, ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(random_sentence(rng, 12, 5));
    ys.push_back(xs.back());
    std::reverse(ys.back().begin(), ys.back().end());
  }
  std::vector<WeightedPair> batch;
  for (int i = 0; i < 10; ++i) batch.push_back({xs[i], ys[i], 1.0});
  std::vector<double> losses;
  for (int i = 0; i < 21; ++i) losses.push_back(trainer.train_step(batch));
  int non_decreasing = 0;
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (losses[i] >= losses[i - 1]) ++non_decreasing;
  CHECK(non_decreasing <= 2);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("beam search with beam 1 is greedy argmax decoding") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Seq2Seq m(small_config(), seed);
    const Sentence x = random_sentence(rng, 12, 4);
    const std::size_t max_len = Seq2Seq::default_max_len(x.size());
    Sentence out;
    while (out.size() < max_len) {
      int best = -1;
      double best_lp = -1e300;
      for (int w = 0; w < 12; ++w) {
        if (w == Vocabulary::kPad || w == Vocabulary::kBos) continue;
        const double lp = next_log_prob(m, x, out, w);
        if (lp > best_lp) {
          best_lp = lp;
          best = w;
        }
      }
      if (best == Vocabulary::kEos) break;
      out.push_back(best);
    }
    CHECK(m.greedy(x) == out);
  }
}

TEST_CASE("wider beams never score worse at the top") {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Seq2Seq m(small_config(), seed);
    const Sentence x = random_sentence(rng, 12, 6);
    const auto narrow = m.beam_decode(x, 1, 1);
    const auto wide = m.beam_decode(x, 12, 4);
    CHECK(wide.hypotheses.front().total >= narrow.hypotheses.front().total);
    for (std::size_t i = 0; i < wide.hypotheses.size(); ++i) {
      const auto& h = wide.hypotheses[i];
      double s = 0;
      for (double v : h.steps) s += v;
      CHECK(std::abs(s - h.total) < 1e-9);
      if (i > 0) CHECK(wide.hypotheses[i - 1].total >= h.total);
      CHECK(h.total == doctest::Approx(m.log_prob(x, h.tokens).total - (h.finished ? 0.0 : m.log_prob(x, h.tokens).steps.back())).epsilon(1e-9));
    }
  }
}

TEST_CASE("exhaustive beam matches enumeration on a three-token vocabulary") {
  // Emittable ids are <unk>, </s> and one word.
  Seq2Seq m(small_config(5), 13);
  const Sentence x{4, 4};
  const auto result = m.beam_decode(x, 9, 9, 2);

  struct Seq {
    Sentence tokens;
    double total;
  };
  std::vector<Seq> all;
  const int content[] = {Vocabulary::kUnk, 4};
  all.push_back({{}, next_log_prob(m, x, {}, Vocabulary::kEos)});
  for (int a : content) {
    const double la = next_log_prob(m, x, {}, a);
    all.push_back({{a}, la + next_log_prob(m, x, {a}, Vocabulary::kEos)});
    for (int b : content) all.push_back({{a, b}, la + next_log_prob(m, x, {a}, b)});
  }
  std::sort(all.begin(), all.end(), [](const Seq& p, const Seq& q) {
    return p.total != q.total ? p.total > q.total : p.tokens < q.tokens;
  });
  REQUIRE(result.hypotheses.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(result.hypotheses[i].tokens == all[i].tokens);
    CHECK(std::abs(result.hypotheses[i].total - all[i].total) < 1e-9);
  }
}

TEST_CASE("checkpoint round trip keeps log_prob bit-identical") {
  Seq2Seq m(small_config(), 17);
  const auto path = std::filesystem::temp_directory_path() / "stylemt_s2s_roundtrip.ckpt";
  m.save(path);
  const Seq2Seq back = Seq2Seq::load(path);
  std::filesystem::remove(path);
  CHECK(back.config() == m.config());
  const Sentence x{4, 5, 6}, y{7, 8, 9};
  CHECK(back.log_prob(x, y).total == m.log_prob(x, y).total);
  CHECK(back.beam_decode(x, 4, 4).hypotheses.front().tokens == m.beam_decode(x, 4, 4).hypotheses.front().tokens);
}

TEST_CASE("decoding is deterministic") {
  Seq2Seq m(small_config(), 23);
  const Sentence x{4, 7, 5};
  const auto a = m.beam_decode(x, 6, 3), b = m.beam_decode(x, 6, 3);
  REQUIRE(a.hypotheses.size() == b.hypotheses.size());
  for (std::size_t i = 0; i < a.hypotheses.size(); ++i) {
    CHECK(a.hypotheses[i].tokens == b.hypotheses[i].tokens);
    CHECK(a.hypotheses[i].total == b.hypotheses[i].total);
  }
}

#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "stylemt/classifier.hpp"
#include "stylemt/error.hpp"

using namespace stylemt;

namespace {

ClassifierConfig small(std::size_t vocab) {
  ClassifierConfig c;
  c.vocab_size = vocab;
  c.emb_dim = 8;
  c.hidden = 8;
  c.max_epochs = 4;
  return c;
}

struct Task {
  Vocabulary vocab;
  StyleCorpus train[2], test[2];
};

Task synthetic_task() {
  SyntheticConfig sc;
  sc.seed = 8;
  sc.n_sentences = 400;
  sc.lexicon_size = 8;
  sc.n_test = 100;
  const SyntheticData d = generate_synthetic(sc);
  Task t;
  t.vocab = build_vocabulary(d.train[0], d.train[1], 1000);
  for (int s = 0; s < 2; ++s) {
    t.train[s] = encode(d.train[s], t.vocab);
    t.test[s] = encode(d.test[s], t.vocab);
  }
  return t;
}

}  // namespace

TEST_CASE("probabilities are complementary and inside (0, 1)") {
  const StyleClassifier clf(small(20), 3);
  const Sentence x{4, 9, 12, 5};
  const double q = clf.prob_target(x);
  CHECK(q > 0);
  CHECK(q < 1);
  CHECK(clf.prob(x, Style::target) + clf.prob(x, Style::source) == 1.0);
  CHECK(clf.prob(x, Style::target) == q);
  CHECK(clf.prob_from_states(clf.hidden_states(x)) == doctest::Approx(q).epsilon(1e-12));
  CHECK_FALSE(clf.trained());
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ClassifierConfig cfg = small(10);
    cfg.emb_dim = 3;
    cfg.hidden = 2 + seed;
    StyleClassifier clf(cfg, seed);
    const Sentence x{4, 7, 5};
    const Style label = seed % 2 ? Style::target : Style::source;
    nn::Gradients g(clf.params());
    ad::Tape tape;
    nn::Binding b(tape, clf.params(), &g);
    tape.backward(clf.loss(b, x, label));
    std::vector<std::vector<double>*> values;
    std::vector<std::vector<double>> analytic;
    for (std::size_t i = 0; i < clf.params().size(); ++i) {
      values.push_back(&clf.params()[i].value);
      analytic.emplace_back(g[i].begin(), g[i].end());
    }
    const double err = oracle::max_gradient_error(values, [&] {
      ad::Tape t(false);
      nn::Binding bb(t, clf.params(), nullptr);
      return clf.loss(bb, x, label).item();
    }, analytic);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("training separates the synthetic styles") {
  const Task t = synthetic_task();
  ClassifierConfig cfg = small(t.vocab.size());
  cfg.emb_dim = 16;
  cfg.hidden = 16;
  cfg.max_epochs = 10;
  const ClassifierTraining r = train_classifier(t.train[0], t.train[1], cfg, 21);
  CHECK(r.model.trained());
  CHECK(classifier_accuracy(r.model, t.train[0]) >= 0.99);
  CHECK(classifier_accuracy(r.model, t.train[1]) >= 0.99);
  std::size_t confident = 0;
  for (const auto& s : t.test[1].sentences) confident += r.model.prob_target(s) > 0.9 ? 1 : 0;
  CHECK(static_cast<double>(confident) >= 0.95 * static_cast<double>(t.test[1].size()));

  const ClassifierTraining again = train_classifier(t.train[0], t.train[1], cfg, 21);
  CHECK(again.dev_accuracy == r.dev_accuracy);
  CHECK(again.train_loss == r.train_loss);

  const auto path = std::filesystem::temp_directory_path() / "stylemt_clf.ckpt";
  r.model.save(path);
  const StyleClassifier loaded = StyleClassifier::load(path);
  CHECK(loaded.trained());
  for (const auto& s : t.test[0].sentences) CHECK(loaded.prob_target(s) == r.model.prob_target(s));
}

TEST_CASE("empty corpora are rejected") {
  StyleCorpus x, y;
  x.style = Style::source;
  y.style = Style::target;
  x.sentences = {{4, 5}};
  CHECK_THROWS_AS(train_classifier(x, y, small(10), 1), DataError);
}

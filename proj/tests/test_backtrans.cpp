#include <doctest.h>

#include <numeric>

#include "stop_gradient.hpp"
#include "stylemt/backtrans.hpp"
#include "stylemt/error.hpp"

using namespace stylemt;

namespace {

StyleCorpus corpus(Style s, std::vector<Sentence> sents) {
  StyleCorpus c;
  c.style = s;
  c.sentences = std::move(sents);
  return c;
}

Seq2SeqConfig tiny(std::size_t vocab) {
  Seq2SeqConfig c;
  c.vocab_size = vocab;
  c.emb_dim = 6;
  c.hidden = 5;
  c.attention = 4;
  return c;
}

StyleClassifier constant_classifier(std::size_t vocab, double logit) {
  ClassifierConfig c;
  c.vocab_size = vocab;
  c.emb_dim = 2;
  c.hidden = 2;
  StyleClassifier clf(c, 1);
  for (auto& p : clf.params()) std::fill(p.value.begin(), p.value.end(), 0.0);
  clf.params()[clf.params().index_of("out_b")].value[0] = logit;
  clf.mark_trained();
  return clf;
}

StyleClassifier random_classifier(std::size_t vocab) {
  ClassifierConfig c;
  c.vocab_size = vocab;
  c.emb_dim = 3;
  c.hidden = 3;
  StyleClassifier clf(c, 9);
  clf.mark_trained();
  return clf;
}

Generator identity_generator(std::size_t k) {
  return [k](const Sentence& x) {
    DecodeResult r;
    for (std::size_t i = 0; i < k; ++i) r.hypotheses.push_back({x, -static_cast<double>(i), {}, true});
    return r;
  };
}

}  // namespace

TEST_CASE("one sample per input") {
  const StyleCorpus x = corpus(Style::source, {{4, 5}, {6}, {7, 8, 9}});
  BacktransConfig cfg;
  cfg.k_samples = 1;
  cfg.beam_train = 1;
  const StyleClassifier clf = random_classifier(10);
  const GeneratedPseudo g = generate_pseudo(identity_generator(3), Style::source, x, &clf, cfg, 1);
  CHECK(g.back_translated.size() == 3);
  CHECK(g.self_samples.size() == 3);
  CHECK(g.back_translated.from == Style::target);
  CHECK(g.self_samples.from == Style::source);
}

TEST_CASE("identity generator yields (y, y) pairs weighted by the reward") {
  const StyleCorpus y = corpus(Style::target, {{4, 5}, {6, 7, 8}});
  const StyleClassifier clf = random_classifier(10);
  BacktransConfig cfg;
  cfg.k_samples = 2;
  cfg.beam_train = 2;
  const GeneratedPseudo g = generate_pseudo(identity_generator(2), Style::target, y, &clf, cfg, 1);
  REQUIRE(g.back_translated.size() == 4);
  double mean = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Sentence& orig = y.sentences[i / 2];
    CHECK(g.back_translated.pairs[i].input == orig);
    CHECK(g.back_translated.pairs[i].output == orig);
    CHECK(g.back_translated.pairs[i].weight == 1.0);
    CHECK(g.back_translated.pairs[i].provenance == Provenance::back_translated);
    // Generated from target sentences, so the intended style is source.
    CHECK(g.self_samples.pairs[i].weight == clf.prob(orig, Style::source));
    CHECK(g.self_samples.pairs[i].provenance == Provenance::self_sample);
    mean += clf.prob(orig, Style::source) / 4;
  }
  CHECK(g.mean_reward == doctest::Approx(mean).epsilon(1e-12));

  cfg.disable_reward = true;
  const GeneratedPseudo off = generate_pseudo(identity_generator(2), Style::target, y, nullptr, cfg, 1);
  for (const auto& p : off.self_samples.pairs) CHECK(p.weight == 1.0);
  cfg.disable_reward = false;
  CHECK_THROWS_AS(generate_pseudo(identity_generator(2), Style::target, y, nullptr, cfg, 1), ConfigError);
  cfg.k_samples = 3;
  CHECK_THROWS_AS(generate_pseudo(identity_generator(2), Style::target, y, &clf, cfg, 1), ConfigError);
}

TEST_CASE("beam-score weighting renormalizes each input's candidates") {
  const StyleCorpus x = corpus(Style::source, {{4, 5}, {6}});
  BacktransConfig cfg;
  cfg.weighting = CandidateWeighting::beam_score;
  cfg.disable_reward = true;
  const GeneratedPseudo g = generate_pseudo(identity_generator(4), Style::source, x, nullptr, cfg, 1);
  REQUIRE(g.back_translated.size() == 8);
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < 4; ++j) z += g.back_translated.pairs[i * 4 + j].weight;
    CHECK(z == doctest::Approx(1.0));
    CHECK(g.back_translated.pairs[i * 4].weight == doctest::Approx(1.0 / (1 + std::exp(-1.0) + std::exp(-2.0) +
                                                                              std::exp(-3.0))));
  }
}

TEST_CASE("zero reward silences the self-sample term") {
  const std::size_t vocab = 10;
  const StyleCorpus x = corpus(Style::source, {{4, 5}, {6, 7}});
  const StyleClassifier zero = constant_classifier(vocab, -800.0);
  BacktransConfig cfg;
  cfg.k_samples = 2;
  cfg.beam_train = 2;
  const GeneratedPseudo g = generate_pseudo(identity_generator(2), Style::source, x, &zero, cfg, 1);
  for (const auto& p : g.self_samples.pairs) CHECK(p.weight == 0.0);

  Seq2Seq m(tiny(vocab), 4);
  const nn::ParamSet before = m.params();
  Seq2SeqTrainer trainer(m, {});
  std::vector<WeightedPair> batch;
  for (const auto& p : g.self_samples.pairs) batch.push_back({p.input, p.output, p.weight});
  CHECK(trainer.train_step(batch) == 0.0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.params()[i].value == before[i].value);
}

TEST_CASE("generated inputs carry no gradient into their generator") {
  const toy::GradientNorms detached = toy::back_translation_gradients(true);
  CHECK(detached.max_abs_generator == 0.0);
  CHECK(detached.trained > 0);
  // Control: a live path into the generator does produce gradient.
  const toy::GradientNorms live = toy::back_translation_gradients(false);
  CHECK(live.generator > 0);
}

TEST_CASE("epochs, history and the training mix") {
  const std::size_t vocab = 12;
  const StyleCorpus x = corpus(Style::source, {{4, 5, 6}, {7, 8}, {9, 10, 11}});
  const StyleCorpus y = corpus(Style::target, {{5, 4}, {8, 7, 6}});
  const StyleClassifier clf = random_classifier(vocab);
  BacktransConfig cfg;
  cfg.k_samples = 2;
  cfg.beam_train = 2;
  cfg.batch = 2;

  TrainState state(Seq2Seq(tiny(vocab), 1), Seq2Seq(tiny(vocab), 2), cfg.optimizer);
  const nn::ParamSet before = state.model(Style::source).params();
  cfg.max_epochs = 0;
  run_backtranslation(state, x, y, &clf, cfg);
  CHECK(state.epoch == 0);
  CHECK(state.history.empty());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(state.model(Style::source).params()[i].value == before[i].value);

  cfg.max_epochs = 2;
  std::size_t calls = 0;
  const EpochEvaluator eval = [&](Style, const Seq2Seq&) {
    ++calls;
    return EpochMetrics{0.5, 10.0};
  };
  std::vector<std::size_t> seen;
  run_backtranslation(state, x, y, &clf, cfg, &eval, [&](const TrainState& s) { seen.push_back(s.epoch); });
  CHECK(state.epoch == 2);
  CHECK(seen == std::vector<std::size_t>{1, 2});
  CHECK(calls == 4);
  REQUIRE(state.history.size() == 4);
  CHECK(state.history[0].from == Style::source);
  CHECK(state.history[1].from == Style::target);
  CHECK(state.history[3].epoch == 2);
  CHECK(state.history[0].loss_self.has_value());
  CHECK(state.history[0].bleu == 10.0);

  // s->t trains on back-translations of y plus its own samples of x.
  const PseudoCorpus& mix = state.last_training[0];
  std::size_t bt = 0, self = 0;
  for (const auto& p : mix.pairs) (p.provenance == Provenance::back_translated ? bt : self) += 1;
  CHECK(bt <= y.size() * 2);
  CHECK(self <= x.size() * 2);
  CHECK(bt + self == mix.size());
  for (const auto& p : mix.pairs)
    if (p.provenance == Provenance::back_translated) {
      CHECK(std::find(y.sentences.begin(), y.sentences.end(), p.output) != y.sentences.end());
    }

  const std::string line = state.history[0].to_json_line();
  CHECK(line.find("\"direction\":\"s2t\"") != std::string::npos);
  MetricRecord first;
  CHECK(first.to_json_line().find("\"mean_reward\":null") != std::string::npos);
}

TEST_CASE("back-translation is deterministic") {
  const std::size_t vocab = 12;
  const StyleCorpus x = corpus(Style::source, {{4, 5, 6}, {7, 8}});
  const StyleCorpus y = corpus(Style::target, {{5, 4}, {8, 7, 6}});
  const StyleClassifier clf = random_classifier(vocab);
  BacktransConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch = 3;
  TrainState a(Seq2Seq(tiny(vocab), 1), Seq2Seq(tiny(vocab), 2), cfg.optimizer);
  TrainState b(Seq2Seq(tiny(vocab), 1), Seq2Seq(tiny(vocab), 2), cfg.optimizer);
  run_backtranslation(a, x, y, &clf, cfg);
  run_backtranslation(b, x, y, &clf, cfg);
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].to_json_line() == b.history[i].to_json_line());
  for (std::size_t i = 0; i < a.model(Style::target).params().size(); ++i)
    CHECK(a.model(Style::target).params()[i].value == b.model(Style::target).params()[i].value);
}

TEST_CASE("pretraining") {
  SyntheticConfig sc;
  sc.seed = 6;
  sc.n_sentences = 800;
  sc.lexicon_size = 6;
  const SyntheticData d = generate_synthetic(sc);
  const Vocabulary v = build_vocabulary(d.train[0], d.train[1], 1000);
  // Ground-truth swaps stand in for the SMT output.
  PseudoCorpus pseudo;
  pseudo.from = Style::source;
  for (std::size_t i = 0; i < d.train[1].sentences.size(); ++i)
    pseudo.pairs.push_back({encode_line(d.task.truth_train[1][i], v), encode_line(d.train[1].sentences[i], v), 1.0,
                            Provenance::smt});
  PretrainConfig pc;
  pc.batch = 4;
  pc.max_epochs = 1;
  std::vector<double> losses, dev;
  Seq2SeqConfig mc = tiny(v.size());
  mc.emb_dim = 12;
  mc.hidden = 12;
  mc.attention = 12;
  pretrain_direction(pseudo, mc, 1, pc, &losses, &dev);
  REQUIRE(losses.size() > 120);
  // Sliding windows of 50 batches compared with the following 50.
  std::size_t windows = 0, flat = 0;
  for (std::size_t i = 0; i + 100 <= losses.size(); ++i) {
    const double a = std::accumulate(losses.begin() + i, losses.begin() + i + 50, 0.0);
    const double b = std::accumulate(losses.begin() + i + 50, losses.begin() + i + 100, 0.0);
    ++windows;
    flat += b >= a ? 1 : 0;
  }
  CHECK(static_cast<double>(flat) <= 0.05 * static_cast<double>(windows));
  CHECK(dev.size() == 1);

  PseudoCorpus empty;
  CHECK_THROWS_AS(pretrain_direction(empty, mc, 1, pc), DataError);
}

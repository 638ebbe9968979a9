#include "stylemt/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "stylemt/error.hpp"

namespace stylemt {

std::string ClassifierConfig::to_json() const {
  nlohmann::json j{{"vocab_size", vocab_size}, {"emb_dim", emb_dim},       {"hidden", hidden},
                   {"batch", batch},           {"max_epochs", max_epochs}, {"patience", patience},
                   {"dev_fraction", dev_fraction}};
  return j.dump();
}

ClassifierConfig ClassifierConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ClassifierConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.batch = j.value("batch", c.batch);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
  return c;
}

StyleClassifier::StyleClassifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  if (config.vocab_size == 0 || config.emb_dim == 0 || config.hidden == 0)
    throw ConfigError("classifier dimensions must be positive");
  register_params();
  nn::init_normal_fan(params_, seed);
}

void StyleClassifier::register_params() {
  emb_ = params_.add("emb", {config_.vocab_size, config_.emb_dim});
  fwd_ = nn::add_gru(params_, "fwd", config_.emb_dim, config_.hidden);
  bwd_ = nn::add_gru(params_, "bwd", config_.emb_dim, config_.hidden);
  out_w_ = params_.add("out_w", {2 * config_.hidden, 1});
  out_b_ = params_.add("out_b", {1, 1}, true);
}

ad::Var StyleClassifier::states(const nn::Binding& bound, std::span<const int> sentence) const {
  if (sentence.empty()) throw std::invalid_argument("classifier: empty sentence");
  for (int id : sentence)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw std::invalid_argument("classifier: token id out of range");
  ad::Tape& tape = bound.tape();
  const std::size_t T = sentence.size(), H = config_.hidden;
  std::vector<ad::Var> emb(T), f(T), b(T);
  for (std::size_t t = 0; t < T; ++t) emb[t] = ad::embedding_lookup(bound[emb_], sentence[t]);
  ad::Var h = tape.constant({1, H}, std::vector<double>(H, 0.0));
  for (std::size_t t = 0; t < T; ++t) f[t] = h = nn::gru_step(bound, fwd_, emb[t], h);
  h = tape.constant({1, H}, std::vector<double>(H, 0.0));
  for (std::size_t t = T; t-- > 0;) b[t] = h = nn::gru_step(bound, bwd_, emb[t], h);
  std::vector<ad::Var> rows(T);
  for (std::size_t t = 0; t < T; ++t) rows[t] = ad::concat({f[t], b[t]}, 1);
  return ad::concat(rows, 0);
}

ad::Var StyleClassifier::logit(const nn::Binding& bound, std::span<const int> sentence) const {
  return ad::add(ad::matmul(ad::mean_rows(states(bound, sentence)), bound[out_w_]), bound[out_b_]);
}

ad::Var StyleClassifier::loss(const nn::Binding& bound, std::span<const int> sentence, Style label) const {
  return ad::bce_with_logit(logit(bound, sentence), label == Style::target ? 1.0 : 0.0);
}

double StyleClassifier::prob_target(std::span<const int> sentence) const {
  ad::Tape tape(false);
  nn::Binding bound(tape, params_, nullptr);
  return ad::sigmoid(logit(bound, sentence)).item();
}

double StyleClassifier::prob(std::span<const int> sentence, Style style) const {
  const double q = prob_target(sentence);
  return style == Style::target ? q : 1.0 - q;
}

std::vector<std::vector<double>> StyleClassifier::hidden_states(std::span<const int> sentence) const {
  ad::Tape tape(false);
  nn::Binding bound(tape, params_, nullptr);
  ad::Var s = states(bound, sentence);
  std::vector<std::vector<double>> out(s.rows());
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (std::size_t c = 0; c < s.cols(); ++c) out[r].push_back(s.at(r, c));
  return out;
}

double StyleClassifier::prob_from_states(const std::vector<std::vector<double>>& states) const {
  if (states.empty()) throw std::invalid_argument("classifier: no states to pool");
  ad::Tape tape(false);
  nn::Binding bound(tape, params_, nullptr);
  std::vector<double> flat;
  for (const auto& row : states) {
    if (row.size() != 2 * config_.hidden) throw std::invalid_argument("classifier: state width mismatch");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  ad::Var s = tape.constant({states.size(), 2 * config_.hidden}, std::move(flat));
  return ad::sigmoid(ad::add(ad::matmul(ad::mean_rows(s), bound[out_w_]), bound[out_b_])).item();
}

void StyleClassifier::save(const std::filesystem::path& path) const {
  auto j = nlohmann::json::parse(config_.to_json());
  j["trained"] = trained_;
  nn::save_checkpoint(path, "classifier", j.dump(), params_);
}

StyleClassifier StyleClassifier::load(const std::filesystem::path& path) {
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.kind != "classifier") throw DataError(path.string() + " is not a classifier checkpoint");
  StyleClassifier clf;
  clf.config_ = ClassifierConfig::from_json(ckpt.config_json);
  clf.trained_ = nlohmann::json::parse(ckpt.config_json).value("trained", false);
  clf.register_params();
  nn::assign_params(clf.params_, ckpt.params);
  return clf;
}

namespace {

struct Example {
  const Sentence* sentence;
  Style label;
};

double accuracy_on(const StyleClassifier& clf, const std::vector<Example>& set) {
  std::size_t correct = 0;
  for (const auto& e : set)
    if (clf.prob(*e.sentence, e.label) > 0.5) ++correct;
  return set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(set.size());
}

double loss_on(const StyleClassifier& clf, const std::vector<Example>& set) {
  double total = 0;
  for (const auto& e : set) total -= std::log(std::max(clf.prob(*e.sentence, e.label), 1e-300));
  return set.empty() ? 0.0 : total / static_cast<double>(set.size());
}

}  // namespace

ClassifierTraining train_classifier(const StyleCorpus& x, const StyleCorpus& y, const ClassifierConfig& config,
                                    std::uint64_t seed) {
  if (x.empty() || y.empty()) throw DataError("classifier training needs sentences of both styles");
  if (config.batch == 0) throw ConfigError("classifier batch size must be positive");
  if (!(config.dev_fraction >= 0 && config.dev_fraction < 1)) throw ConfigError("dev_fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<Example> train, dev;
  for (const StyleCorpus* corpus : {&x, &y}) {
    const Style label = corpus == &x ? Style::source : Style::target;
    std::vector<std::size_t> order(corpus->size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_dev = static_cast<std::size_t>(config.dev_fraction * static_cast<double>(order.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Sentence* s = &corpus->sentences[order[i]];
      if (s->empty()) continue;
      (i < n_dev ? dev : train).push_back({s, label});
    }
  }
  if (train.empty()) throw DataError("classifier training set is empty");
  if (dev.empty()) dev = train;

  ClassifierTraining result{StyleClassifier(config, seed), {}, {}, {}};
  StyleClassifier& model = result.model;
  nn::Adadelta optimizer(model.params(), nn::AdadeltaConfig{});
  nn::Gradients grads(model.params());
  nn::ParamSet best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch) {
      const std::size_t end = std::min(train.size(), start + config.batch);
      grads.zero();
      ad::Tape tape;
      nn::Binding bound(tape, model.params(), &grads);
      std::vector<ad::Var> terms;
      for (std::size_t i = start; i < end; ++i) terms.push_back(model.loss(bound, *train[i].sentence, train[i].label));
      ad::Var loss = ad::mean(ad::concat(terms, 1));
      if (!std::isfinite(loss.item())) throw NumericalError("non-finite classifier loss");
      tape.backward(loss);
      optimizer.step(model.params(), grads);
      loss_sum += loss.item() * static_cast<double>(end - start);
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
    result.dev_accuracy.push_back(accuracy_on(model, dev));
    const double dev_loss = loss_on(model, dev);
    result.dev_loss.push_back(dev_loss);
    if (dev_loss < best_loss) {
      best_loss = dev_loss;
      best = model.params();
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  nn::assign_params(model.params(), best);
  model.mark_trained();
  return result;
}

double classifier_accuracy(const StyleClassifier& clf, const StyleCorpus& corpus) {
  if (corpus.empty()) throw std::invalid_argument("classifier_accuracy: empty corpus");
  std::size_t correct = 0;
  for (const auto& s : corpus.sentences)
    if (!s.empty() && clf.prob(s, corpus.style) > 0.5) ++correct;
  return static_cast<double>(correct) / static_cast<double>(corpus.size());
}

}  // namespace stylemt

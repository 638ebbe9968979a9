#include "stylemt/backtrans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "stylemt/error.hpp"

namespace stylemt {

GeneratedPseudo generate_pseudo(const Generator& generator, Style from, const StyleCorpus& inputs,
                                const StyleClassifier* reward, const BacktransConfig& config, std::size_t epoch) {
  if (inputs.empty()) throw DataError("generate_pseudo: empty input corpus");
  if (config.k_samples == 0 || config.k_samples > config.beam_train)
    throw ConfigError("k_samples must lie in [1, beam_train]");
  if (!reward && !config.disable_reward) throw ConfigError("reward classifier missing");
  const Style to = opposite(from);
  GeneratedPseudo out;
  out.back_translated.from = to;
  out.back_translated.epoch = epoch;
  out.self_samples.from = from;
  out.self_samples.epoch = epoch;
  double reward_sum = 0;
  std::size_t reward_count = 0;
  for (const auto& input : inputs.sentences) {
    if (input.empty()) continue;
    DecodeResult result = generator(input);
    if (result.hypotheses.size() > config.k_samples) result.hypotheses.resize(config.k_samples);
    std::vector<double> share(result.hypotheses.size(), 1.0);
    if (config.weighting == CandidateWeighting::beam_score && !result.hypotheses.empty()) {
      const double best = result.hypotheses.front().total;
      double z = 0;
      for (std::size_t i = 0; i < share.size(); ++i) z += share[i] = std::exp(result.hypotheses[i].total - best);
      for (double& s : share) s /= z;
    }
    for (std::size_t i = 0; i < result.hypotheses.size(); ++i) {
      const Sentence& hyp = result.hypotheses[i].tokens;
      if (hyp.empty()) continue;
      double q = 1.0;
      if (reward) {
        q = reward->prob(hyp, to);
        reward_sum += q;
        ++reward_count;
      }
      const double w_self = config.disable_reward ? 1.0 : q;
      out.back_translated.pairs.push_back({hyp, input, share[i], Provenance::back_translated});
      out.self_samples.pairs.push_back({input, hyp, w_self * share[i], Provenance::self_sample});
    }
  }
  out.mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
  return out;
}

GeneratedPseudo generate_pseudo(const Seq2Seq& model, Style from, const StyleCorpus& inputs,
                                const StyleClassifier* reward, const BacktransConfig& config, std::size_t epoch) {
  const Generator gen = [&](const Sentence& x) { return model.beam_decode(x, config.beam_train, config.k_samples); };
  return generate_pseudo(gen, from, inputs, reward, config, epoch);
}

std::string MetricRecord::to_json_line() const {
  nlohmann::json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["epoch"] = epoch;
  j["direction"] = direction_name(from);
  j["mean_reward"] = opt(mean_reward);
  j["transfer_accuracy"] = transfer_accuracy;
  j["bleu"] = opt(bleu);
  j["loss_back_translated"] = opt(loss_back_translated);
  j["loss_self"] = opt(loss_self);
  return j.dump();
}

TrainState::TrainState(Seq2Seq s2t, Seq2Seq t2s, const nn::AdadeltaConfig& optimizer) {
  models[0] = std::make_unique<Seq2Seq>(std::move(s2t));
  models[1] = std::make_unique<Seq2Seq>(std::move(t2s));
  for (std::size_t i = 0; i < 2; ++i) trainers[i] = std::make_unique<Seq2SeqTrainer>(*models[i], optimizer);
}

namespace {

struct PassLosses {
  double back_translated = 0;
  double self = 0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{seed, a, b};
  std::uint64_t out[1];
  seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
  return out[0];
}

// One shuffled pass of weighted mini-batches over the concatenated pairs.
PassLosses train_pass(Seq2SeqTrainer& trainer, const std::vector<const PseudoPair*>& pairs, std::size_t batch,
                      std::uint64_t seed) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  double sums[2] = {0, 0}, weights[2] = {0, 0};
  std::vector<WeightedPair> mb;
  std::vector<double> nll;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    mb.clear();
    for (std::size_t i = start; i < end; ++i) {
      const PseudoPair& p = *pairs[order[i]];
      mb.push_back({p.input, p.output, p.weight});
    }
    trainer.train_step(mb, &nll);
    for (std::size_t i = start; i < end; ++i) {
      const PseudoPair& p = *pairs[order[i]];
      const int term = p.provenance == Provenance::self_sample ? 1 : 0;
      sums[term] += p.weight * nll[i - start];
      weights[term] += p.weight;
    }
  }
  return {weights[0] > 0 ? sums[0] / weights[0] : 0.0, weights[1] > 0 ? sums[1] / weights[1] : 0.0};
}

}  // namespace

void run_epoch(TrainState& state, const StyleCorpus& x, const StyleCorpus& y, const StyleClassifier* reward,
               const BacktransConfig& config, const EpochEvaluator* evaluator) {
  if (config.batch == 0) throw ConfigError("batch size must be positive");
  const std::size_t k = state.epoch + 1;
  // Both generations use the previous epoch's models.
  GeneratedPseudo gen[2] = {generate_pseudo(state.model(Style::source), Style::source, x, reward, config, k),
                            generate_pseudo(state.model(Style::target), Style::target, y, reward, config, k)};
  PassLosses losses[2];
  for (Style from : {Style::source, Style::target}) {
    const int d = style_index(from);
    PseudoCorpus& data = state.last_training[static_cast<std::size_t>(d)];
    data.from = from;
    data.epoch = k;
    data.pairs = gen[1 - d].back_translated.pairs;
    data.pairs.insert(data.pairs.end(), gen[d].self_samples.pairs.begin(), gen[d].self_samples.pairs.end());
    std::vector<const PseudoPair*> pairs;
    for (const auto& p : data.pairs) pairs.push_back(&p);
    if (pairs.empty()) throw DataError("back-translation produced no training pairs");
    losses[d] = train_pass(*state.trainers[static_cast<std::size_t>(d)], pairs, config.batch,
                           mix_seed(config.seed, k, static_cast<std::uint64_t>(d)));
  }
  state.epoch = k;
  for (Style from : {Style::source, Style::target}) {
    const int d = style_index(from);
    MetricRecord rec;
    rec.epoch = k;
    rec.from = from;
    rec.mean_reward = gen[d].mean_reward;
    rec.loss_back_translated = losses[d].back_translated;
    rec.loss_self = losses[d].self;
    if (evaluator && *evaluator) {
      const EpochMetrics m = (*evaluator)(from, state.model(from));
      rec.transfer_accuracy = m.transfer_accuracy;
      rec.bleu = m.bleu;
    }
    state.history.push_back(rec);
  }
}

void run_backtranslation(TrainState& state, const StyleCorpus& x, const StyleCorpus& y, const StyleClassifier* reward,
                         const BacktransConfig& config, const EpochEvaluator* evaluator,
                         const std::function<void(const TrainState&)>& after_epoch) {
  while (state.epoch < config.max_epochs) {
    run_epoch(state, x, y, reward, config, evaluator);
    if (after_epoch) after_epoch(state);
  }
}

Seq2Seq pretrain_direction(const PseudoCorpus& pseudo, const Seq2SeqConfig& model_config, std::uint64_t init_seed,
                           const PretrainConfig& config, std::vector<double>* batch_losses,
                           std::vector<double>* dev_losses) {
  if (pseudo.empty()) throw DataError("pretraining needs a non-empty pseudo-parallel corpus");
  if (config.batch == 0) throw ConfigError("batch size must be positive");
  if (!(config.dev_fraction >= 0 && config.dev_fraction < 1)) throw ConfigError("dev_fraction must lie in [0, 1)");
  std::vector<const PseudoPair*> train, dev;
  {
    std::vector<std::size_t> order(pseudo.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(config.seed, 0, init_seed));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_dev = static_cast<std::size_t>(config.dev_fraction * static_cast<double>(order.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const PseudoPair* p = &pseudo.pairs[order[i]];
      if (p->input.empty() || p->output.empty()) continue;
      (i < n_dev ? dev : train).push_back(p);
    }
  }
  if (train.empty()) throw DataError("pretraining set is empty after filtering");
  if (dev.empty()) dev = train;

  Seq2Seq model(model_config, init_seed);
  if (config.warm_start) model.warm_start_embeddings(*config.warm_start);
  Seq2SeqTrainer trainer(model, config.optimizer);
  nn::ParamSet best = model.params();
  double best_dev = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<WeightedPair> mb;
  std::mt19937_64 rng(mix_seed(config.seed, 1, init_seed));
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += config.batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(train.size(), start + config.batch); ++i)
        mb.push_back({train[i]->input, train[i]->output, 1.0});
      const double loss = trainer.train_step(mb);
      if (batch_losses) batch_losses->push_back(loss);
    }
    double dev_loss = 0;
    for (const PseudoPair* p : dev) dev_loss -= model.log_prob(p->input, p->output).total;
    dev_loss /= static_cast<double>(dev.size());
    if (dev_losses) dev_losses->push_back(dev_loss);
    if (dev_loss < best_dev) {
      best_dev = dev_loss;
      best = model.params();
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  nn::assign_params(model.params(), best);
  return model;
}

PretrainResult pretrain(const PseudoCorpus& s2t, const PseudoCorpus& t2s, const Seq2SeqConfig& model_config,
                        const PretrainConfig& config) {
  std::vector<double> bl[2], dl[2];
  Seq2Seq a = pretrain_direction(s2t, model_config, mix_seed(config.seed, 2, 0), config, &bl[0], &dl[0]);
  Seq2Seq b = pretrain_direction(t2s, model_config, mix_seed(config.seed, 2, 1), config, &bl[1], &dl[1]);
  return {std::move(a), std::move(b), {std::move(bl[0]), std::move(bl[1])}, {std::move(dl[0]), std::move(dl[1])}};
}

}  // namespace stylemt

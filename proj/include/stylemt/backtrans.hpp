#pragma once

// Iterative back-translation. Each epoch both directional models translate
// their input corpus; the reverse model is trained on the resulting
// back-translated pairs (weight 1) while the generating model is trained on
// its own samples weighted by the reward classifier's probability of the
// intended style. Sampled sentences are plain token ids, so no gradient can
// flow back into the model that produced them.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stylemt/classifier.hpp"
#include "stylemt/corpus.hpp"
#include "stylemt/pseudo.hpp"
#include "stylemt/seq2seq.hpp"

namespace stylemt {

enum class CandidateWeighting {
  uniform,     ///< every top-k hypothesis counts equally
  beam_score,  ///< hypotheses weighted by their renormalized model probability
};

struct BacktransConfig {
  std::size_t k_samples = 4;
  std::size_t beam_train = 4;
  std::size_t max_epochs = 3;
  std::size_t batch = 32;
  bool disable_reward = false;  ///< self-sample weights forced to 1
  CandidateWeighting weighting = CandidateWeighting::uniform;
  std::uint64_t seed = 1;
  nn::AdadeltaConfig optimizer;
};

/// Top-k hypotheses for one input sentence.
using Generator = std::function<DecodeResult(const Sentence&)>;

struct GeneratedPseudo {
  PseudoCorpus back_translated;  ///< (hypothesis, original): trains the reverse model
  PseudoCorpus self_samples;     ///< (original, hypothesis, reward): trains the generator
  double mean_reward = 0;        ///< mean classifier probability over all samples
};

/// Inputs are sentences of style `from`. Empty hypotheses are skipped. When
/// `reward` is null the configuration must disable the reward.
GeneratedPseudo generate_pseudo(const Generator& generator, Style from, const StyleCorpus& inputs,
                                const StyleClassifier* reward, const BacktransConfig& config, std::size_t epoch);
GeneratedPseudo generate_pseudo(const Seq2Seq& model, Style from, const StyleCorpus& inputs,
                                const StyleClassifier* reward, const BacktransConfig& config, std::size_t epoch);

struct EpochMetrics {
  double transfer_accuracy = 0;
  std::optional<double> bleu;
};

struct MetricRecord {
  std::size_t epoch = 0;
  Style from = Style::source;
  /// Training fields are empty for the pretrained models (epoch 0).
  std::optional<double> mean_reward;
  double transfer_accuracy = 0;
  std::optional<double> bleu;
  std::optional<double> loss_back_translated;  ///< weighted NLL of the back-translated term
  std::optional<double> loss_self;             ///< weighted NLL of the reward-weighted term

  std::string to_json_line() const;
};

/// Evaluates one directional model after an epoch.
using EpochEvaluator = std::function<EpochMetrics(Style from, const Seq2Seq& model)>;

struct TrainState {
  std::size_t epoch = 0;
  std::array<std::unique_ptr<Seq2Seq>, 2> models;  ///< indexed by the input style
  std::array<std::unique_ptr<Seq2SeqTrainer>, 2> trainers;
  std::vector<MetricRecord> history;
  /// Weighted training pairs of the latest epoch, per updated model.
  std::array<PseudoCorpus, 2> last_training;

  TrainState(Seq2Seq s2t, Seq2Seq t2s, const nn::AdadeltaConfig& optimizer);
  Seq2Seq& model(Style from) { return *models[static_cast<std::size_t>(style_index(from))]; }
  const Seq2Seq& model(Style from) const { return *models[static_cast<std::size_t>(style_index(from))]; }
};

/// One iteration: generate from both current models first, then update the
/// source-to-target model, then the target-to-source model.
void run_epoch(TrainState& state, const StyleCorpus& x, const StyleCorpus& y, const StyleClassifier* reward,
               const BacktransConfig& config, const EpochEvaluator* evaluator = nullptr);

/// Runs epochs until `config.max_epochs`; `after_epoch` sees the state after each one.
void run_backtranslation(TrainState& state, const StyleCorpus& x, const StyleCorpus& y, const StyleClassifier* reward,
                         const BacktransConfig& config, const EpochEvaluator* evaluator = nullptr,
                         const std::function<void(const TrainState&)>& after_epoch = {});

struct PretrainConfig {
  std::size_t max_epochs = 10;
  std::size_t patience = 1;
  std::size_t batch = 32;
  double dev_fraction = 0.1;
  std::uint64_t seed = 1;
  nn::AdadeltaConfig optimizer;
  const EmbeddingMatrix* warm_start = nullptr;  ///< copied into both embedding tables when set
};

struct PretrainResult {
  Seq2Seq s2t;
  Seq2Seq t2s;
  std::array<std::vector<double>, 2> batch_losses;  ///< per mini-batch, per direction
  std::array<std::vector<double>, 2> dev_losses;    ///< per epoch, per direction
};

/// Maximum-likelihood training of one model on pseudo-parallel data, stopping
/// when the dev loss stops improving; the best epoch's parameters are kept.
Seq2Seq pretrain_direction(const PseudoCorpus& pseudo, const Seq2SeqConfig& model_config, std::uint64_t init_seed,
                           const PretrainConfig& config, std::vector<double>* batch_losses = nullptr,
                           std::vector<double>* dev_losses = nullptr);
PretrainResult pretrain(const PseudoCorpus& s2t, const PseudoCorpus& t2s, const Seq2SeqConfig& model_config,
                        const PretrainConfig& config);

}  // namespace stylemt

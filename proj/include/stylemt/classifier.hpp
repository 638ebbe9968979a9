#pragma once

// Sentence style classifier: bidirectional GRU, average pooling over the
// concatenated hidden states, sigmoid output giving Q(target | sentence).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stylemt/autodiff.hpp"
#include "stylemt/corpus.hpp"
#include "stylemt/nn.hpp"

namespace stylemt {

struct ClassifierConfig {
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 300;
  std::size_t hidden = 300;
  std::size_t batch = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 2;   ///< epochs without dev improvement before stopping
  double dev_fraction = 0.1;  ///< held out per style for early stopping

  std::string to_json() const;
  static ClassifierConfig from_json(const std::string& text);
};

class StyleClassifier {
 public:
  StyleClassifier() = default;
  StyleClassifier(const ClassifierConfig& config, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Q(target | sentence), strictly inside (0, 1) for finite parameters.
  double prob_target(std::span<const int> sentence) const;
  /// Q(style | sentence); the source probability is the exact complement.
  double prob(std::span<const int> sentence, Style style) const;

  /// Per-position [f_t; b_t] states, one row each.
  std::vector<std::vector<double>> hidden_states(std::span<const int> sentence) const;
  /// The output layer applied to the average of the given states.
  double prob_from_states(const std::vector<std::vector<double>>& states) const;

  /// Output logit built on the tape of `bound`.
  ad::Var logit(const nn::Binding& bound, std::span<const int> sentence) const;
  /// Binary cross-entropy against label 1 for the target style, 0 for the source.
  ad::Var loss(const nn::Binding& bound, std::span<const int> sentence, Style label) const;

  void save(const std::filesystem::path& path) const;
  static StyleClassifier load(const std::filesystem::path& path);

 private:
  void register_params();
  ad::Var states(const nn::Binding& bound, std::span<const int> sentence) const;

  ClassifierConfig config_;
  nn::ParamSet params_;
  std::size_t emb_ = 0, out_w_ = 0, out_b_ = 0;
  nn::GruLayer fwd_, bwd_;
  bool trained_ = false;
};

struct ClassifierTraining {
  StyleClassifier model;  ///< parameters of the best dev epoch
  std::vector<double> dev_accuracy;
  std::vector<double> dev_loss;  ///< mean binary cross-entropy; selects the kept epoch
  std::vector<double> train_loss;
};

/// Trains on source-style `x` (label 0) and target-style `y` (label 1).
/// Throws DataError when either corpus is empty.
ClassifierTraining train_classifier(const StyleCorpus& x, const StyleCorpus& y, const ClassifierConfig& config,
                                    std::uint64_t seed);

/// Fraction of `corpus` sentences assigned to `corpus.style` (probability > 0.5).
double classifier_accuracy(const StyleClassifier& clf, const StyleCorpus& corpus);

}  // namespace stylemt

#pragma once

// Attention-based GRU encoder-decoder. A bidirectional encoder produces one
// annotation [f_j; b_j] per input word; the decoder state is initialized from
// the last forward and first backward encoder states, attends additively over
// the annotations at every step, and predicts the next word from its state and
// the attention context.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stylemt/autodiff.hpp"
#include "stylemt/corpus.hpp"
#include "stylemt/embedding.hpp"
#include "stylemt/nn.hpp"

namespace stylemt {

struct Seq2SeqConfig {
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 300;
  std::size_t hidden = 300;
  std::size_t attention = 300;

  std::string to_json() const;
  static Seq2SeqConfig from_json(const std::string& text);
  bool operator==(const Seq2SeqConfig&) const = default;
};

struct LogProbResult {
  double total = 0;
  std::vector<double> steps;  ///< one per output token plus the closing </s>
};

struct Hypothesis {
  Sentence tokens;  ///< without the closing </s>
  double total = 0;
  std::vector<double> steps;
  bool finished = false;  ///< ended with </s> rather than at max_len
};

struct DecodeResult {
  std::vector<Hypothesis> hypotheses;  ///< best first
};

/// One training example of the weighted likelihood objective.
struct WeightedPair {
  std::span<const int> input;
  std::span<const int> output;
  double weight = 1.0;
};

class Seq2Seq {
 public:
  Seq2Seq() = default;
  /// Allocates and initializes every tensor; deterministic in `seed`.
  Seq2Seq(const Seq2SeqConfig& config, std::uint64_t seed);

  const Seq2SeqConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  std::size_t src_embedding_index() const { return src_emb_; }
  std::size_t tgt_embedding_index() const { return tgt_emb_; }

  /// Teacher-forced log P(y | x), including the final </s> step.
  LogProbResult log_prob(std::span<const int> x, std::span<const int> y) const;
  /// -log P(y | x) built on the tape of `bound` (params must come from this model).
  ad::Var nll(const nn::Binding& bound, std::span<const int> x, std::span<const int> y) const;

  /// Beam search scored by raw total log-probability; ties go to the smaller
  /// token sequence. `max_len` 0 selects 1.5 * |x| + 5.
  DecodeResult beam_decode(std::span<const int> x, std::size_t beam, std::size_t k, std::size_t max_len = 0) const;
  Sentence greedy(std::span<const int> x, std::size_t max_len = 0) const;
  /// Attention distributions over the input, one per decoded step of the
  /// teacher-forced pass (rows sum to 1).
  std::vector<std::vector<double>> attention_weights(std::span<const int> x, std::span<const int> y) const;

  /// Copies trained word vectors into both embedding tables (dims must match).
  void warm_start_embeddings(const EmbeddingMatrix& embeddings);

  void save(const std::filesystem::path& path) const;
  static Seq2Seq load(const std::filesystem::path& path);

  static std::size_t default_max_len(std::size_t input_len) { return input_len + input_len / 2 + 5; }

 private:
  struct Encoded;
  Encoded encode(const nn::Binding& bound, std::span<const int> x) const;
  /// One decoder step: returns the new state and the 1 x V log-probabilities.
  std::pair<ad::Var, ad::Var> step(const nn::Binding& bound, const Encoded& enc, const ad::Var& state, int prev,
                                   ad::Var* attention = nullptr) const;
  void check_tokens(std::span<const int> ids, const char* what) const;
  void register_params();

  Seq2SeqConfig config_;
  nn::ParamSet params_;
  std::size_t src_emb_ = 0, tgt_emb_ = 0;
  nn::GruLayer enc_fwd_, enc_bwd_, dec_;
  std::size_t init_w_ = 0, init_b_ = 0;
  std::size_t att_w_ = 0, att_u_ = 0, att_b_ = 0, att_v_ = 0;
  std::size_t out_w_ = 0, out_b_ = 0;
};

/// Optimizer state plus the weighted-NLL update of one model.
class Seq2SeqTrainer {
 public:
  Seq2SeqTrainer(Seq2Seq& model, nn::AdadeltaConfig config = {});

  /// One Adadelta step on sum(w * NLL) / sum(w). Returns that mean loss; a batch
  /// whose weights are all zero leaves the model untouched and returns 0.
  /// Throws NumericalError naming the first pair with a non-finite loss.
  /// `pair_nll`, when given, receives -log P(y|x) of every pair (0 for zero weights).
  double train_step(std::span<const WeightedPair> batch, std::vector<double>* pair_nll = nullptr);
  double last_grad_norm() const { return last_norm_; }
  std::size_t steps() const { return optimizer_.steps(); }

 private:
  Seq2Seq* model_;
  nn::Adadelta optimizer_;
  nn::Gradients grads_;
  double last_norm_ = 0;
};

}  // namespace stylemt

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stylemt/corpus.hpp"

namespace stylemt {

struct SgnsConfig {
  std::size_t dim = 300;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  std::uint64_t seed = 1;
};

/// V x d word vectors with cached row norms. Rows of words never seen in
/// training (and of special tokens) are untrained and reject cosine queries.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t vocab_size, std::size_t dim);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(int id) const;
  std::span<double> mutable_row(int id);
  bool trained(int id) const;
  void set_trained(int id, bool trained);
  double norm(int id) const { return norms_.at(static_cast<std::size_t>(id)); }
  /// Recomputes norms; call after mutating rows.
  void refresh_norms();
  /// Throws std::invalid_argument for untrained or out-of-range ids.
  double cosine(int a, int b) const;
  void scale(double c);

  /// Text format: header `V d`, then `token v1 ... vd` for every trained row.
  void save_text(const std::filesystem::path& path, const Vocabulary& vocab) const;
  static EmbeddingMatrix load_text(const std::filesystem::path& path, const Vocabulary& vocab);

 private:
  std::size_t vocab_size_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::vector<double> norms_;
  std::vector<char> trained_;
};

/// Cosine of two equal-length vectors, clamped to [-1, 1]; 0 when either is zero.
double cosine(std::span<const double> a, std::span<const double> b);

struct SgnsResult {
  EmbeddingMatrix embeddings;
  std::vector<double> epoch_loss;  ///< mean negative-sampling loss per epoch
};

/// Skip-gram with negative sampling over the union of both corpora, single
/// threaded and deterministic under `config.seed`.
SgnsResult train_sgns(const StyleCorpus& source, const StyleCorpus& target, std::size_t vocab_size,
                      const SgnsConfig& config);

}  // namespace stylemt

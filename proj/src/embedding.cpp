#include "stylemt/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "stylemt/error.hpp"

namespace stylemt {

EmbeddingMatrix::EmbeddingMatrix(std::size_t vocab_size, std::size_t dim)
    : vocab_size_(vocab_size), dim_(dim), values_(vocab_size * dim, 0.0), norms_(vocab_size, 0.0),
      trained_(vocab_size, 0) {}

std::span<const double> EmbeddingMatrix::row(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) throw std::invalid_argument("embedding id out of range");
  return {values_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

std::span<double> EmbeddingMatrix::mutable_row(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) throw std::invalid_argument("embedding id out of range");
  return {values_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

bool EmbeddingMatrix::trained(int id) const {
  return id >= 0 && static_cast<std::size_t>(id) < vocab_size_ && trained_[static_cast<std::size_t>(id)];
}

void EmbeddingMatrix::set_trained(int id, bool trained) { trained_.at(static_cast<std::size_t>(id)) = trained; }

void EmbeddingMatrix::refresh_norms() {
  for (std::size_t i = 0; i < vocab_size_; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < dim_; ++j) s += values_[i * dim_ + j] * values_[i * dim_ + j];
    norms_[i] = std::sqrt(s);
  }
}

double EmbeddingMatrix::cosine(int a, int b) const {
  if (!trained(a) || !trained(b)) throw std::invalid_argument("cosine query on untrained token id");
  const auto ra = row(a), rb = row(b);
  double dot = 0;
  for (std::size_t j = 0; j < dim_; ++j) dot += ra[j] * rb[j];
  const double denom = norms_[static_cast<std::size_t>(a)] * norms_[static_cast<std::size_t>(b)];
  if (denom == 0) return 0.0;
  return std::clamp(dot / denom, -1.0, 1.0);
}

void EmbeddingMatrix::scale(double c) {
  for (double& v : values_) v *= c;
  refresh_norms();
}

void EmbeddingMatrix::save_text(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  std::size_t n = 0;
  for (std::size_t i = 0; i < vocab_size_; ++i) n += trained_[i] ? 1 : 0;
  out << n << ' ' << dim_ << '\n';
  char buf[32];
  for (std::size_t i = 0; i < vocab_size_; ++i) {
    if (!trained_[i]) continue;
    out << vocab.token(static_cast<int>(i));
    for (std::size_t j = 0; j < dim_; ++j) {
      std::snprintf(buf, sizeof(buf), " %.17g", values_[i * dim_ + j]);
      out << buf;
    }
    out << '\n';
  }
}

EmbeddingMatrix EmbeddingMatrix::load_text(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("embedding file not found: " + path.string());
  std::size_t n = 0, dim = 0;
  if (!(in >> n >> dim) || dim == 0) throw DataError("malformed embedding header in " + path.string());
  EmbeddingMatrix m(vocab.size(), dim);
  std::string line;
  std::getline(in, line);
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::getline(in, line)) throw DataError("embedding file truncated: " + path.string());
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    auto id = vocab.find(tok);
    if (!id) continue;
    auto row = m.mutable_row(*id);
    for (std::size_t j = 0; j < dim; ++j)
      if (!(ss >> row[j])) throw DataError("short embedding row for " + tok);
    m.set_trained(*id, true);
  }
  m.refresh_norms();
  return m;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine of vectors with different sizes");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

SgnsResult train_sgns(const StyleCorpus& source, const StyleCorpus& target, std::size_t vocab_size,
                      const SgnsConfig& config) {
  if (config.dim < 2) throw std::invalid_argument("train_sgns: dim must be >= 2");
  if (config.window == 0 || config.negatives == 0 || config.epochs == 0)
    throw std::invalid_argument("train_sgns: window, negatives and epochs must be positive");
  if (source.empty() || target.empty()) throw std::invalid_argument("train_sgns: empty corpus");

  // The token stream drops specials; each sentence is its own context span.
  std::vector<std::vector<int>> stream;
  std::vector<double> freq(vocab_size, 0.0);
  std::size_t total = 0;
  for (const StyleCorpus* c : {&source, &target})
    for (const auto& s : c->sentences) {
      std::vector<int> kept;
      for (int id : s) {
        if (id < Vocabulary::kNumSpecial) continue;
        if (static_cast<std::size_t>(id) >= vocab_size) throw std::invalid_argument("train_sgns: token id out of range");
        kept.push_back(id);
        freq[static_cast<std::size_t>(id)] += 1;
      }
      total += kept.size();
      if (!kept.empty()) stream.push_back(std::move(kept));
    }
  if (total == 0) throw std::invalid_argument("train_sgns: corpora contain no regular tokens");

  std::vector<double> cumulative(vocab_size, 0.0);
  double acc = 0;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    acc += freq[i] > 0 ? std::pow(freq[i], 0.75) : 0.0;
    cumulative[i] = acc;
  }

  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.dim;
  EmbeddingMatrix emb(vocab_size, d);
  std::vector<double> out(vocab_size * d, 0.0);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (freq[i] == 0) continue;
    emb.set_trained(static_cast<int>(i), true);
    auto row = emb.mutable_row(static_cast<int>(i));
    for (double& v : row) v = (uniform01(rng) - 0.5) / static_cast<double>(d);
  }

  auto sample_negative = [&]() {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    return static_cast<int>(it - cumulative.begin());
  };

  SgnsResult result;
  const double total_steps = static_cast<double>(config.epochs * total) + 1.0;
  std::size_t processed = 0;
  std::vector<double> hidden_grad(d);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss = 0;
    std::size_t pairs = 0;
    for (const auto& sent : stream) {
      for (std::size_t pos = 0; pos < sent.size(); ++pos, ++processed) {
        const double lr = config.lr * std::max(1e-4, 1.0 - static_cast<double>(processed) / total_steps);
        const std::size_t reach = 1 + static_cast<std::size_t>(rng() % config.window);
        const int center = sent[pos];
        auto v = emb.mutable_row(center);
        const std::size_t lo = pos >= reach ? pos - reach : 0;
        const std::size_t hi = std::min(sent.size() - 1, pos + reach);
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          std::fill(hidden_grad.begin(), hidden_grad.end(), 0.0);
          for (std::size_t k = 0; k <= config.negatives; ++k) {
            int word;
            double label;
            if (k == 0) {
              word = sent[c];
              label = 1.0;
            } else {
              word = sample_negative();
              if (word == sent[c]) continue;
              label = 0.0;
            }
            double* u = out.data() + static_cast<std::size_t>(word) * d;
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += u[j] * v[j];
            loss -= label > 0 ? log_sigmoid(dot) : log_sigmoid(-dot);
            const double g = (label - sigmoid(dot)) * lr;
            for (std::size_t j = 0; j < d; ++j) {
              hidden_grad[j] += g * u[j];
              u[j] += g * v[j];
            }
          }
          for (std::size_t j = 0; j < d; ++j) v[j] += hidden_grad[j];
          ++pairs;
        }
      }
    }
    result.epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
  }
  emb.refresh_norms();
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (!std::isfinite(emb.norm(static_cast<int>(i)))) throw NumericalError("train_sgns produced non-finite vectors");
  }
  result.embeddings = std::move(emb);
  return result;
}

}  // namespace stylemt

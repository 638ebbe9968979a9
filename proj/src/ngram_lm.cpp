#include "stylemt/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "stylemt/error.hpp"

namespace stylemt {

namespace {

constexpr double kLn10 = 2.302585092994045684;

struct ContextStats {
  double total = 0;
  double n1 = 0, n2 = 0, n3 = 0;
};

KneserNeyDiscounts estimate_discounts(const std::unordered_map<std::uint64_t, double>& adjusted) {
  double t[5] = {0, 0, 0, 0, 0};
  for (const auto& [k, a] : adjusted) {
    const auto c = static_cast<std::size_t>(a);
    if (c >= 1 && c <= 4) t[c] += 1;
  }
  KneserNeyDiscounts d;
  if (t[1] == 0 || t[2] == 0 || t[3] == 0 || t[4] == 0) return d;
  const double y = t[1] / (t[1] + 2 * t[2]);
  KneserNeyDiscounts m{1 - 2 * y * t[2] / t[1], 2 - 3 * y * t[3] / t[2], 3 - 4 * y * t[4] / t[3], false};
  // each discount must stay below the count it applies to
  if (!(m.d1 > 0 && m.d1 < 1 && m.d2 > 0 && m.d2 < 2 && m.d3 > 0 && m.d3 < 3)) return d;
  return m;
}

}  // namespace

void NGramLM::set_bits() {
  bits_ = 1;
  while ((std::uint64_t{1} << bits_) <= vocab_size_) ++bits_;
  if (order_ == 0 || order_ * bits_ > 64)
    throw std::invalid_argument("n-gram order " + std::to_string(order_) + " unsupported for vocabulary of size " +
                                std::to_string(vocab_size_));
}

std::uint64_t NGramLM::key(std::span<const int> ids) const {
  std::uint64_t k = 0;
  for (int id : ids) k = (k << bits_) | static_cast<std::uint64_t>(id + 1);
  return k;
}

std::vector<int> NGramLM::unkey(std::uint64_t k, std::size_t n) const {
  std::vector<int> ids(n);
  const std::uint64_t mask = (std::uint64_t{1} << bits_) - 1;
  for (std::size_t i = n; i-- > 0;) {
    ids[i] = static_cast<int>(k & mask) - 1;
    k >>= bits_;
  }
  return ids;
}

bool NGramLM::predictable(int w) const {
  return w >= 0 && static_cast<std::size_t>(w) < vocab_size_ && w != Vocabulary::kBos && w != Vocabulary::kPad;
}

int NGramLM::clean_context(int w) const {
  if (w < 0 || static_cast<std::size_t>(w) >= vocab_size_ || w == Vocabulary::kPad) return Vocabulary::kUnk;
  return w;
}

int NGramLM::clean(int w) const {
  if (w < 0 || static_cast<std::size_t>(w) >= vocab_size_ || w == Vocabulary::kBos || w == Vocabulary::kPad)
    return Vocabulary::kUnk;
  return w;
}

NGramLM NGramLM::train(const StyleCorpus& corpus, std::size_t vocab_size, std::size_t order) {
  if (corpus.empty()) throw std::invalid_argument("train_lm: empty corpus");
  if (vocab_size <= Vocabulary::kNumSpecial - 1) throw std::invalid_argument("train_lm: vocabulary too small");
  NGramLM lm;
  lm.order_ = order;
  lm.vocab_size_ = vocab_size;
  lm.set_bits();
  const std::size_t N = order;

  std::vector<std::unordered_map<std::uint64_t, double>> raw(N);
  std::vector<int> seq;
  for (const auto& s : corpus.sentences) {
    seq.assign(1, Vocabulary::kBos);
    for (int w : s) seq.push_back(lm.clean(w));
    seq.push_back(Vocabulary::kEos);
    for (std::size_t i = 0; i < seq.size(); ++i)
      for (std::size_t n = 1; n <= N && i + n <= seq.size(); ++n) {
        if (n == 1 && seq[i] == Vocabulary::kBos) continue;
        raw[n - 1][lm.key(std::span<const int>(seq).subspan(i, n))] += 1;
      }
  }

  // Adjusted counts: raw at the top order and for n-grams starting with <s>,
  // otherwise the number of distinct left extensions.
  std::vector<std::unordered_map<std::uint64_t, double>> adjusted(N);
  adjusted[N - 1] = raw[N - 1];
  for (std::size_t n = N - 1; n >= 1; --n) {
    std::unordered_map<std::uint64_t, double> cont;
    const std::uint64_t mask = n * lm.bits_ >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << (n * lm.bits_)) - 1;
    for (const auto& [k, c] : raw[n]) cont[k & mask] += 1;
    for (const auto& [k, c] : raw[n - 1]) {
      const int first = lm.unkey(k, n)[0];
      adjusted[n - 1][k] = first == Vocabulary::kBos ? c : cont[k];
    }
  }

  lm.discounts_.resize(N);
  lm.tables_.assign(N, {});
  for (std::size_t n = 1; n <= N; ++n) {
    const auto& adj = adjusted[n - 1];
    const KneserNeyDiscounts d = estimate_discounts(adj);
    lm.discounts_[n - 1] = d;

    std::unordered_map<std::uint64_t, ContextStats> stats;
    const unsigned shift = lm.bits_;
    for (const auto& [k, a] : adj) {
      auto& st = stats[n == 1 ? 0 : k >> shift];
      st.total += a;
      if (a < 2) st.n1 += 1;
      else if (a < 3) st.n2 += 1;
      else st.n3 += 1;
    }
    auto gamma = [&](const ContextStats& st) { return (d.d1 * st.n1 + d.d2 * st.n2 + d.d3 * st.n3) / st.total; };

    auto& table = lm.tables_[n - 1];
    if (n == 1) {
      const ContextStats& st = stats[0];
      const double g = gamma(st);
      const double uniform = 1.0 / static_cast<double>(lm.predictable_count());
      for (int w = 0; w < static_cast<int>(vocab_size); ++w) {
        if (!lm.predictable(w)) continue;
        const int one[1] = {w};
        const std::uint64_t k = lm.key(one);
        auto it = adj.find(k);
        const double a = it == adj.end() ? 0.0 : it->second;
        const double p = std::max(a - d.for_count(a), 0.0) / st.total + g * uniform;
        table[k] = {std::log(p), 0.0, true};
      }
    } else {
      for (const auto& [k, a] : adj) {
        const ContextStats& st = stats[k >> shift];
        const std::vector<int> ids = lm.unkey(k, n);
        const std::span<const int> lower_ctx(ids.data() + 1, n - 2);
        const double lower = std::exp(lm.log_prob(lower_ctx, ids.back()));
        const double p = std::max(a - d.for_count(a), 0.0) / st.total + gamma(st) * lower;
        table[k].log_prob = std::log(p);
        table[k].has_prob = true;
      }
    }
    // Interpolation weights live on the context entries one order down.
    if (n >= 2) {
      auto& ctx_table = lm.tables_[n - 2];
      for (const auto& [ck, st] : stats) {
        ctx_table[ck].log_backoff = std::log(gamma(st));
        ctx_table[ck].is_context = true;
      }
    }
  }
  return lm;
}

double NGramLM::log_prob(std::span<const int> context, int w) const {
  if (!predictable(w)) {
    if (w == Vocabulary::kBos || w == Vocabulary::kPad) throw std::invalid_argument("log_prob of a non-predictable token");
    w = Vocabulary::kUnk;
  }
  const std::size_t max_ctx = std::min(order_ - 1, context.size());
  int buf[64];
  const std::size_t start = context.size() - max_ctx;
  for (std::size_t i = 0; i < max_ctx; ++i) buf[i] = clean_context(context[start + i]);
  double backoff = 0;
  for (std::size_t len = max_ctx;; --len) {
    const std::size_t off = max_ctx - len;
    int gram[64];
    std::copy(buf + off, buf + max_ctx, gram);
    gram[len] = w;
    const auto& table = tables_[len];
    auto it = table.find(key(std::span<const int>(gram, len + 1)));
    if (it != table.end() && it->second.has_prob) return backoff + it->second.log_prob;
    if (len == 0) break;
    auto ct = tables_[len - 1].find(key(std::span<const int>(buf + off, len)));
    if (ct != tables_[len - 1].end()) backoff += ct->second.log_backoff;
  }
  throw std::logic_error("unigram table lacks a predictable token");
}

double NGramLM::prob(std::span<const int> context, int w) const { return std::exp(log_prob(context, w)); }

double NGramLM::score(std::span<const int> sentence) const {
  std::vector<int> ctx;
  ctx.reserve(sentence.size() + 2);
  ctx.push_back(Vocabulary::kBos);
  double total = 0;
  for (int w : sentence) {
    const int c = clean(w);
    total += log_prob(ctx, c);
    ctx.push_back(c);
  }
  total += log_prob(ctx, Vocabulary::kEos);
  return total;
}

std::vector<std::vector<int>> NGramLM::observed_contexts(std::size_t n) const {
  if (n == 0 || n > order_) throw std::invalid_argument("observed_contexts: order out of range");
  if (n == 1) return {{}};
  std::vector<std::vector<int>> out;
  // a context at order n is an (n-1)-gram that received an interpolation weight
  const auto& ctx_table = tables_[n - 2];
  for (const auto& [k, e] : ctx_table) {
    if (!e.is_context) continue;
    out.push_back(unkey(k, n - 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void NGramLM::save_arpa(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "\n\\data\\\n";
  for (std::size_t n = 1; n <= order_; ++n) out << "ngram " << n << "=" << tables_[n - 1].size() << '\n';
  char buf[64];
  for (std::size_t n = 1; n <= order_; ++n) {
    out << "\n\\" << n << "-grams:\n";
    std::map<std::vector<int>, Entry> sorted;
    for (const auto& [k, e] : tables_[n - 1]) sorted.emplace(unkey(k, n), e);
    for (const auto& [ids, e] : sorted) {
      if (e.has_prob) std::snprintf(buf, sizeof(buf), "%.17g", e.log_prob / kLn10);
      else std::snprintf(buf, sizeof(buf), "-99");
      out << buf << '\t';
      for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << vocab.token(ids[i]);
      if (n < order_ && e.is_context) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.log_backoff / kLn10);
        out << '\t' << buf;
      }
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
}

NGramLM NGramLM::load_arpa(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("ARPA file not found: " + path.string());
  NGramLM lm;
  lm.vocab_size_ = vocab.size();
  std::vector<std::size_t> counts;
  std::string line;
  while (std::getline(in, line) && line != "\\data\\") {
  }
  while (std::getline(in, line)) {
    if (line.rfind("ngram ", 0) != 0) break;
    const auto eq = line.find('=');
    counts.push_back(std::stoul(line.substr(eq + 1)));
  }
  if (counts.empty()) throw DataError("ARPA file has no \\data\\ section: " + path.string());
  lm.order_ = counts.size();
  lm.set_bits();
  lm.tables_.assign(lm.order_, {});
  lm.discounts_.assign(lm.order_, KneserNeyDiscounts{});
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "\\end\\") break;
    if (line[0] == '\\') {
      n = std::stoul(line.substr(1));
      if (n == 0 || n > lm.order_) throw DataError("bad ARPA section header: " + line);
      continue;
    }
    if (n == 0) throw DataError("ARPA entry outside a section");
    std::istringstream ss(line);
    std::string lp;
    std::getline(ss, lp, '\t');
    std::string words;
    std::getline(ss, words, '\t');
    std::string bo;
    std::getline(ss, bo);
    const TokenLine toks = tokenize(words, false);
    if (toks.size() != n) throw DataError("ARPA n-gram has wrong length: " + line);
    std::vector<int> ids;
    for (const auto& t : toks) {
      auto id = vocab.find(t);
      if (!id) throw DataError("ARPA token not in vocabulary: " + t);
      ids.push_back(*id);
    }
    Entry e;
    const double l10 = std::stod(lp);
    e.has_prob = !(n == 1 && ids[0] == Vocabulary::kBos);
    e.log_prob = e.has_prob ? l10 * kLn10 : 0.0;
    e.is_context = !bo.empty();
    e.log_backoff = e.is_context ? std::stod(bo) * kLn10 : 0.0;
    lm.tables_[n - 1][lm.key(ids)] = e;
  }
  return lm;
}

}  // namespace stylemt

#include "stylemt/lexicon.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "stylemt/error.hpp"

namespace stylemt {

namespace {

void sort_candidates(std::vector<Candidate>& c) {
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.token < b.token;
  });
}

}  // namespace

StylePreference style_preference(const Vocabulary& vocab, int w) {
  const double fs = static_cast<double>(vocab.freq(Style::source, w));
  const double ft = static_cast<double>(vocab.freq(Style::target, w));
  if (fs + ft <= 0) throw std::invalid_argument("style_preference: word '" + vocab.token(w) + "' has zero frequency");
  const double ps = fs / (fs + ft);
  return {ps, 1.0 - ps};
}

std::vector<std::pair<int, double>> similarity_distribution(const EmbeddingMatrix& emb, int x,
                                                            std::span<const int> candidates, std::size_t k) {
  if (candidates.empty()) throw std::invalid_argument("similarity_distribution: no candidates");
  if (k == 0) throw std::invalid_argument("similarity_distribution: k must be positive");
  std::vector<std::pair<int, double>> scored;
  scored.reserve(candidates.size());
  for (int y : candidates) scored.emplace_back(y, emb.cosine(x, y));
  auto by_cosine = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  if (scored.size() > k) {
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), by_cosine);
    scored.resize(k);
  } else {
    std::sort(scored.begin(), scored.end(), by_cosine);
  }
  double total = 0;
  for (auto& [y, s] : scored) {
    s = std::max(0.0, s);
    total += s;
  }
  if (total <= 0) return {{x, 1.0}};
  std::vector<std::pair<int, double>> out;
  for (const auto& [y, s] : scored)
    if (s > 0) out.emplace_back(y, s / total);
  return out;
}

TransferTable::TransferTable(Style from, std::size_t vocab_size, std::size_t top_k)
    : from_(from), top_k_(top_k), entries_(vocab_size) {}

std::span<const Candidate> TransferTable::candidates(int src) const {
  if (src < 0 || static_cast<std::size_t>(src) >= entries_.size()) return {};
  return entries_[static_cast<std::size_t>(src)];
}

std::optional<double> TransferTable::prob(int src, int cand) const {
  for (const auto& c : candidates(src))
    if (c.token == cand) return c.prob;
  return std::nullopt;
}

void TransferTable::set(int src, std::vector<Candidate> cands) {
  if (src < 0 || static_cast<std::size_t>(src) >= entries_.size()) throw std::out_of_range("transfer table source id");
  sort_candidates(cands);
  entries_[static_cast<std::size_t>(src)] = std::move(cands);
}

void TransferTable::save_tsv(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[128];
  for (std::size_t src = 0; src < entries_.size(); ++src)
    for (const auto& c : entries_[src]) {
      std::snprintf(buf, sizeof(buf), "%.17g\t%.17g\t%.17g\t%.17g", c.prob, c.pref_src, c.sim, c.pref_tgt);
      out << vocab.token(static_cast<int>(src)) << '\t' << vocab.token(c.token) << '\t' << buf << '\n';
    }
}

TransferTable TransferTable::load_tsv(const std::filesystem::path& path, const Vocabulary& vocab, Style from,
                                      std::size_t top_k) {
  std::ifstream in(path);
  if (!in) throw DataError("transfer table not found: " + path.string());
  TransferTable t(from, vocab.size(), top_k);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string src, cand;
    Candidate c;
    if (!std::getline(ss, src, '\t') || !std::getline(ss, cand, '\t') ||
        !(ss >> c.prob >> c.pref_src >> c.sim >> c.pref_tgt))
      throw DataError("malformed transfer table row: " + line);
    auto s = vocab.find(src);
    auto y = vocab.find(cand);
    if (!s || !y) throw DataError("transfer table token not in vocabulary: " + line);
    c.token = *y;
    t.entries_[static_cast<std::size_t>(*s)].push_back(c);
  }
  for (auto& e : t.entries_) sort_candidates(e);
  return t;
}

TransferTable build_transfer_table(const Vocabulary& vocab, const EmbeddingMatrix& emb, Style from,
                                   const LexiconConfig& config) {
  if (emb.vocab_size() != vocab.size()) throw std::invalid_argument("embedding rows do not match vocabulary");
  if (config.top_k == 0) throw std::invalid_argument("build_transfer_table: top_k must be positive");
  const Style to = opposite(from);
  std::vector<int> words;
  for (int w = Vocabulary::kNumSpecial; w < static_cast<int>(vocab.size()); ++w)
    if (vocab.total_freq(w) > 0 && emb.trained(w)) words.push_back(w);

  std::vector<StylePreference> pref(vocab.size());
  for (int w : words) pref[static_cast<std::size_t>(w)] = style_preference(vocab, w);

  TransferTable table(from, vocab.size(), config.top_k);
  for (int x : words) {
    const double pref_src = pref[static_cast<std::size_t>(x)].of(from);
    std::vector<Candidate> cands;
    bool has_identity = false;
    for (const auto& [y, sim] : similarity_distribution(emb, x, words, config.top_k)) {
      const double pref_tgt = pref[static_cast<std::size_t>(y)].of(to);
      Candidate c{y, pref_src * sim * pref_tgt, pref_src, sim, pref_tgt};
      if (y == x) {
        has_identity = true;
        c.prob = std::max(c.prob, config.identity_floor);
      }
      cands.push_back(c);
    }
    if (!has_identity)
      cands.push_back({x, config.identity_floor, pref_src, 0.0, pref[static_cast<std::size_t>(x)].of(to)});

    double best = 0;
    for (const auto& c : cands) best = std::max(best, c.prob);
    std::erase_if(cands, [&](const Candidate& c) {
      return c.token != x && (c.prob <= 0 || c.prob < config.threshold * best);
    });
    sort_candidates(cands);
    while (cands.size() > config.top_k) {
      auto last = std::find_if(cands.rbegin(), cands.rend(), [&](const Candidate& c) { return c.token != x; });
      cands.erase(std::next(last).base());
    }
    double total = 0;
    for (const auto& c : cands) total += c.prob;
    for (auto& c : cands) c.prob /= total;
    table.set(x, std::move(cands));
  }
  return table;
}

}  // namespace stylemt

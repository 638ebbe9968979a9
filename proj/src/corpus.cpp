#include "stylemt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "stylemt/error.hpp"

namespace stylemt {

std::string direction_name(Style from) { return from == Style::source ? "s2t" : "t2s"; }

TaskStyles::TaskStyles(std::string source_name, std::string target_name)
    : source{Style::source, std::move(source_name)}, target{Style::target, std::move(target_name)} {
  if (source.name == target.name) throw std::invalid_argument("style labels must be distinct");
}

TokenLine tokenize(std::string_view line, bool lowercase) {
  TokenLine out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) {
      std::string tok(line.substr(i, j - i));
      if (lowercase)
        for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

std::string detokenize(const TokenLine& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

RawCorpus read_corpus_text(const std::filesystem::path& path, Style style, const TokenizerConfig& config) {
  std::ifstream in(path);
  if (!in) throw DataError("corpus file not found: " + path.string());
  RawCorpus corpus;
  corpus.style = style;
  std::string line;
  while (std::getline(in, line)) {
    TokenLine toks = tokenize(line, config.lowercase);
    if (toks.empty()) continue;
    if (config.max_len > 0 && toks.size() > config.max_len) {
      if (config.long_policy == LongSentencePolicy::drop) continue;
      if (config.long_policy == LongSentencePolicy::truncate) toks.resize(config.max_len);
    }
    corpus.sentences.push_back(std::move(toks));
  }
  if (corpus.sentences.empty()) throw DataError("corpus is empty after filtering: " + path.string());
  return corpus;
}

void write_corpus_text(const std::filesystem::path& path, const std::vector<TokenLine>& sentences) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : sentences) out << detokenize(s) << '\n';
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<unk>", "<s>", "</s>"}) add(s, 0, 0);
}

int Vocabulary::add(const std::string& token, std::uint64_t freq_source, std::uint64_t freq_target) {
  if (index_.count(token)) throw std::invalid_argument("duplicate vocabulary token " + token);
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  freq_[0].push_back(freq_source);
  freq_[1].push_back(freq_target);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto f = find(token);
  return f ? *f : kUnk;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::freq(Style style, int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return freq_[style_index(style)][static_cast<std::size_t>(id)];
}

void Vocabulary::save_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << i << '\t' << freq_[0][i] << '\t' << freq_[1][i] << '\n';
}

Vocabulary Vocabulary::load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocabulary file not found: " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    std::size_t id = 0;
    std::uint64_t fs = 0, ft = 0;
    if (!std::getline(ss, tok, '\t') || !(ss >> id >> fs >> ft)) throw DataError("malformed vocabulary row: " + line);
    if (id != row) throw DataError("vocabulary ids must be dense and ordered");
    if (row >= kNumSpecial) v.add(tok, fs, ft);
    else if (v.tokens_[row] != tok) throw DataError("unexpected special token " + tok);
    ++row;
  }
  return v;
}

Vocabulary build_vocabulary(const RawCorpus& source, const RawCorpus& target, std::size_t cap,
                            std::size_t min_count) {
  if (source.sentences.empty() || target.sentences.empty()) throw DataError("build_vocabulary: empty corpus");
  if (source.style == target.style) throw std::invalid_argument("build_vocabulary: corpora must have distinct styles");
  if (cap + Vocabulary::kNumSpecial > kMaxVocabulary)
    throw ConfigError("vocabulary cap " + std::to_string(cap) + " exceeds supported maximum");

  const Vocabulary specials;
  struct Entry {
    std::uint64_t f[2] = {0, 0};
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::vector<std::string> order;
  for (const RawCorpus* c : {&source, &target}) {
    const int s = style_index(c->style);
    for (const auto& sent : c->sentences)
      for (const auto& tok : sent) {
        if (specials.find(tok)) continue;
        auto [it, fresh] = counts.try_emplace(tok);
        if (fresh) {
          it->second.first = order.size();
          order.push_back(tok);
        }
        ++it->second.f[s];
      }
  }
  std::vector<std::string> ranked;
  for (const auto& tok : order) {
    const auto& e = counts[tok];
    if (e.f[0] + e.f[1] >= min_count) ranked.push_back(tok);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
    const auto& ea = counts[a];
    const auto& eb = counts[b];
    return ea.f[0] + ea.f[1] > eb.f[0] + eb.f[1];
  });
  if (ranked.size() > cap) ranked.resize(cap);
  Vocabulary vocab;
  for (const auto& tok : ranked) {
    const auto& e = counts[tok];
    vocab.add(tok, e.f[0], e.f[1]);
  }
  return vocab;
}

Sentence encode_line(const TokenLine& tokens, const Vocabulary& vocab) {
  Sentence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(vocab.id(t));
  return out;
}

TokenLine decode(const Sentence& ids, const Vocabulary& vocab) {
  TokenLine out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kBos || id == Vocabulary::kPad) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

StyleCorpus encode(const RawCorpus& raw, const Vocabulary& vocab) {
  StyleCorpus c;
  c.style = raw.style;
  c.sentences.reserve(raw.sentences.size());
  for (const auto& s : raw.sentences) c.sentences.push_back(encode_line(s, vocab));
  return c;
}

StyleCorpus load_corpus(const std::filesystem::path& path, Style style, const Vocabulary& vocab,
                        const TokenizerConfig& config) {
  return encode(read_corpus_text(path, style, config), vocab);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

namespace {

const std::vector<std::pair<std::string, std::string>> kAttributePairs = {
    {"bad", "good"},          {"rude", "polite"},       {"cold", "warm"},        {"bland", "tasty"},
    {"dirty", "clean"},       {"slow", "fast"},         {"awful", "great"},      {"boring", "fun"},
    {"noisy", "quiet"},       {"overpriced", "cheap"},  {"stale", "fresh"},      {"greasy", "crispy"},
    {"cramped", "spacious"},  {"dull", "lively"},       {"soggy", "crunchy"},    {"grumpy", "cheerful"},
    {"filthy", "spotless"},   {"mediocre", "superb"},   {"tiny", "generous"},    {"lazy", "attentive"},
    {"sour", "sweet"},        {"dark", "bright"},       {"terrible", "wonderful"}, {"weak", "strong"},
    {"ugly", "pretty"},       {"careless", "careful"},  {"sloppy", "neat"},      {"confusing", "simple"},
    {"unhelpful", "helpful"}, {"broken", "working"},    {"burnt", "perfect"},    {"flat", "bubbly"},
};

const std::vector<std::string> kAspects = {
    "food",    "waiter",  "soup",    "room",   "service", "coffee", "bread",   "pizza",  "bathroom", "music",
    "price",   "salad",   "lobby",   "bar",    "fries",   "host",   "carpet",  "dessert", "portion", "manager",
    "lemonade", "lighting", "tea",   "decor",  "view",    "chef",   "kitchen", "menu",   "staff",    "elevator",
    "steak",   "soda",
};

const std::vector<std::string> kTimes = {"yesterday", "today", "tonight", "recently", "again", "sunday"};
const std::vector<std::string> kPlaces = {"place", "restaurant", "hotel", "cafe", "diner", "bakery", "spot", "store"};

const std::vector<std::string> kPrefixes = {"", "honestly", "{T}", "i think", "my friend said", "overall"};
const std::vector<std::string> kCores = {
    "the {A} was {J} .",
    "the {A} at this {P} was {J} .",
    "we ordered the {A} and it was {J} .",
    "the {A} is always {J} here .",
    "the {A} was {J} but the {A2} was {J2} .",
    "every {A} we tried was {J} .",
    "their {A} seemed {J} to me .",
    "the {P} had a {J} {A} .",
};

std::pair<std::string, std::string> attribute_pair(std::size_t i) {
  if (i < kAttributePairs.size()) return kAttributePairs[i];
  return {"neg" + std::to_string(i), "pos" + std::to_string(i)};
}

std::string aspect(std::size_t i) { return i < kAspects.size() ? kAspects[i] : "thing" + std::to_string(i); }

struct Slot {
  std::size_t pair;
  bool flipped;  // filled with the opposite style's word
};

struct Draft {
  std::size_t tmpl;
  std::string time;
  std::string place;
  std::vector<Slot> slots;
};

std::size_t slot_count(const std::string& tmpl) { return tmpl.find("{A2}") != std::string::npos ? 2 : 1; }

TokenLine render(const std::string& tmpl, const Draft& d, const std::vector<std::pair<std::string, std::string>>& lex,
                 Style style) {
  TokenLine out;
  for (const auto& tok : tokenize(tmpl, false)) {
    auto word = [&](const Slot& s) {
      const bool use_source = (style == Style::source) != s.flipped;
      return use_source ? lex[s.pair].first : lex[s.pair].second;
    };
    if (tok == "{A}") out.push_back(aspect(d.slots[0].pair));
    else if (tok == "{A2}") out.push_back(aspect(d.slots[1].pair));
    else if (tok == "{J}") out.push_back(word(d.slots[0]));
    else if (tok == "{J2}") out.push_back(word(d.slots[1]));
    else if (tok == "{T}") out.push_back(d.time);
    else if (tok == "{P}") out.push_back(d.place);
    else out.push_back(tok);
  }
  return out;
}

// Cycles through pair indices in reshuffled rounds so every pair is used evenly.
// The last `rare` pairs take part in a round only with probability `rare_weight`.
class PairCycle {
 public:
  PairCycle(std::size_t n, std::mt19937_64& rng, std::size_t rare = 0, double rare_weight = 1.0)
      : n_(n), rare_(rare), rare_weight_(rare_weight), rng_(rng) {
    refill();
  }
  std::size_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    if (rare_ > 0) {
      std::bernoulli_distribution keep(rare_weight_);
      order_.erase(std::remove_if(order_.begin(), order_.end(),
                                  [&](std::size_t p) { return p + rare_ >= n_ && !keep(rng_); }),
                   order_.end());
    }
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::size_t n_, rare_;
  double rare_weight_;
  std::vector<std::size_t> order_;
  std::mt19937_64& rng_;
  std::size_t pos_ = 0;
};

std::vector<Draft> draft_sentences(std::size_t n, const std::vector<std::string>& templates, std::size_t lexicon_size,
                                   double noise, std::mt19937_64& rng, std::size_t rare = 0, std::size_t rare_flips = 0,
                                   double rare_weight = 1.0) {
  PairCycle cycle(lexicon_size, rng, rare, rare_weight);
  std::bernoulli_distribution keep_flip(rare_weight);
  std::uniform_int_distribution<std::size_t> pick_tmpl(0, templates.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_time(0, kTimes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_place(0, kPlaces.size() - 1);
  std::bernoulli_distribution flip(noise);
  std::vector<Draft> drafts;
  drafts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Draft d;
    d.tmpl = pick_tmpl(rng);
    d.time = kTimes[pick_time(rng)];
    d.place = kPlaces[pick_place(rng)];
    const std::size_t slots = slot_count(templates[d.tmpl]);
    for (std::size_t s = 0; s < slots; ++s) {
      std::size_t p = cycle.next();
      if (s == 1 && p == d.slots[0].pair) p = cycle.next();
      if (s == 1 && p == d.slots[0].pair) p = (p + 1) % lexicon_size;
      bool flipped = noise > 0 && flip(rng);
      // A flipped slot shows the other style's word at that style's own rate.
      if (flipped && rare_flips > 0 && p + rare_flips >= lexicon_size) flipped = keep_flip(rng);
      d.slots.push_back({p, flipped});
    }
    drafts.push_back(std::move(d));
  }
  return drafts;
}

// Ensures every pair is used un-flipped at least `required` times, moving
// sentences away from the most frequent pair.
void rebalance(std::vector<Draft>& drafts, std::size_t lexicon_size, std::size_t required) {
  for (std::size_t guard = 0; guard < drafts.size() * 4; ++guard) {
    std::vector<std::size_t> count(lexicon_size, 0);
    for (const auto& d : drafts)
      for (const auto& s : d.slots)
        if (!s.flipped) ++count[s.pair];
    const auto lo = static_cast<std::size_t>(std::min_element(count.begin(), count.end()) - count.begin());
    if (count[lo] >= required) return;
    const auto hi = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
    if (count[hi] <= required) return;  // infeasible; leave as is
    bool moved = false;
    for (auto it = drafts.rbegin(); it != drafts.rend() && !moved; ++it) {
      if (it->slots.size() != 1) continue;
      auto& s = it->slots[0];
      if (s.pair == hi && !s.flipped) {
        s.pair = lo;
        moved = true;
      }
    }
    if (!moved) return;
  }
}

}  // namespace

TokenLine SyntheticTask::transfer(const TokenLine& sentence, Style from) const {
  TokenLine out = sentence;
  for (auto& tok : out) {
    for (const auto& [s, t] : swap_lexicon) {
      if (from == Style::source && tok == s) {
        tok = t;
        break;
      }
      if (from == Style::target && tok == t) {
        tok = s;
        break;
      }
    }
  }
  return out;
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  if (config.lexicon_size < 2) throw std::invalid_argument("generate_synthetic: lexicon_size must be >= 2");
  if (config.n_sentences < 1) throw std::invalid_argument("generate_synthetic: n_sentences must be >= 1");
  if (config.n_templates < 1) throw std::invalid_argument("generate_synthetic: n_templates must be >= 1");
  if (config.noise < 0 || config.noise >= 0.5) throw std::invalid_argument("generate_synthetic: noise must be in [0, 0.5)");
  if (config.rare_pairs >= config.lexicon_size)
    throw std::invalid_argument("generate_synthetic: rare_pairs must be below lexicon_size");
  if (!(config.rare_weight > 0 && config.rare_weight <= 1))
    throw std::invalid_argument("generate_synthetic: rare_weight must be in (0, 1]");

  std::mt19937_64 rng(config.seed);
  SyntheticData data;
  SyntheticTask& task = data.task;
  for (std::size_t i = 0; i < config.lexicon_size; ++i) task.swap_lexicon.push_back(attribute_pair(i));

  std::vector<std::string> all;
  for (const auto& core : kCores)
    for (const auto& prefix : kPrefixes) all.push_back(prefix.empty() ? core : prefix + " " + core);
  std::shuffle(all.begin(), all.end(), rng);
  // rebalancing needs at least one single-slot template
  if (slot_count(all.front()) != 1) {
    auto single = std::find_if(all.begin(), all.end(), [](const std::string& t) { return slot_count(t) == 1; });
    std::iter_swap(all.begin(), single);
  }
  const std::size_t n_templates = std::min(config.n_templates, all.size());
  task.templates.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_templates));

  const std::size_t required = std::min<std::size_t>(10, config.n_sentences / config.lexicon_size);
  for (Style style : {Style::source, Style::target}) {
    const std::size_t rare = style == Style::target ? config.rare_pairs : 0;
    const std::size_t rare_flips = style == Style::source ? config.rare_pairs : 0;
    auto drafts = draft_sentences(config.n_sentences, task.templates, config.lexicon_size, config.noise, rng, rare,
                                  rare_flips, config.rare_weight);
    rebalance(drafts, config.lexicon_size, required);
    const int s = style_index(style);
    data.train[s].style = style;
    for (const auto& d : drafts) {
      data.train[s].sentences.push_back(render(task.templates[d.tmpl], d, task.swap_lexicon, style));
      task.truth_train[s].push_back(task.transfer(data.train[s].sentences.back(), style));
    }
  }
  for (Style style : {Style::source, Style::target}) {
    const int s = style_index(style);
    data.test[s].style = style;
    if (config.n_test == 0) continue;
    const std::size_t rare = style == Style::target ? config.rare_pairs : 0;
    auto drafts = draft_sentences(config.n_test, task.templates, config.lexicon_size, 0.0, rng, rare, 0, config.rare_weight);
    for (const auto& d : drafts) {
      data.test[s].sentences.push_back(render(task.templates[d.tmpl], d, task.swap_lexicon, style));
      task.truth_test[s].push_back(task.transfer(data.test[s].sentences.back(), style));
    }
  }
  return data;
}

SyntheticData generate_synthetic(std::uint64_t seed, std::size_t n_templates, std::size_t n_sentences,
                                 std::size_t lexicon_size) {
  SyntheticConfig c;
  c.seed = seed;
  c.n_templates = n_templates;
  c.n_sentences = n_sentences;
  c.lexicon_size = lexicon_size;
  return generate_synthetic(c);
}

void save_synthetic(const std::filesystem::path& dir, const std::string& task_name, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  for (int s = 0; s < 2; ++s) {
    const std::string idx = std::to_string(s);
    write_corpus_text(dir / (task_name + ".train." + idx), data.train[s].sentences);
    write_corpus_text(dir / (task_name + ".train." + idx + ".ref"), data.task.truth_train[s]);
    if (!data.test[s].sentences.empty()) {
      write_corpus_text(dir / (task_name + ".test." + idx), data.test[s].sentences);
      write_corpus_text(dir / (task_name + ".test." + idx + ".ref"), data.task.truth_test[s]);
    }
  }
  std::ofstream lex(dir / (task_name + ".lexicon.tsv"), std::ios::trunc);
  if (!lex) throw DataError("cannot write synthetic lexicon");
  for (const auto& [s, t] : data.task.swap_lexicon) lex << s << '\t' << t << '\n';
}

}  // namespace stylemt

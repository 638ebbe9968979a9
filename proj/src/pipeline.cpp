#include "stylemt/pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <variant>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "stylemt/backtrans.hpp"
#include "stylemt/classifier.hpp"
#include "stylemt/corpus.hpp"
#include "stylemt/embedding.hpp"
#include "stylemt/error.hpp"
#include "stylemt/lexicon.hpp"
#include "stylemt/ngram_lm.hpp"
#include "stylemt/pseudo.hpp"
#include "stylemt/seq2seq.hpp"
#include "stylemt/smt_decoder.hpp"

namespace stylemt::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kLayoutVersion = 1;

using Member = std::variant<std::string Config::*, std::size_t Config::*, double Config::*, bool Config::*>;

struct Field {
  const char* key;
  Member member;
  const char* stages;  // comma-separated owners; "*" for every stage, "" for none
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"work_dir", &Config::work_dir, ""},
      {"source_train", &Config::source_train, "build-vocab"},
      {"target_train", &Config::target_train, "build-vocab"},
      {"source_test", &Config::source_test, "build-vocab"},
      {"target_test", &Config::target_test, "build-vocab"},
      {"source_ref", &Config::source_ref, "build-vocab"},
      {"target_ref", &Config::target_ref, "build-vocab"},
      {"source_name", &Config::source_name, "build-vocab"},
      {"target_name", &Config::target_name, "build-vocab"},
      {"seed", &Config::seed, "*"},
      {"synth_templates", &Config::synth_templates, "synth-corpus"},
      {"synth_sentences", &Config::synth_sentences, "synth-corpus"},
      {"synth_lexicon", &Config::synth_lexicon, "synth-corpus"},
      {"synth_noise", &Config::synth_noise, "synth-corpus"},
      {"synth_test", &Config::synth_test, "synth-corpus"},
      {"synth_rare_pairs", &Config::synth_rare_pairs, "synth-corpus"},
      {"synth_rare_weight", &Config::synth_rare_weight, "synth-corpus"},
      {"lowercase", &Config::lowercase, "build-vocab"},
      {"max_len", &Config::max_len, "build-vocab"},
      {"long_policy", &Config::long_policy, "build-vocab"},
      {"vocab_cap", &Config::vocab_cap, "build-vocab"},
      {"min_count", &Config::min_count, "build-vocab"},
      {"emb_dim", &Config::emb_dim, "train-embeddings"},
      {"emb_window", &Config::emb_window, "train-embeddings"},
      {"emb_negatives", &Config::emb_negatives, "train-embeddings"},
      {"emb_epochs", &Config::emb_epochs, "train-embeddings"},
      {"emb_lr", &Config::emb_lr, "train-embeddings"},
      {"lex_top_k", &Config::lex_top_k, "build-lexicon"},
      {"lex_threshold", &Config::lex_threshold, "build-lexicon"},
      {"lm_order", &Config::lm_order, "train-lm"},
      {"smt_w_fwd", &Config::smt_w_fwd, "smt-translate,make-pseudo"},
      {"smt_w_bwd", &Config::smt_w_bwd, "smt-translate,make-pseudo"},
      {"smt_w_lm_output", &Config::smt_w_lm_output, "smt-translate,make-pseudo"},
      {"smt_w_lm_input", &Config::smt_w_lm_input, "smt-translate,make-pseudo"},
      {"smt_w_count", &Config::smt_w_count, "smt-translate,make-pseudo"},
      {"smt_beam", &Config::smt_beam, "smt-translate,make-pseudo"},
      {"forward_pairing", &Config::forward_pairing, "make-pseudo"},
      {"nmt_emb", &Config::nmt_emb, "pretrain-nmt"},
      {"nmt_hidden", &Config::nmt_hidden, "pretrain-nmt"},
      {"nmt_attention", &Config::nmt_attention, "pretrain-nmt"},
      {"warm_start_embeddings", &Config::warm_start_embeddings, "pretrain-nmt"},
      {"batch", &Config::batch, "pretrain-nmt,train-classifier,backtranslate,backtranslate-ablation"},
      {"adadelta_rho", &Config::adadelta_rho, "pretrain-nmt,backtranslate,backtranslate-ablation"},
      {"adadelta_eps", &Config::adadelta_eps, "pretrain-nmt,backtranslate,backtranslate-ablation"},
      {"clip_norm", &Config::clip_norm, "pretrain-nmt,backtranslate,backtranslate-ablation"},
      {"pretrain_epochs", &Config::pretrain_epochs, "pretrain-nmt"},
      {"pretrain_patience", &Config::pretrain_patience, "pretrain-nmt"},
      {"clf_emb", &Config::clf_emb, "train-classifier"},
      {"clf_hidden", &Config::clf_hidden, "train-classifier"},
      {"clf_epochs", &Config::clf_epochs, "train-classifier"},
      {"clf_patience", &Config::clf_patience, "train-classifier"},
      {"k_samples", &Config::k_samples, "backtranslate,backtranslate-ablation"},
      {"beam_train", &Config::beam_train, "backtranslate,backtranslate-ablation"},
      {"beam_test", &Config::beam_test, "backtranslate,backtranslate-ablation,evaluate"},
      {"max_epochs", &Config::max_epochs, "backtranslate,backtranslate-ablation"},
      {"disable_reward", &Config::disable_reward, "backtranslate"},
      {"weighting", &Config::weighting, "backtranslate,backtranslate-ablation"},
      {"run_ablation", &Config::run_ablation, "evaluate"},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

bool owned_by(const Field& f, const std::string& stage) {
  const std::string owners = f.stages;
  if (owners == "*") return true;
  std::stringstream ss(owners);
  std::string part;
  while (std::getline(ss, part, ','))
    if (part == stage) return true;
  return false;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

LongSentencePolicy parse_policy(const std::string& s) {
  if (s == "drop") return LongSentencePolicy::drop;
  if (s == "truncate") return LongSentencePolicy::truncate;
  if (s == "keep") return LongSentencePolicy::keep;
  throw ConfigError("long_policy must be drop, truncate or keep");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void Config::set(const std::string& key, const std::string& raw) {
  const Field& f = field(key);
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          this->*member = value;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1" || value == "yes") this->*member = true;
          else if (value == "false" || value == "0" || value == "no") this->*member = false;
          else throw ConfigError("'" + key + "' expects a boolean, got '" + value + "'");
        } else {
          std::size_t used = 0;
          try {
            if constexpr (std::is_same_v<T, double>) this->*member = std::stod(value, &used);
            else {
              if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
              this->*member = std::stoull(value, &used);
            }
          } catch (const std::exception&) {
            used = 0;
          }
          if (used == 0 || used != value.size())
            throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
        }
      },
      f.member);
}

std::string Config::get(const std::string& key) const {
  const Field& f = field(key);
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cv_t<std::remove_reference_t<decltype(this->*member)>>;
        if constexpr (std::is_same_v<T, std::string>) return this->*member;
        else if constexpr (std::is_same_v<T, bool>) return (this->*member) ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>) return format_double(this->*member);
        else return std::to_string(this->*member);
      },
      f.member);
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void Config::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void Config::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  if (work_dir.empty()) throw ConfigError("work_dir must not be empty");
  if (source_train.empty() != target_train.empty())
    throw ConfigError("set both source_train and target_train, or neither for the synthetic task");
  if (!synthetic() && (source_test.empty() || target_test.empty()))
    throw ConfigError("source_test and target_test are required with custom corpora");
  if (source_name == target_name) throw ConfigError("source_name and target_name must differ");
  positive(synth_templates, "synth_templates");
  positive(synth_sentences, "synth_sentences");
  positive(synth_lexicon, "synth_lexicon");
  positive(synth_test, "synth_test");
  if (!(synth_noise >= 0 && synth_noise < 0.5)) throw ConfigError("synth_noise must lie in [0, 0.5)");
  if (synth_rare_pairs >= synth_lexicon) throw ConfigError("synth_rare_pairs must be below synth_lexicon");
  if (!(synth_rare_weight > 0 && synth_rare_weight <= 1)) throw ConfigError("synth_rare_weight must lie in (0, 1]");
  positive(max_len, "max_len");
  parse_policy(long_policy);
  positive(vocab_cap, "vocab_cap");
  if (vocab_cap + Vocabulary::kNumSpecial > kMaxVocabulary)
    throw ConfigError("vocab_cap plus the special tokens exceeds " + std::to_string(kMaxVocabulary));
  positive(emb_dim, "emb_dim");
  positive(emb_window, "emb_window");
  positive(emb_negatives, "emb_negatives");
  positive(emb_epochs, "emb_epochs");
  if (!(emb_lr > 0)) throw ConfigError("emb_lr must be positive");
  positive(lex_top_k, "lex_top_k");
  if (!(lex_threshold >= 0 && lex_threshold <= 1)) throw ConfigError("lex_threshold must lie in [0, 1]");
  if (lm_order < 1 || lm_order > 6) throw ConfigError("lm_order must lie in [1, 6]");
  for (double w : {smt_w_fwd, smt_w_bwd, smt_w_lm_output, smt_w_lm_input, smt_w_count})
    if (!std::isfinite(w)) throw ConfigError("SMT weights must be finite");
  positive(smt_beam, "smt_beam");
  positive(nmt_emb, "nmt_emb");
  positive(nmt_hidden, "nmt_hidden");
  positive(nmt_attention, "nmt_attention");
  if (warm_start_embeddings && emb_dim != nmt_emb)
    throw ConfigError("warm_start_embeddings requires emb_dim == nmt_emb");
  positive(batch, "batch");
  if (!(adadelta_rho > 0 && adadelta_rho < 1)) throw ConfigError("adadelta_rho must lie in (0, 1)");
  if (!(adadelta_eps > 0)) throw ConfigError("adadelta_eps must be positive");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  positive(pretrain_epochs, "pretrain_epochs");
  positive(pretrain_patience, "pretrain_patience");
  positive(clf_emb, "clf_emb");
  positive(clf_hidden, "clf_hidden");
  positive(clf_epochs, "clf_epochs");
  positive(clf_patience, "clf_patience");
  positive(k_samples, "k_samples");
  if (k_samples > beam_train) throw ConfigError("k_samples must not exceed beam_train");
  positive(beam_test, "beam_test");
  if (weighting != "uniform" && weighting != "beam_score")
    throw ConfigError("weighting must be uniform or beam_score");
}

// ---------------------------------------------------------------------------
// Stage graph

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "synth-corpus",  "build-vocab", "train-embeddings", "build-lexicon",          "train-lm",
      "smt-translate", "make-pseudo", "pretrain-nmt",     "train-classifier",       "backtranslate",
      "backtranslate-ablation",       "evaluate"};
  return names;
}

namespace {

std::vector<std::string> stage_dependencies(const Config& c, const std::string& stage) {
  if (stage == "synth-corpus") return {};
  if (stage == "build-vocab") return c.synthetic() ? std::vector<std::string>{"synth-corpus"} : std::vector<std::string>{};
  if (stage == "train-embeddings" || stage == "train-lm" || stage == "train-classifier") return {"build-vocab"};
  if (stage == "build-lexicon") return {"train-embeddings"};
  if (stage == "smt-translate" || stage == "make-pseudo") return {"build-lexicon", "train-lm"};
  if (stage == "pretrain-nmt") {
    std::vector<std::string> deps{"make-pseudo"};
    if (c.warm_start_embeddings) deps.push_back("train-embeddings");
    return deps;
  }
  if (stage == "backtranslate" || stage == "backtranslate-ablation") return {"pretrain-nmt", "train-classifier"};
  if (stage == "evaluate") {
    std::vector<std::string> deps{"pretrain-nmt", "train-classifier", "smt-translate", "backtranslate"};
    if (c.run_ablation) deps.push_back("backtranslate-ablation");
    return deps;
  }
  throw ConfigError("unknown stage '" + stage + "'");
}

std::string stage_text(const Config& config, const std::string& stage) {
  Config c = config;
  if (stage == "backtranslate-ablation") c.disable_reward = true;
  std::string text = "layout=" + std::to_string(kLayoutVersion) + "\nstage=" + stage + "\n";
  for (const auto& f : fields())
    if (owned_by(f, stage)) text += std::string(f.key) + "=" + c.get(f.key) + "\n";
  if (stage == "backtranslate-ablation") text += "disable_reward=true\n";
  for (const auto& dep : stage_dependencies(c, stage)) text += "dep:" + dep + "=" + stage_hash(c, dep) + "\n";
  return text;
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string stage_hash(const Config& config, const std::string& stage) {
  return fnv1a_hex(stage_text(config, stage));
}

std::uint64_t stage_seed(const Config& config, const std::string& stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(stage)), static_cast<std::uint32_t>(fnv1a(stage) >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// ---------------------------------------------------------------------------
// Lock

WorkLock::WorkLock(const fs::path& work_dir) : path_(work_dir / ".lock") {
  fs::create_directories(work_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw ConfigError("work directory " + work_dir.string() + " is locked by another command (remove " +
                        path_.string() + " if no command is running)");
    throw ConfigError("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

WorkLock::~WorkLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Summary

std::optional<double> SystemScore::mean_bleu() const {
  if (!bleu[0] || !bleu[1]) return std::nullopt;
  return (*bleu[0] + *bleu[1]) / 2;
}

const SystemScore* RunSummary::find(const std::string& name) const {
  for (const auto& s : systems)
    if (s.system == name) return &s;
  return nullptr;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DependencyError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 1;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct Corpora {
  Vocabulary vocab;
  StyleCorpus train[2];
  StyleCorpus test[2];
  std::optional<std::vector<TokenLine>> refs[2];
};

nn::AdadeltaConfig optimizer_config(const Config& c) {
  nn::AdadeltaConfig o;
  o.rho = c.adadelta_rho;
  o.eps = c.adadelta_eps;
  o.clip_norm = c.clip_norm;
  return o;
}

TokenizerConfig tokenizer_config(const Config& c) {
  return {c.lowercase, c.max_len, parse_policy(c.long_policy)};
}

std::vector<Sentence> read_outputs(const fs::path& p, const Vocabulary& vocab) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(encode_line(tokenize(line, false), vocab));
  return out;
}

std::string seconds_since(std::chrono::steady_clock::time_point t0) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1fs", s);
  return buf;
}

}  // namespace

Pipeline::Pipeline(Config config, std::ostream& log) : config_(std::move(config)), log_(&log) { config_.validate(); }

fs::path Pipeline::path(const std::string& relative) const { return fs::path(config_.work_dir) / relative; }

std::vector<std::string> Pipeline::dependencies(const std::string& stage) const {
  return stage_dependencies(config_, stage);
}

bool Pipeline::stage_current(const std::string& stage) const {
  const fs::path manifest = path("manifests/" + stage + ".json");
  if (!fs::exists(manifest)) return false;
  try {
    const json j = json::parse(read_file(manifest));
    if (j.at("config_hash").get<std::string>() != stage_hash(config_, stage)) return false;
    for (const auto& out : j.at("outputs"))
      if (!fs::exists(path(out.get<std::string>()))) return false;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void Pipeline::require(const std::string& stage) const {
  const fs::path manifest = path("manifests/" + stage + ".json");
  if (!fs::exists(manifest))
    throw DependencyError("missing artifacts of '" + stage + "'; run `stylemt " + stage + "` first", stage);
  const json j = json::parse(read_file(manifest));
  if (j.at("config_hash").get<std::string>() != stage_hash(config_, stage))
    throw ConfigError("artifacts of '" + stage + "' in " + config_.work_dir +
                      " were produced with a different configuration; rerun `stylemt " + stage +
                      "` or use another work_dir");
  for (const auto& out : j.at("outputs"))
    if (!fs::exists(path(out.get<std::string>())))
      throw DependencyError("artifact " + out.get<std::string>() + " of '" + stage + "' is missing; rerun `stylemt " +
                                stage + "`",
                            stage);
}

void Pipeline::write_manifest(const std::string& stage, const std::vector<std::string>& outputs,
                              const std::map<std::string, std::uint64_t>& seeds) const {
  json j;
  j["stage"] = stage;
  j["layout_version"] = kLayoutVersion;
  j["config_hash"] = stage_hash(config_, stage);
  j["seeds"] = json::object();
  for (const auto& [k, v] : seeds) j["seeds"][k] = v;
  j["dependencies"] = json::object();
  for (const auto& dep : dependencies(stage)) j["dependencies"][dep] = stage_hash(config_, dep);
  json cfg = json::object();
  for (const auto& f : fields())
    if (owned_by(f, stage)) cfg[f.key] = config_.get(f.key);
  if (stage == "backtranslate-ablation") cfg["disable_reward"] = "true";
  j["config"] = cfg;
  j["outputs"] = outputs;
  write_file(path("manifests/" + stage + ".json"), j.dump(2) + "\n");
}

void Pipeline::run_stage(const std::string& stage) {
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    throw ConfigError("unknown stage '" + stage + "'");
  for (const auto& dep : dependencies(stage)) require(dep);
  const auto t0 = std::chrono::steady_clock::now();
  *log_ << "[" << stage << "] start" << std::endl;
  if (stage == "synth-corpus") synth_corpus();
  else if (stage == "build-vocab") build_vocab();
  else if (stage == "train-embeddings") train_embeddings();
  else if (stage == "build-lexicon") build_lexicon();
  else if (stage == "train-lm") train_lm();
  else if (stage == "smt-translate") smt_translate();
  else if (stage == "make-pseudo") make_pseudo();
  else if (stage == "pretrain-nmt") pretrain_nmt();
  else if (stage == "train-classifier") train_classifier();
  else if (stage == "backtranslate") backtranslate(false);
  else if (stage == "backtranslate-ablation") backtranslate(true);
  else if (stage == "evaluate") evaluate();
  *log_ << "[" << stage << "] done in " << seconds_since(t0) << std::endl;
}

RunSummary Pipeline::run_all() {
  for (const auto& stage : stage_names()) {
    if (stage == "synth-corpus" && !config_.synthetic()) continue;
    if (stage == "backtranslate-ablation" && !config_.run_ablation) continue;
    if (stage_current(stage)) {
      *log_ << "[" << stage << "] up to date" << std::endl;
      continue;
    }
    run_stage(stage);
  }
  return summary();
}

// Stage implementations ------------------------------------------------------

namespace {

struct Paths {
  fs::path train[2], test[2], ref[2];
};

Paths corpus_paths(const Config& c, const fs::path& work) {
  Paths p;
  if (c.synthetic()) {
    for (int s = 0; s < 2; ++s) {
      const std::string suffix = std::to_string(s);
      p.train[s] = work / "data" / ("synth.train." + suffix);
      p.test[s] = work / "data" / ("synth.test." + suffix);
      p.ref[s] = work / "data" / ("synth.test." + suffix + ".ref");
    }
  } else {
    p.train[0] = c.source_train;
    p.train[1] = c.target_train;
    p.test[0] = c.source_test;
    p.test[1] = c.target_test;
    p.ref[0] = c.source_ref;
    p.ref[1] = c.target_ref;
  }
  return p;
}

Corpora load_corpora(const Config& c, const fs::path& work) {
  const Paths p = corpus_paths(c, work);
  Corpora out;
  out.vocab = Vocabulary::load_tsv(work / "vocab.tsv");
  const TokenizerConfig tok = tokenizer_config(c);
  TokenizerConfig keep = tok;
  keep.long_policy = LongSentencePolicy::keep;
  for (int s = 0; s < 2; ++s) {
    const Style style = static_cast<Style>(s);
    out.train[s] = load_corpus(p.train[s], style, out.vocab, tok);
    out.test[s] = load_corpus(p.test[s], style, out.vocab, keep);
    if (!p.ref[s].empty() && fs::exists(p.ref[s])) {
      RawCorpus refs = read_corpus_text(p.ref[s], style, keep);
      if (refs.sentences.size() != out.test[s].size())
        throw DataError("reference file " + p.ref[s].string() + " is not line-aligned with its test set");
      out.refs[s] = std::move(refs.sentences);
    }
  }
  return out;
}

FeatureWeights smt_weights(const Config& c, Style from) {
  FeatureWeights w;
  w.w_fwd = c.smt_w_fwd;
  w.w_bwd = c.smt_w_bwd;
  w.w_count = c.smt_w_count;
  const bool s2t = from == Style::source;
  w.w_lm_tgt = s2t ? c.smt_w_lm_output : c.smt_w_lm_input;
  w.w_lm_src = s2t ? c.smt_w_lm_input : c.smt_w_lm_output;
  return w;
}

struct SmtAssets {
  TransferTable tables[2];
  NGramLM lms[2];
};

SmtAssets load_smt(const Config& c, const fs::path& work, const Vocabulary& vocab) {
  SmtAssets a;
  a.tables[0] = TransferTable::load_tsv(work / "lexicon.s2t.tsv", vocab, Style::source, c.lex_top_k);
  a.tables[1] = TransferTable::load_tsv(work / "lexicon.t2s.tsv", vocab, Style::target, c.lex_top_k);
  a.lms[0] = NGramLM::load_arpa(work / "lm.source.arpa", vocab);
  a.lms[1] = NGramLM::load_arpa(work / "lm.target.arpa", vocab);
  return a;
}

SmtSystem smt_system(const Config& c, const SmtAssets& a, Style from) {
  const int d = style_index(from);
  SmtConfig sc;
  sc.beam = c.smt_beam;
  return SmtSystem(from, a.tables[d], a.tables[1 - d], a.lms[0], a.lms[1], smt_weights(c, from), sc);
}

void write_sentences(const fs::path& p, const std::vector<Sentence>& sentences, const Vocabulary& vocab) {
  std::vector<TokenLine> lines;
  for (const auto& s : sentences) lines.push_back(decode(s, vocab));
  fs::create_directories(p.parent_path());
  write_corpus_text(p, lines);
}

}  // namespace

void Pipeline::synth_corpus() {
  SyntheticConfig sc;
  sc.seed = stage_seed(config_, "synth-corpus");
  sc.n_templates = config_.synth_templates;
  sc.n_sentences = config_.synth_sentences;
  sc.lexicon_size = config_.synth_lexicon;
  sc.noise = config_.synth_noise;
  sc.n_test = config_.synth_test;
  sc.rare_pairs = config_.synth_rare_pairs;
  sc.rare_weight = config_.synth_rare_weight;
  const SyntheticData data = generate_synthetic(sc);
  save_synthetic(path("data"), "synth", data);
  *log_ << "  " << data.train[0].sentences.size() << " + " << data.train[1].sentences.size()
        << " training sentences, " << data.task.swap_lexicon.size() << " planted swap pairs" << std::endl;
  std::vector<std::string> outputs;
  for (const char* split : {"train", "test"})
    for (const char* s : {"0", "1"}) outputs.push_back(std::string("data/synth.") + split + "." + s);
  outputs.push_back("data/synth.test.0.ref");
  outputs.push_back("data/synth.test.1.ref");
  outputs.push_back("data/synth.lexicon.tsv");
  write_manifest("synth-corpus", outputs, {{"synth", sc.seed}});
}

void Pipeline::build_vocab() {
  const Paths p = corpus_paths(config_, config_.work_dir);
  const TokenizerConfig tok = tokenizer_config(config_);
  const RawCorpus src = read_corpus_text(p.train[0], Style::source, tok);
  const RawCorpus tgt = read_corpus_text(p.train[1], Style::target, tok);
  const Vocabulary vocab = build_vocabulary(src, tgt, config_.vocab_cap, config_.min_count);
  vocab.save_tsv(path("vocab.tsv"));
  *log_ << "  vocabulary of " << vocab.size() << " types" << std::endl;
  write_manifest("build-vocab", {"vocab.tsv"}, {});
}

void Pipeline::train_embeddings() {
  const Corpora c = load_corpora(config_, config_.work_dir);
  SgnsConfig sc;
  sc.dim = config_.emb_dim;
  sc.window = config_.emb_window;
  sc.negatives = config_.emb_negatives;
  sc.epochs = config_.emb_epochs;
  sc.lr = config_.emb_lr;
  sc.seed = stage_seed(config_, "train-embeddings");
  const SgnsResult r = train_sgns(c.train[0], c.train[1], c.vocab.size(), sc);
  r.embeddings.save_text(path("embeddings.txt"), c.vocab);
  if (!r.epoch_loss.empty()) *log_ << "  final epoch loss " << r.epoch_loss.back() << std::endl;
  write_manifest("train-embeddings", {"embeddings.txt"}, {{"sgns", sc.seed}});
}

void Pipeline::build_lexicon() {
  const Vocabulary vocab = Vocabulary::load_tsv(path("vocab.tsv"));
  const EmbeddingMatrix emb = EmbeddingMatrix::load_text(path("embeddings.txt"), vocab);
  LexiconConfig lc;
  lc.top_k = config_.lex_top_k;
  lc.threshold = config_.lex_threshold;
  build_transfer_table(vocab, emb, Style::source, lc).save_tsv(path("lexicon.s2t.tsv"), vocab);
  build_transfer_table(vocab, emb, Style::target, lc).save_tsv(path("lexicon.t2s.tsv"), vocab);
  write_manifest("build-lexicon", {"lexicon.s2t.tsv", "lexicon.t2s.tsv"}, {});
}

void Pipeline::train_lm() {
  const Corpora c = load_corpora(config_, config_.work_dir);
  NGramLM::train(c.train[0], c.vocab.size(), config_.lm_order).save_arpa(path("lm.source.arpa"), c.vocab);
  NGramLM::train(c.train[1], c.vocab.size(), config_.lm_order).save_arpa(path("lm.target.arpa"), c.vocab);
  write_manifest("train-lm", {"lm.source.arpa", "lm.target.arpa"}, {});
}

void Pipeline::smt_translate() {
  const Corpora c = load_corpora(config_, config_.work_dir);
  const SmtAssets assets = load_smt(config_, config_.work_dir, c.vocab);
  std::vector<std::string> outputs;
  for (Style from : {Style::source, Style::target}) {
    const SmtSystem sys = smt_system(config_, assets, from);
    std::vector<Sentence> out;
    for (const auto& s : c.test[style_index(from)].sentences) out.push_back(sys.translate(s));
    const std::string rel = "smt/test." + direction_name(from) + ".out";
    write_sentences(path(rel), out, c.vocab);
    outputs.push_back(rel);
  }
  write_manifest("smt-translate", outputs, {});
}

void Pipeline::make_pseudo() {
  const Corpora c = load_corpora(config_, config_.work_dir);
  const SmtAssets assets = load_smt(config_, config_.work_dir, c.vocab);
  const SmtSystem s2t = smt_system(config_, assets, Style::source);
  const SmtSystem t2s = smt_system(config_, assets, Style::target);
  const PseudoCorpora pc = build_pseudo_corpus(c.train[0], c.train[1], s2t, t2s,
                                               config_.forward_pairing ? PseudoPairing::forward
                                                                       : PseudoPairing::back_translation);
  save_pseudo(path("pseudo"), pc.s2t, c.vocab);
  save_pseudo(path("pseudo"), pc.t2s, c.vocab);
  write_manifest("make-pseudo",
                 {"pseudo/pseudo.s2t.src", "pseudo/pseudo.s2t.tgt", "pseudo/pseudo.t2s.src", "pseudo/pseudo.t2s.tgt"},
                 {});
}

void Pipeline::pretrain_nmt() {
  const Vocabulary vocab = Vocabulary::load_tsv(path("vocab.tsv"));
  const PseudoCorpus s2t = load_pseudo(path("pseudo"), Style::source, vocab);
  const PseudoCorpus t2s = load_pseudo(path("pseudo"), Style::target, vocab);
  Seq2SeqConfig mc;
  mc.vocab_size = vocab.size();
  mc.emb_dim = config_.nmt_emb;
  mc.hidden = config_.nmt_hidden;
  mc.attention = config_.nmt_attention;
  PretrainConfig pc;
  pc.max_epochs = config_.pretrain_epochs;
  pc.patience = config_.pretrain_patience;
  pc.batch = config_.batch;
  pc.seed = stage_seed(config_, "pretrain-nmt");
  pc.optimizer = optimizer_config(config_);
  std::optional<EmbeddingMatrix> warm;
  if (config_.warm_start_embeddings) {
    warm = EmbeddingMatrix::load_text(path("embeddings.txt"), vocab);
    pc.warm_start = &*warm;
  }
  const PretrainResult r = pretrain(s2t, t2s, mc, pc);
  fs::create_directories(path("nmt"));
  r.s2t.save(path("nmt/iter0.s2t.ckpt"));
  r.t2s.save(path("nmt/iter0.t2s.ckpt"));
  json trace;
  for (int d = 0; d < 2; ++d) {
    const std::string name = direction_name(static_cast<Style>(d));
    trace[name]["dev_loss"] = r.dev_losses[static_cast<std::size_t>(d)];
    trace[name]["batch_loss"] = r.batch_losses[static_cast<std::size_t>(d)];
    std::string losses;
    for (double v : r.dev_losses[static_cast<std::size_t>(d)]) losses += " " + format_double(v).substr(0, 7);
    *log_ << "  " << name << " dev loss per epoch:" << losses << std::endl;
  }
  write_file(path("nmt/pretrain.json"), trace.dump() + "\n");
  write_manifest("pretrain-nmt", {"nmt/iter0.s2t.ckpt", "nmt/iter0.t2s.ckpt", "nmt/pretrain.json"},
                 {{"pretrain", pc.seed}});
}

void Pipeline::train_classifier() {
  const Corpora c = load_corpora(config_, config_.work_dir);
  ClassifierConfig cc;
  cc.vocab_size = c.vocab.size();
  cc.emb_dim = config_.clf_emb;
  cc.hidden = config_.clf_hidden;
  cc.batch = config_.batch;
  cc.max_epochs = config_.clf_epochs;
  cc.patience = config_.clf_patience;
  const std::uint64_t base = stage_seed(config_, "train-classifier");
  const std::uint64_t seeds[2] = {base, base ^ 0x9e3779b97f4a7c15ull};
  fs::create_directories(path("clf"));
  json trace;
  const char* names[2] = {"reward", "eval"};
  for (int i = 0; i < 2; ++i) {
    const ClassifierTraining t = stylemt::train_classifier(c.train[0], c.train[1], cc, seeds[i]);
    t.model.save(path(std::string("clf/") + names[i] + ".ckpt"));
    trace[names[i]]["dev_accuracy"] = t.dev_accuracy;
    trace[names[i]]["dev_loss"] = t.dev_loss;
    trace[names[i]]["train_loss"] = t.train_loss;
    *log_ << "  " << names[i] << " classifier dev accuracy " << t.dev_accuracy.back() << std::endl;
  }
  write_file(path("clf/training.json"), trace.dump() + "\n");
  write_manifest("train-classifier", {"clf/reward.ckpt", "clf/eval.ckpt", "clf/training.json"},
                 {{"reward", seeds[0]}, {"eval", seeds[1]}});
}

void Pipeline::backtranslate(bool ablation) {
  const std::string stage = ablation ? "backtranslate-ablation" : "backtranslate";
  const std::string dir = ablation ? "bt_ablation" : "bt";
  const Corpora c = load_corpora(config_, config_.work_dir);
  const StyleClassifier reward = StyleClassifier::load(path("clf/reward.ckpt"));
  const StyleClassifier judge = StyleClassifier::load(path("clf/eval.ckpt"));
  BacktransConfig bc;
  bc.k_samples = config_.k_samples;
  bc.beam_train = config_.beam_train;
  bc.max_epochs = config_.max_epochs;
  bc.batch = config_.batch;
  bc.disable_reward = ablation || config_.disable_reward;
  bc.weighting = config_.weighting == "beam_score" ? CandidateWeighting::beam_score : CandidateWeighting::uniform;
  bc.seed = stage_seed(config_, stage);
  bc.optimizer = optimizer_config(config_);

  const EpochEvaluator evaluator = [&](Style from, const Seq2Seq& model) {
    const int d = style_index(from);
    std::vector<Sentence> outputs;
    std::vector<TokenLine> hyps;
    for (const auto& s : c.test[d].sentences) {
      outputs.push_back(model.beam_decode(s, config_.beam_test, 1).hypotheses.front().tokens);
      hyps.push_back(decode(outputs.back(), c.vocab));
    }
    EpochMetrics m;
    m.transfer_accuracy = transfer_accuracy(outputs, opposite(from), judge);
    if (c.refs[d]) m.bleu = corpus_bleu(hyps, *c.refs[d]);
    return m;
  };

  TrainState state(Seq2Seq::load(path("nmt/iter0.s2t.ckpt")), Seq2Seq::load(path("nmt/iter0.t2s.ckpt")),
                   bc.optimizer);
  for (Style from : {Style::source, Style::target}) {
    MetricRecord rec;
    rec.epoch = 0;
    rec.from = from;
    const EpochMetrics m = evaluator(from, state.model(from));
    rec.transfer_accuracy = m.transfer_accuracy;
    rec.bleu = m.bleu;
    state.history.push_back(rec);
  }
  fs::create_directories(path(dir));
  std::vector<std::string> outputs;
  auto write_ledger = [&](const TrainState& st) {
    std::string text;
    for (const auto& rec : st.history) text += rec.to_json_line() + "\n";
    write_file(path(dir + "/metrics.jsonl"), text);
  };
  write_ledger(state);
  auto log_epoch = [&](const TrainState& st) {
    for (std::size_t i = st.history.size() - 2; i < st.history.size(); ++i) {
      const MetricRecord& r = st.history[i];
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  epoch %zu %s: accuracy %.3f BLEU %.2f", r.epoch,
                    direction_name(r.from).c_str(), r.transfer_accuracy, r.bleu.value_or(0.0));
      *log_ << buf;
      if (r.mean_reward) *log_ << " mean reward " << format_double(*r.mean_reward).substr(0, 6);
      *log_ << std::endl;
    }
  };
  log_epoch(state);
  const auto after_epoch = [&](const TrainState& st) {
    const std::string epoch_dir = dir + "/epoch" + std::to_string(st.epoch);
    fs::create_directories(path(epoch_dir));
    for (Style from : {Style::source, Style::target}) {
      const std::string rel = epoch_dir + "/model." + direction_name(from) + ".ckpt";
      st.model(from).save(path(rel));
      outputs.push_back(rel);
      save_pseudo(path(epoch_dir), st.last_training[static_cast<std::size_t>(style_index(from))], c.vocab, true);
    }
    write_ledger(st);
    log_epoch(st);
  };
  run_backtranslation(state, c.train[0], c.train[1], &reward, bc, &evaluator, after_epoch);
  for (Style from : {Style::source, Style::target}) {
    const std::string rel = dir + "/final." + direction_name(from) + ".ckpt";
    state.model(from).save(path(rel));
    outputs.push_back(rel);
  }
  outputs.push_back(dir + "/metrics.jsonl");
  write_manifest(stage, outputs, {{"backtranslate", bc.seed}});
}

void Pipeline::evaluate() {
  const Corpora c = load_corpora(config_, config_.work_dir);
  const StyleClassifier judge = StyleClassifier::load(path("clf/eval.ckpt"));
  fs::create_directories(path("reports"));

  struct System {
    std::string name;
    std::function<TransferFunction(Style)> make;
  };
  std::vector<System> systems;
  std::vector<Sentence> smt_out[2];
  for (Style from : {Style::source, Style::target})
    smt_out[style_index(from)] = read_outputs(path("smt/test." + direction_name(from) + ".out"), c.vocab);
  systems.push_back({"smt", [&](Style from) -> TransferFunction {
                       auto next = std::make_shared<std::size_t>(0);
                       const auto* outs = &smt_out[style_index(from)];
                       return [outs, next](const Sentence&) { return outs->at((*next)++); };
                     }});
  std::vector<std::pair<std::string, std::string>> nmt = {{"nmt-iter0", "nmt/iter0"}, {"nmt-final", "bt/final"}};
  if (config_.run_ablation) nmt.push_back({"nmt-ablation", "bt_ablation/final"});
  std::vector<std::shared_ptr<Seq2Seq>> models;
  for (const auto& [name, prefix] : nmt) {
    const std::string pre = prefix;
    systems.push_back({name, [&, pre](Style from) -> TransferFunction {
                         auto model = std::make_shared<Seq2Seq>(
                             Seq2Seq::load(path(pre + "." + direction_name(from) + ".ckpt")));
                         const std::size_t beam = config_.beam_test;
                         return [model, beam](const Sentence& x) {
                           return model->beam_decode(x, beam, 1).hypotheses.front().tokens;
                         };
                       }});
  }

  std::vector<EvalReport> reports;
  json summary = json::array();
  std::vector<std::string> outputs;
  for (const auto& sys : systems) {
    json entry{{"system", sys.name}};
    for (Style from : {Style::source, Style::target}) {
      const int d = style_index(from);
      const EvalReport rep =
          evaluate_system(sys.name, sys.make(from), c.test[d], c.refs[d] ? &*c.refs[d] : nullptr, judge, c.vocab);
      const std::string stem = "reports/" + sys.name + "." + direction_name(from);
      write_report_json(path(stem + ".json"), rep);
      write_records_tsv(path(stem + ".tsv"), rep);
      outputs.push_back(stem + ".json");
      outputs.push_back(stem + ".tsv");
      entry[direction_name(from)] = {{"transfer_accuracy", rep.transfer_accuracy},
                                     {"bleu", rep.bleu ? json(*rep.bleu) : json(nullptr)}};
      reports.push_back(rep);
    }
    summary.push_back(entry);
  }
  const std::string table = format_table(reports);
  *log_ << table;
  write_file(path("reports/summary.txt"), table);
  write_file(path("reports/summary.json"), summary.dump(2) + "\n");
  outputs.push_back("reports/summary.txt");
  outputs.push_back("reports/summary.json");
  write_manifest("evaluate", outputs, {});
}

RunSummary Pipeline::summary() const {
  require("evaluate");
  const json j = json::parse(read_file(path("reports/summary.json")));
  RunSummary out;
  for (const auto& entry : j) {
    SystemScore s;
    s.system = entry.at("system").get<std::string>();
    for (Style from : {Style::source, Style::target}) {
      const int d = style_index(from);
      const json& m = entry.at(direction_name(from));
      s.accuracy[d] = m.at("transfer_accuracy").get<double>();
      if (!m.at("bleu").is_null()) s.bleu[d] = m.at("bleu").get<double>();
    }
    out.systems.push_back(s);
  }
  return out;
}

}  // namespace stylemt::pipeline

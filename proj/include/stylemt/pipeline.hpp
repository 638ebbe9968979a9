#pragma once

// Stage orchestration over a work directory. Every stage writes its artifacts
// plus a manifest recording the configuration hash of the stage (which folds
// in the hashes of the stages it consumes) and the seeds it used. A stage
// refuses to read artifacts whose manifest hash differs from the one the
// current configuration implies.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylemt/eval.hpp"

namespace stylemt::pipeline {

struct Config {
  std::string work_dir = "work";
  // Corpora; empty paths select the synthetic task written by synth-corpus.
  std::string source_train, target_train, source_test, target_test, source_ref, target_ref;
  std::string source_name = "source";
  std::string target_name = "target";

  std::size_t seed = 1;

  std::size_t synth_templates = 12;
  std::size_t synth_sentences = 2000;
  std::size_t synth_lexicon = 20;
  double synth_noise = 0.0;
  std::size_t synth_test = 200;
  std::size_t synth_rare_pairs = 0;
  double synth_rare_weight = 0.1;

  bool lowercase = true;
  std::size_t max_len = 30;
  std::string long_policy = "drop";
  std::size_t vocab_cap = 10000;
  std::size_t min_count = 1;

  std::size_t emb_dim = 300;
  std::size_t emb_window = 5;
  std::size_t emb_negatives = 5;
  std::size_t emb_epochs = 5;
  double emb_lr = 0.025;

  std::size_t lex_top_k = 10;
  double lex_threshold = 0.2;

  std::size_t lm_order = 4;

  double smt_w_fwd = 1;
  double smt_w_bwd = 1;
  double smt_w_lm_output = 1;   ///< language model of the output style
  double smt_w_lm_input = -1;   ///< language model of the input style
  double smt_w_count = 1;
  std::size_t smt_beam = 8;
  bool forward_pairing = false;

  std::size_t nmt_emb = 300;
  std::size_t nmt_hidden = 300;
  std::size_t nmt_attention = 300;
  bool warm_start_embeddings = false;
  std::size_t batch = 32;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
  double clip_norm = 2.0;
  std::size_t pretrain_epochs = 10;
  std::size_t pretrain_patience = 1;

  std::size_t clf_emb = 300;
  std::size_t clf_hidden = 300;
  std::size_t clf_epochs = 10;
  std::size_t clf_patience = 2;

  std::size_t k_samples = 4;
  std::size_t beam_train = 4;
  std::size_t beam_test = 12;
  std::size_t max_epochs = 3;
  bool disable_reward = false;
  std::string weighting = "uniform";
  bool run_ablation = false;

  /// Throws ConfigError for unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  /// `key = value` lines; `#` starts a comment.
  void load_file(const std::filesystem::path& path);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;
  /// Throws ConfigError when a value is out of range.
  void validate() const;
  bool synthetic() const { return source_train.empty() && target_train.empty(); }
};

/// Canonical stage names in execution order.
const std::vector<std::string>& stage_names();

/// FNV-1a 64-bit hash of `text`, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Configuration hash of a stage: its own keys, the shared seed, and the
/// hashes of its dependencies.
std::string stage_hash(const Config& config, const std::string& stage);
/// Seed used by a stage, derived from the master seed.
std::uint64_t stage_seed(const Config& config, const std::string& stage);

/// Process-wide exclusive lock on a work directory.
class WorkLock {
 public:
  explicit WorkLock(const std::filesystem::path& work_dir);
  ~WorkLock();
  WorkLock(const WorkLock&) = delete;
  WorkLock& operator=(const WorkLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct SystemScore {
  std::string system;
  double accuracy[2] = {0, 0};  ///< per input style
  std::optional<double> bleu[2];
  double mean_accuracy() const { return (accuracy[0] + accuracy[1]) / 2; }
  std::optional<double> mean_bleu() const;
};

struct RunSummary {
  std::vector<SystemScore> systems;
  const SystemScore* find(const std::string& name) const;
};

class Pipeline {
 public:
  /// `log` receives progress lines.
  Pipeline(Config config, std::ostream& log);

  const Config& config() const { return config_; }
  std::filesystem::path work_dir() const { return config_.work_dir; }

  /// Runs one stage by its command name. `backtranslate-ablation` is the
  /// reward-free arm of `backtranslate`.
  void run_stage(const std::string& stage);
  /// Chains every stage, skipping those whose manifest is current.
  RunSummary run_all();
  /// True when the stage's manifest exists and matches the configuration.
  bool stage_current(const std::string& stage) const;
  RunSummary summary() const;

 private:
  void synth_corpus();
  void build_vocab();
  void train_embeddings();
  void build_lexicon();
  void train_lm();
  void smt_translate();
  void make_pseudo();
  void pretrain_nmt();
  void train_classifier();
  void backtranslate(bool ablation);
  void evaluate();

  void require(const std::string& stage) const;
  void write_manifest(const std::string& stage, const std::vector<std::string>& outputs,
                      const std::map<std::string, std::uint64_t>& seeds) const;
  std::filesystem::path path(const std::string& relative) const;
  std::vector<std::string> dependencies(const std::string& stage) const;

  Config config_;
  std::ostream* log_;
};

/// Maps exceptions to the documented exit codes: 1 usage/configuration,
/// 2 missing dependency, 3 numerical failure.
int exit_code_for(const std::exception& e);

}  // namespace stylemt::pipeline

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "stop_gradient.hpp"
#include "stylemt/eval.hpp"
#include "stylemt/pipeline.hpp"

using namespace stylemt;
namespace fs = std::filesystem;
namespace pl = stylemt::pipeline;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Transfer tables equal the brute-force product; planted pairs are retrieved.
Outcome lexicon_oracle() {
  const SyntheticData d = generate_synthetic(SyntheticConfig{});
  const Vocabulary vocab = build_vocabulary(d.train[0], d.train[1], 10000);
  const SgnsResult emb = train_sgns(encode(d.train[0], vocab), encode(d.train[1], vocab), vocab.size(), SgnsConfig{});
  const LexiconConfig lc;
  std::size_t mismatches = 0, retrieved[2] = {0, 0};
  for (Style from : {Style::source, Style::target}) {
    const TransferTable table = build_transfer_table(vocab, emb.embeddings, from, lc);
    const auto oracle = oracle::brute_force_table(vocab, emb.embeddings, from, lc);
    for (int w = 0; w < static_cast<int>(vocab.size()); ++w) {
      const auto got = table.candidates(w);
      const auto it = oracle.find(w);
      const std::size_t want_n = it == oracle.end() ? 0 : it->second.size();
      if (got.size() != want_n) {
        ++mismatches;
        continue;
      }
      for (std::size_t i = 0; i < want_n; ++i)
        if (!(got[i] == it->second[i])) ++mismatches;
    }
    for (const auto& [s, t] : d.task.swap_lexicon) {
      const int x = vocab.id(from == Style::source ? s : t), y = vocab.id(from == Style::source ? t : s);
      const auto c = table.candidates(x);
      if (!c.empty() && c[0].token == y) ++retrieved[style_index(from)];
    }
  }
  const std::size_t n = d.task.swap_lexicon.size();
  const bool ok = vocab.size() <= 200 + Vocabulary::kNumSpecial && mismatches == 0 && retrieved[0] * 10 >= n * 9 &&
                  retrieved[1] * 10 >= n * 9;
  return {ok, "vocab " + std::to_string(vocab.size()) + ", " + std::to_string(mismatches) +
                  " entry mismatches, top-1 retrieval s2t " + std::to_string(retrieved[0]) + "/" + std::to_string(n) +
                  " t2s " + std::to_string(retrieved[1]) + "/" + std::to_string(n)};
}

// 2. Conditionals normalize over every observed context; hand bigram values.
Outcome lm_correctness() {
  std::mt19937_64 rng(17);
  const int vocab = 60;
  std::uniform_int_distribution<int> tok(Vocabulary::kNumSpecial, vocab - 1);
  std::vector<Sentence> sents(400);
  for (auto& s : sents) {
    s.resize(rng() % 9);
    for (auto& w : s) w = std::min(tok(rng), tok(rng));
  }
  StyleCorpus corpus;
  corpus.sentences = sents;
  double worst = 0;
  std::size_t contexts = 0;
  for (std::size_t order : {2, 3, 4}) {
    const NGramLM lm = NGramLM::train(corpus, vocab, order);
    for (std::size_t n = 1; n <= order; ++n)
      for (const auto& ctx : lm.observed_contexts(n)) {
        double mass = 0;
        for (int w = 0; w < vocab; ++w)
          if (lm.predictable(w)) mass += lm.prob(ctx, w);
        worst = std::max(worst, std::abs(mass - 1.0));
        ++contexts;
      }
  }
  StyleCorpus hand;
  hand.sentences = {{4, 5}, {4, 6}};
  const NGramLM lm = NGramLM::train(hand, 7, 2);
  const int a[] = {4}, s[] = {Vocabulary::kBos}, b[] = {5};
  const double hand_err = std::max({std::abs(lm.prob(a, 5) - 0.2525), std::abs(lm.prob(s, 4) - 0.68875),
                                    std::abs(lm.prob(b, Vocabulary::kEos) - 0.5275), std::abs(lm.prob({}, 4) - 0.17)});
  return {worst < 1e-6 && hand_err < 1e-9,
          std::to_string(contexts) + " contexts" + fmt(", worst |sum - 1| %.2e, hand bigram error %.2e", worst, hand_err)};
}

// 3. Covering beams reproduce the exhaustive argmax.
Outcome smt_oracle() {
  std::size_t agree = 0, max_paths = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto t = oracle::smt_lattice_trial(1000 + seed);
    if (t.same_tokens && t.score_gap < 1e-9) ++agree;
    max_paths = std::max(max_paths, t.paths);
  }
  return {agree == 100, std::to_string(agree) + "/100 lattices agree, up to " + std::to_string(max_paths) + " paths"};
}

// 4. Finite differences over every op and both model losses.
Outcome gradient_suite() {
  double worst = 0;
  std::string worst_what = "none";
  auto note = [&](double e, const std::string& what) {
    if (e > worst) {
      worst = e;
      worst_what = what;
    }
  };
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const auto& r : gradcheck::op_suite(5000 + seed)) note(r.error, r.op);
    note(gradcheck::gru_step_error(6000 + seed), "gru_step");
    note(gradcheck::seq2seq_error(7000 + seed), "seq2seq nll");
    note(gradcheck::classifier_error(8000 + seed), "classifier loss");
  }
  return {worst < 1e-3, fmt("50 configurations, worst relative error %.2e", worst) + " (" + worst_what + ")"};
}

// 5. Fixed BLEU cases and the n-gram counting oracle.
Outcome bleu_oracle() {
  const std::vector<TokenLine> refs{tokenize("the food was good ."), tokenize("a nice place to eat")};
  const double perfect = corpus_bleu(refs, refs);
  const double disjoint = corpus_bleu({tokenize("x y z w"), tokenize("q r s t u")}, refs);
  const double p4_zero = corpus_bleu({tokenize("a b c d")}, {tokenize("a b c e")});
  std::mt19937_64 rng(12);
  const std::vector<std::string> words{"a", "b", "c", "d", "e", "f"};
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenLine> hyps, rs;
    for (int i = 0; i < 15; ++i) {
      TokenLine r(3 + rng() % 8), h;
      for (auto& w : r) w = words[rng() % words.size()];
      h = r;
      for (auto& w : h)
        if (rng() % 4 == 0) w = words[rng() % words.size()];
      if (rng() % 3 == 0) h.pop_back();
      if (rng() % 5 == 0) h.push_back("g");
      hyps.push_back(h);
      rs.push_back(r);
    }
    worst = std::max(worst, std::abs(corpus_bleu(hyps, rs) - oracle::reference_bleu(hyps, rs)));
  }
  const bool ok = perfect == 100.0 && disjoint == 0.0 && p4_zero == 0.0 && worst < 0.01;
  return {ok, fmt("fixed cases %.1f / %.1f / %.1f, worst random-corpus difference %.2e", perfect, disjoint, p4_zero, worst)};
}

// 6. Generated inputs carry no gradient into their generator.
Outcome stop_gradient() {
  const toy::GradientNorms detached = toy::back_translation_gradients(true);
  const toy::GradientNorms live = toy::back_translation_gradients(false);
  const bool ok = detached.max_abs_generator == 0.0 && detached.trained > 0 && live.generator > 0;
  return {ok, fmt("generator |grad| max %.1e with stop-gradient, %.2e without; trained model norm %.2e",
                  detached.max_abs_generator, live.generator, detached.trained)};
}

pl::Config trend_config(const fs::path& work) {
  pl::Config c;
  c.work_dir = work.string();
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"synth_sentences", "2000"}, {"synth_test", "200"},     {"synth_noise", "0.2"},     {"synth_rare_pairs", "10"},
           {"synth_rare_weight", "0.1"}, {"emb_dim", "50"},        {"nmt_emb", "32"},          {"nmt_hidden", "32"},
           {"nmt_attention", "32"},     {"clf_emb", "32"},         {"clf_hidden", "32"},       {"clf_epochs", "10"},
           {"pretrain_epochs", "4"},    {"max_epochs", "4"},       {"run_ablation", "true"},   {"seed", "1"}})
    c.set(k, v);
  c.validate();
  return c;
}

pl::RunSummary run_pipeline(const fs::path& work, std::ostream& log) {
  fs::remove_all(work);
  fs::create_directories(work);
  pl::WorkLock lock(work);
  return pl::Pipeline(trend_config(work), log).run_all();
}

// 7. Component trend on the synthetic task.
Outcome end_to_end(const pl::RunSummary& s) {
  const pl::SystemScore *smt = s.find("smt"), *iter0 = s.find("nmt-iter0"), *final = s.find("nmt-final"),
                        *ablation = s.find("nmt-ablation");
  if (!smt || !iter0 || !final || !ablation) return {false, "missing systems in the summary"};
  const double acc_smt = 100 * smt->mean_accuracy(), acc0 = 100 * iter0->mean_accuracy(),
               acc_final = 100 * final->mean_accuracy(), acc_abl = 100 * ablation->mean_accuracy();
  const double bleu_smt = smt->mean_bleu().value_or(0), bleu0 = iter0->mean_bleu().value_or(0);
  const bool a = acc_smt >= 80, b = bleu0 > bleu_smt, c = acc_final >= 90 && acc_final >= acc0 + 5,
             d = acc_abl <= acc_final - 5;
  std::string detail = fmt("(a) SMT accuracy %.1f", acc_smt) + (a ? "" : " [fail]");
  detail += fmt("; (b) BLEU iter0 %.2f vs SMT %.2f", bleu0, bleu_smt) + (b ? "" : " [fail]");
  detail += fmt("; (c) accuracy final %.1f vs iter0 %.1f", acc_final, acc0) + (c ? "" : " [fail]");
  detail += fmt("; (d) ablation %.1f", acc_abl) + (d ? "" : " [fail]");
  return {a && b && c && d, detail};
}

// 8. A second identical run reproduces every metrics ledger byte for byte.
Outcome determinism(const fs::path& first, const fs::path& second) {
  std::size_t compared = 0, differ = 0;
  for (const char* f : {"bt/metrics.jsonl", "bt_ablation/metrics.jsonl", "reports/summary.json"}) {
    const std::string a = slurp(first / f), b = slurp(second / f);
    ++compared;
    if (a.empty() || a != b) ++differ;
  }
  for (const auto& st : pl::stage_names()) {
    const fs::path m = fs::path("manifests") / (st + ".json");
    if (!fs::exists(first / m)) continue;
    ++compared;
    if (slurp(first / m) != slurp(second / m)) ++differ;
  }
  return {differ == 0, std::to_string(compared - differ) + "/" + std::to_string(compared) +
                           " metrics ledgers and manifests identical"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path root = fs::temp_directory_path() / "stylemt_acceptance";
  std::set<int> only;
  app.add_option("--work-root", root, "directory for pipeline runs");
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  auto selected = [&](int n) { return only.empty() || only.count(n) > 0; };

  bool all = true;
  auto report = [&](int n, const char* name, double limit_s, const std::function<Outcome()>& check) {
    if (!selected(n)) return;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= limit_s;
    const bool pass = o.pass && in_time;
    all = all && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " " << n << " " << name << ": " << o.detail
              << fmt(" [%.1fs, limit %.0fs]", secs, limit_s) << (in_time ? "" : " [over time]") << std::endl;
  };

  report(1, "lexicon oracle", 60, lexicon_oracle);
  report(2, "language model", 60, lm_correctness);
  report(3, "SMT decoder oracle", 60, smt_oracle);
  report(4, "gradient suite", 120, gradient_suite);
  report(5, "BLEU oracle", 60, bleu_oracle);
  report(6, "stop-gradient", 60, stop_gradient);

  if (selected(7) || selected(8)) {
    fs::create_directories(root);
    std::ofstream log(root / "pipeline.log");
    pl::RunSummary summary;
    bool first_run = false;
    report(7, "end-to-end trend", 25 * 60, [&] {
      summary = run_pipeline(root / "run1", log);
      first_run = true;
      return end_to_end(summary);
    });
    report(8, "determinism", 25 * 60, [&] {
      if (!first_run) run_pipeline(root / "run1", log);
      run_pipeline(root / "run2", log);
      return determinism(root / "run1", root / "run2");
    });
  }
  return all ? 0 : 1;
}

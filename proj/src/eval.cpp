#include "stylemt/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "stylemt/error.hpp"

namespace stylemt {

namespace {

TokenLine lowercased(const TokenLine& line) {
  TokenLine out = line;
  for (auto& tok : out)
    std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::map<TokenLine, std::size_t> ngram_counts(const TokenLine& line, std::size_t n) {
  std::map<TokenLine, std::size_t> counts;
  for (std::size_t i = 0; i + n <= line.size(); ++i)
    ++counts[TokenLine(line.begin() + static_cast<std::ptrdiff_t>(i), line.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

void BleuStats::add(const TokenLine& hypothesis, const TokenLine& reference) {
  const TokenLine hyp = lowercased(hypothesis);
  const TokenLine ref = lowercased(reference);
  hyp_length += hyp.size();
  ref_length += ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : h) {
      auto it = r.find(gram);
      if (it != r.end()) matches[n - 1] += std::min(count, it->second);
    }
    totals[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
}

double BleuStats::bleu() const {
  if (hyp_length == 0) return 0.0;
  double log_precision = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double c = static_cast<double>(hyp_length), r = static_cast<double>(ref_length);
  const double brevity = c < r ? 1.0 - r / c : 0.0;
  return 100.0 * std::exp(brevity + log_precision / 4.0);
}

double corpus_bleu(const std::vector<TokenLine>& hypotheses, const std::vector<TokenLine>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("corpus_bleu: hypothesis and reference counts differ");
  BleuStats stats;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) stats.add(hypotheses[i], references[i]);
  return stats.bleu();
}

double transfer_accuracy(const std::vector<Sentence>& outputs, Style target, const StyleClassifier& clf) {
  if (!clf.trained()) throw std::invalid_argument("transfer_accuracy: evaluation classifier is untrained");
  if (outputs.empty()) throw std::invalid_argument("transfer_accuracy: no outputs");
  std::size_t hits = 0;
  for (const auto& s : outputs)
    if (!s.empty() && clf.prob(s, target) > 0.5) ++hits;
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

EvalReport evaluate_system(const std::string& name, const TransferFunction& system, const StyleCorpus& test,
                           const std::vector<TokenLine>* references, const StyleClassifier& clf,
                           const Vocabulary& vocab) {
  if (test.empty()) throw std::invalid_argument("evaluate_system: empty test set");
  if (!clf.trained()) throw std::invalid_argument("evaluate_system: evaluation classifier is untrained");
  if (references && references->size() != test.size())
    throw std::invalid_argument("evaluate_system: reference count differs from the test set");
  EvalReport report;
  report.system = name;
  report.from = test.style;
  const Style target = opposite(test.style);
  std::vector<TokenLine> hyps;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    SentenceRecord rec;
    rec.input = decode(test.sentences[i], vocab);
    Sentence out;
    try {
      out = system(test.sentences[i]);
    } catch (const std::exception& e) {
      rec.error = e.what();
      out.clear();
    }
    rec.output = decode(out, vocab);
    if (!out.empty()) {
      try {
        rec.target_prob = clf.prob(out, target);
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
    }
    if (!out.empty() && rec.error.empty() && rec.target_prob > 0.5) ++hits;
    if (references) rec.reference = (*references)[i];
    hyps.push_back(rec.output);
    report.records.push_back(std::move(rec));
  }
  report.transfer_accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
  if (references) report.bleu = corpus_bleu(hyps, *references);
  return report;
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["system"] = report.system;
  j["direction"] = direction_name(report.from);
  j["transfer_accuracy"] = report.transfer_accuracy;
  j["bleu"] = report.bleu ? nlohmann::json(*report.bleu) : nlohmann::json(nullptr);
  j["records"] = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json rec{{"input", detokenize(r.input)}, {"output", detokenize(r.output)}, {"target_prob", r.target_prob}};
    if (r.reference) rec["reference"] = detokenize(*r.reference);
    if (!r.error.empty()) rec["error"] = r.error;
    j["records"].push_back(std::move(rec));
  }
  return j.dump(2);
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << report_json(report) << '\n';
}

void write_records_tsv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "input\toutput\treference\ttarget_prob\terror\n";
  char buf[32];
  for (const auto& r : report.records) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.target_prob);
    out << detokenize(r.input) << '\t' << detokenize(r.output) << '\t' << (r.reference ? detokenize(*r.reference) : "")
        << '\t' << buf << '\t' << r.error << '\n';
  }
}

std::string format_table(const std::vector<EvalReport>& reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.system.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-*s  %-9s  %8s  %7s\n", static_cast<int>(width), "system", "direction", "accuracy",
                "BLEU");
  out << buf;
  for (const auto& r : reports) {
    std::string bleu = "-";
    if (r.bleu) {
      char b[16];
      std::snprintf(b, sizeof(b), "%.2f", *r.bleu);
      bleu = b;
    }
    std::snprintf(buf, sizeof(buf), "%-*s  %-9s  %7.1f%%  %7s\n", static_cast<int>(width), r.system.c_str(),
                  direction_name(r.from).c_str(), 100.0 * r.transfer_accuracy, bleu.c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace stylemt

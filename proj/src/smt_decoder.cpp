#include "stylemt/smt_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stylemt {

FeatureWeights FeatureWeights::defaults(Style from) {
  FeatureWeights w;
  w.w_lm_tgt = from == Style::source ? 1.0 : -1.0;
  w.w_lm_src = from == Style::source ? -1.0 : 1.0;
  return w;
}

bool FeatureWeights::finite() const {
  return std::isfinite(w_fwd) && std::isfinite(w_bwd) && std::isfinite(w_lm_tgt) && std::isfinite(w_lm_src) &&
         std::isfinite(w_count);
}

SmtSystem::SmtSystem(Style from, const TransferTable& forward, const TransferTable& backward,
                     const NGramLM& lm_source, const NGramLM& lm_target, FeatureWeights weights, SmtConfig config)
    : from_(from), forward_(&forward), backward_(&backward), lm_source_(&lm_source), lm_target_(&lm_target),
      weights_(weights), config_(config) {
  if (!weights_.finite()) throw std::invalid_argument("SMT feature weights must be finite");
  if (config_.beam == 0) throw std::invalid_argument("SMT beam must be >= 1");
  if (forward.from() != from || backward.from() != opposite(from))
    throw std::invalid_argument("SMT tables do not match the translation direction");
}

std::vector<std::pair<int, double>> SmtSystem::candidates(int word) const {
  std::vector<std::pair<int, double>> out;
  bool identity = false;
  if (word >= Vocabulary::kNumSpecial) {
    for (const auto& c : forward_->candidates(word)) {
      out.emplace_back(c.token, std::log(c.prob));
      identity = identity || c.token == word;
    }
  }
  if (!identity) out.emplace_back(word, std::log(config_.floor_prob));
  return out;
}

double SmtSystem::forward_log_prob(int x, int y) const {
  if (auto p = forward_->prob(x, y); p && *p > 0) return std::log(*p);
  return x == y ? std::log(config_.floor_prob) : config_.log_zero;
}

double SmtSystem::backward_log_prob(int x, int y) const {
  if (auto p = backward_->prob(y, x); p && *p > 0) return std::log(*p);
  return x == y ? std::log(config_.floor_prob) : config_.log_zero;
}

namespace {

struct Hyp {
  Sentence tokens;
  double score = 0;
};

bool better(const Hyp& a, const Hyp& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

SmtResult SmtSystem::translate_scored(std::span<const int> x) const { return translate_scored(x, config_.beam); }

SmtResult SmtSystem::translate_scored(std::span<const int> x, std::size_t beam) const {
  if (beam == 0) throw std::invalid_argument("SMT beam must be >= 1");
  const std::size_t history = std::max(lm_source_->order(), lm_target_->order()) - 1;
  const double w_lm[2] = {weights_.w_lm_src, weights_.w_lm_tgt};
  const NGramLM* lms[2] = {lm_source_, lm_target_};

  auto lm_term = [&](std::span<const int> ctx, int w) {
    double s = 0;
    for (int i = 0; i < 2; ++i)
      if (w_lm[i] != 0) s += w_lm[i] * lms[i]->log_prob(ctx, w);
    return s;
  };

  std::vector<Hyp> beam_hyps(1);
  std::vector<int> ctx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto cands = candidates(x[i]);
    // recombination key: the last `history` output tokens
    std::map<Sentence, Hyp> merged;
    for (const Hyp& h : beam_hyps) {
      ctx.assign(1, Vocabulary::kBos);
      ctx.insert(ctx.end(), h.tokens.begin(), h.tokens.end());
      for (const auto& [y, log_fwd] : cands) {
        Hyp next;
        next.tokens = h.tokens;
        next.tokens.push_back(y);
        next.score = h.score + weights_.w_fwd * log_fwd + weights_.w_bwd * backward_log_prob(x[i], y) +
                     lm_term(ctx, y) + weights_.w_count;
        const std::size_t keep = std::min(history, next.tokens.size());
        Sentence state(next.tokens.end() - static_cast<std::ptrdiff_t>(keep), next.tokens.end());
        if (next.tokens.size() < history) state.insert(state.begin(), Vocabulary::kBos);
        auto it = merged.find(state);
        if (it == merged.end()) merged.emplace(std::move(state), std::move(next));
        else if (better(next, it->second)) it->second = std::move(next);
      }
    }
    beam_hyps.clear();
    for (auto& [state, h] : merged) beam_hyps.push_back(std::move(h));
    std::sort(beam_hyps.begin(), beam_hyps.end(), better);
    if (beam_hyps.size() > beam) beam_hyps.resize(beam);
  }
  for (Hyp& h : beam_hyps) {
    ctx.assign(1, Vocabulary::kBos);
    ctx.insert(ctx.end(), h.tokens.begin(), h.tokens.end());
    h.score += lm_term(ctx, Vocabulary::kEos);
  }
  const Hyp& best = *std::min_element(beam_hyps.begin(), beam_hyps.end(), better);
  return {best.tokens, best.score};
}

double SmtSystem::score(std::span<const int> x, std::span<const int> y) const {
  if (x.size() != y.size()) throw std::invalid_argument("monotone SMT pair must have equal lengths");
  double fwd = 0, bwd = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double lf = std::log(config_.floor_prob);
    bool found = false;
    for (const auto& [cand, l] : candidates(x[i]))
      if (cand == y[i]) {
        lf = l;
        found = true;
      }
    if (!found) lf = forward_log_prob(x[i], y[i]);
    fwd += lf;
    bwd += backward_log_prob(x[i], y[i]);
  }
  return weights_.w_fwd * fwd + weights_.w_bwd * bwd + weights_.w_lm_tgt * lm_target_->score(y) +
         weights_.w_lm_src * lm_source_->score(y) + weights_.w_count * static_cast<double>(y.size());
}

Sentence smt_translate(std::span<const int> x, const SmtSystem& system) { return system.translate(x); }

PseudoCorpora build_pseudo_corpus(const StyleCorpus& source, const StyleCorpus& target, const SmtSystem& s2t,
                                  const SmtSystem& t2s, PseudoPairing pairing) {
  if (s2t.from() != Style::source || t2s.from() != Style::target)
    throw std::invalid_argument("build_pseudo_corpus: systems passed in the wrong order");
  PseudoCorpora out;
  out.s2t.from = Style::source;
  out.t2s.from = Style::target;
  for (const auto& x : source.sentences) {
    Sentence y_hat = s2t.translate(x);
    if (pairing == PseudoPairing::back_translation) out.t2s.pairs.push_back({std::move(y_hat), x, 1.0, Provenance::smt});
    else out.s2t.pairs.push_back({x, std::move(y_hat), 1.0, Provenance::smt});
  }
  for (const auto& y : target.sentences) {
    Sentence x_hat = t2s.translate(y);
    if (pairing == PseudoPairing::back_translation) out.s2t.pairs.push_back({std::move(x_hat), y, 1.0, Provenance::smt});
    else out.t2s.pairs.push_back({y, std::move(x_hat), 1.0, Provenance::smt});
  }
  return out;
}

}  // namespace stylemt

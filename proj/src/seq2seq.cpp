#include "stylemt/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "stylemt/error.hpp"

namespace stylemt {

namespace {

constexpr double kMasked = -1e30;

bool emittable(int id) { return id != Vocabulary::kPad && id != Vocabulary::kBos; }

}  // namespace

std::string Seq2SeqConfig::to_json() const {
  nlohmann::json j{{"vocab_size", vocab_size}, {"emb_dim", emb_dim}, {"hidden", hidden}, {"attention", attention}};
  return j.dump();
}

Seq2SeqConfig Seq2SeqConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Seq2SeqConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.attention = j.at("attention").get<std::size_t>();
  return c;
}

struct Seq2Seq::Encoded {
  ad::Var annotations;  // T x 2H
  ad::Var keys;         // T x A, annotations * U_a + b_a
  ad::Var init_state;   // 1 x H
  ad::Var mask;         // 1 x V, kMasked on never-emitted ids
};

Seq2Seq::Seq2Seq(const Seq2SeqConfig& config, std::uint64_t seed) : config_(config) {
  if (config.vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecial) || config.emb_dim == 0 ||
      config.hidden == 0 || config.attention == 0)
    throw ConfigError("seq2seq dimensions must be positive and the vocabulary must contain a word");
  register_params();
  nn::init_normal_fan(params_, seed);
}

void Seq2Seq::register_params() {
  const std::size_t V = config_.vocab_size, E = config_.emb_dim, H = config_.hidden, A = config_.attention;
  src_emb_ = params_.add("src_emb", {V, E});
  tgt_emb_ = params_.add("tgt_emb", {V, E});
  enc_fwd_ = nn::add_gru(params_, "enc_fwd", E, H);
  enc_bwd_ = nn::add_gru(params_, "enc_bwd", E, H);
  init_w_ = params_.add("init_w", {2 * H, H});
  init_b_ = params_.add("init_b", {1, H}, true);
  att_w_ = params_.add("att_w", {H, A});
  att_u_ = params_.add("att_u", {2 * H, A});
  att_b_ = params_.add("att_b", {1, A}, true);
  att_v_ = params_.add("att_v", {A, 1});
  dec_ = nn::add_gru(params_, "dec", E + 2 * H, H);
  out_w_ = params_.add("out_w", {3 * H, V});
  out_b_ = params_.add("out_b", {1, V}, true);
}

void Seq2Seq::check_tokens(std::span<const int> ids, const char* what) const {
  if (ids.empty()) throw std::invalid_argument(std::string("seq2seq: empty ") + what);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw std::invalid_argument(std::string("seq2seq: token id out of range in ") + what);
}

Seq2Seq::Encoded Seq2Seq::encode(const nn::Binding& bound, std::span<const int> x) const {
  ad::Tape& tape = bound.tape();
  const std::size_t T = x.size(), H = config_.hidden;
  std::vector<ad::Var> emb(T), fwd(T), bwd(T);
  for (std::size_t j = 0; j < T; ++j) emb[j] = ad::embedding_lookup(bound[src_emb_], x[j]);
  ad::Var h = tape.constant({1, H}, std::vector<double>(H, 0.0));
  for (std::size_t j = 0; j < T; ++j) fwd[j] = h = nn::gru_step(bound, enc_fwd_, emb[j], h);
  h = tape.constant({1, H}, std::vector<double>(H, 0.0));
  for (std::size_t j = T; j-- > 0;) bwd[j] = h = nn::gru_step(bound, enc_bwd_, emb[j], h);

  std::vector<ad::Var> rows(T);
  for (std::size_t j = 0; j < T; ++j) rows[j] = ad::concat({fwd[j], bwd[j]}, 1);
  Encoded enc;
  enc.annotations = ad::concat(rows, 0);
  enc.keys = ad::add(ad::matmul(enc.annotations, bound[att_u_]), bound[att_b_]);
  enc.init_state =
      ad::tanh(ad::add(ad::matmul(ad::concat({fwd[T - 1], bwd[0]}, 1), bound[init_w_]), bound[init_b_]));
  std::vector<double> mask(config_.vocab_size, 0.0);
  mask[Vocabulary::kPad] = kMasked;
  mask[Vocabulary::kBos] = kMasked;
  enc.mask = tape.constant({1, config_.vocab_size}, std::move(mask));
  return enc;
}

std::pair<ad::Var, ad::Var> Seq2Seq::step(const nn::Binding& bound, const Encoded& enc, const ad::Var& state,
                                          int prev, ad::Var* attention) const {
  ad::Var scores = ad::matmul(ad::tanh(ad::add(enc.keys, ad::matmul(state, bound[att_w_]))), bound[att_v_]);
  ad::Var alpha = ad::softmax(scores, 0);  // T x 1
  if (attention) *attention = alpha;
  ad::Var context = ad::matmul(ad::transpose(alpha), enc.annotations);
  ad::Var input = ad::concat({ad::embedding_lookup(bound[tgt_emb_], prev), context}, 1);
  ad::Var next = nn::gru_step(bound, dec_, input, state);
  ad::Var logits = ad::add(ad::matmul(ad::concat({next, context}, 1), bound[out_w_]), bound[out_b_]);
  return {next, ad::add(logits, enc.mask)};
}

ad::Var Seq2Seq::nll(const nn::Binding& bound, std::span<const int> x, std::span<const int> y) const {
  check_tokens(x, "input");
  for (int id : y)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size || !emittable(id) || id == Vocabulary::kEos)
      throw std::invalid_argument("seq2seq: invalid output token");
  const Encoded enc = encode(bound, x);
  ad::Var state = enc.init_state;
  std::vector<ad::Var> losses;
  losses.reserve(y.size() + 1);
  int prev = Vocabulary::kBos;
  for (std::size_t i = 0; i <= y.size(); ++i) {
    const int target = i < y.size() ? y[i] : Vocabulary::kEos;
    auto [next, logits] = step(bound, enc, state, prev);
    losses.push_back(ad::cross_entropy(logits, target));
    state = next;
    prev = target;
  }
  return ad::sum(ad::concat(losses, 1));
}

LogProbResult Seq2Seq::log_prob(std::span<const int> x, std::span<const int> y) const {
  check_tokens(x, "input");
  for (int id : y)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw std::invalid_argument("seq2seq: token id out of range in output");
  ad::Tape tape(false);
  nn::Binding bound(tape, params_, nullptr);
  const Encoded enc = encode(bound, x);
  ad::Var state = enc.init_state;
  LogProbResult out;
  int prev = Vocabulary::kBos;
  for (std::size_t i = 0; i <= y.size(); ++i) {
    const int target = i < y.size() ? y[i] : Vocabulary::kEos;
    auto [next, logits] = step(bound, enc, state, prev);
    const double lp = ad::log_softmax_row(logits).value()[static_cast<std::size_t>(target)];
    out.steps.push_back(lp);
    out.total += lp;
    state = next;
    prev = target;
  }
  return out;
}

std::vector<std::vector<double>> Seq2Seq::attention_weights(std::span<const int> x, std::span<const int> y) const {
  check_tokens(x, "input");
  ad::Tape tape(false);
  nn::Binding bound(tape, params_, nullptr);
  const Encoded enc = encode(bound, x);
  ad::Var state = enc.init_state;
  std::vector<std::vector<double>> out;
  int prev = Vocabulary::kBos;
  for (std::size_t i = 0; i <= y.size(); ++i) {
    ad::Var alpha;
    state = step(bound, enc, state, prev, &alpha).first;
    out.emplace_back(alpha.value().begin(), alpha.value().end());
    if (i < y.size()) prev = y[i];
  }
  return out;
}

namespace {

struct LiveHyp {
  Hypothesis hyp;
  ad::Var state;
};

struct Expansion {
  std::size_t parent;
  int token;
  double total;
};

}  // namespace

DecodeResult Seq2Seq::beam_decode(std::span<const int> x, std::size_t beam, std::size_t k,
                                  std::size_t max_len) const {
  check_tokens(x, "input");
  if (k == 0 || k > beam) throw std::invalid_argument("beam_decode requires 1 <= k <= beam");
  if (max_len == 0) max_len = default_max_len(x.size());
  ad::Tape tape(false);
  nn::Binding bound(tape, params_, nullptr);
  const Encoded enc = encode(bound, x);
  const std::size_t V = config_.vocab_size;

  auto hyp_less = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.total != b.total) return a.total > b.total;
    return a.tokens < b.tokens;
  };

  std::vector<LiveHyp> live(1);
  live[0].state = enc.init_state;
  std::vector<Hypothesis> done;
  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    // Scores only decrease, so no live hypothesis can displace k finished ones
    // that already beat the best of them.
    if (done.size() >= k) {
      std::sort(done.begin(), done.end(), hyp_less);
      double best_live = live[0].hyp.total;
      for (const auto& l : live) best_live = std::max(best_live, l.hyp.total);
      if (done[k - 1].total > best_live) break;
    }
    std::vector<std::vector<double>> logp(live.size());
    std::vector<ad::Var> states(live.size());
    std::vector<Expansion> expansions;
    expansions.reserve(live.size() * V);
    for (std::size_t h = 0; h < live.size(); ++h) {
      const int prev = live[h].hyp.tokens.empty() ? Vocabulary::kBos : live[h].hyp.tokens.back();
      auto [next, logits] = step(bound, enc, live[h].state, prev);
      states[h] = next;
      const auto lp = ad::log_softmax_row(logits).value();
      logp[h].assign(lp.begin(), lp.end());
      for (std::size_t w = 0; w < V; ++w)
        if (emittable(static_cast<int>(w))) expansions.push_back({h, static_cast<int>(w), live[h].hyp.total + lp[w]});
    }
    auto exp_less = [&](const Expansion& a, const Expansion& b) {
      if (a.total != b.total) return a.total > b.total;
      const Sentence& pa = live[a.parent].hyp.tokens;
      const Sentence& pb = live[b.parent].hyp.tokens;
      const std::size_t n = std::min(pa.size(), pb.size());
      for (std::size_t i = 0; i < n; ++i)
        if (pa[i] != pb[i]) return pa[i] < pb[i];
      if (pa.size() != pb.size()) return pa.size() < pb.size();
      return a.token < b.token;
    };
    const std::size_t keep = std::min(beam, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep), expansions.end(),
                      exp_less);
    std::vector<LiveHyp> next_live;
    for (std::size_t e = 0; e < keep; ++e) {
      const Expansion& ex = expansions[e];
      Hypothesis h = live[ex.parent].hyp;
      h.steps.push_back(logp[ex.parent][static_cast<std::size_t>(ex.token)]);
      h.total = ex.total;
      if (ex.token == Vocabulary::kEos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(ex.token);
        next_live.push_back({std::move(h), states[ex.parent]});
      }
    }
    live = std::move(next_live);
  }
  for (auto& l : live) done.push_back(std::move(l.hyp));
  std::sort(done.begin(), done.end(), hyp_less);
  if (done.size() > k) done.resize(k);
  return {std::move(done)};
}

Sentence Seq2Seq::greedy(std::span<const int> x, std::size_t max_len) const {
  return beam_decode(x, 1, 1, max_len).hypotheses.front().tokens;
}

void Seq2Seq::warm_start_embeddings(const EmbeddingMatrix& embeddings) {
  if (embeddings.dim() != config_.emb_dim || embeddings.vocab_size() != config_.vocab_size)
    throw ConfigError("warm-start embeddings do not match the model dimensions");
  const std::size_t E = config_.emb_dim;
  for (std::size_t id = 0; id < config_.vocab_size; ++id) {
    if (!embeddings.trained(static_cast<int>(id))) continue;
    const auto row = embeddings.row(static_cast<int>(id));
    for (std::size_t table : {src_emb_, tgt_emb_})
      std::copy(row.begin(), row.end(), params_[table].value.begin() + static_cast<std::ptrdiff_t>(id * E));
  }
}

void Seq2Seq::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(path, "seq2seq", config_.to_json(), params_);
}

Seq2Seq Seq2Seq::load(const std::filesystem::path& path) {
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.kind != "seq2seq") throw DataError(path.string() + " is not a seq2seq checkpoint");
  Seq2Seq model;
  model.config_ = Seq2SeqConfig::from_json(ckpt.config_json);
  model.register_params();
  nn::assign_params(model.params_, ckpt.params);
  return model;
}

Seq2SeqTrainer::Seq2SeqTrainer(Seq2Seq& model, nn::AdadeltaConfig config)
    : model_(&model), optimizer_(model.params(), config), grads_(model.params()) {}

double Seq2SeqTrainer::train_step(std::span<const WeightedPair> batch, std::vector<double>* pair_nll) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  double total_weight = 0;
  for (const auto& p : batch) {
    if (!(p.weight >= 0.0 && p.weight <= 1.0)) throw std::invalid_argument("train_step: weight outside [0, 1]");
    total_weight += p.weight;
  }
  if (pair_nll) pair_nll->assign(batch.size(), 0.0);
  if (total_weight == 0) return 0;

  grads_.zero();
  ad::Tape tape;
  nn::Binding bound(tape, model_->params(), &grads_);
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].weight == 0) continue;
    ad::Var nll = model_->nll(bound, batch[i].input, batch[i].output);
    if (!std::isfinite(nll.item()))
      throw NumericalError("non-finite loss on training pair " + std::to_string(i) + " of the batch");
    if (pair_nll) (*pair_nll)[i] = nll.item();
    terms.push_back(ad::scale(nll, batch[i].weight / total_weight));
  }
  ad::Var loss = ad::sum(ad::concat(terms, 1));
  tape.backward(loss);
  last_norm_ = optimizer_.step(model_->params(), grads_);
  if (!model_->params().all_finite()) throw NumericalError("parameters became non-finite after an update");
  return loss.item();
}

}  // namespace stylemt

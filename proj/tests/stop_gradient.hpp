#pragma once

// Two directional models on one tape. The generator (t->s) decodes each
// target sentence; its output tokens become the input of a back-translated
// pair for the trained model (s->t), weighted by the generator's own
// sequence probability. With `detach_weight` the weight enters as a constant,
// which is how training consumes generated data; without it the weight is a
// live path into the generator and serves as a sensitivity control.

#include <cmath>

#include "stylemt/seq2seq.hpp"

namespace toy {

struct GradientNorms {
  double generator = 0;
  double trained = 0;
  double max_abs_generator = 0;
};

inline GradientNorms back_translation_gradients(bool detach_weight, std::uint64_t seed = 3) {
  using namespace stylemt;
  Seq2SeqConfig cfg;
  cfg.vocab_size = 10;
  cfg.emb_dim = 4;
  cfg.hidden = 3;
  cfg.attention = 3;
  Seq2Seq generator(cfg, seed), trained(cfg, seed + 1);
  const std::vector<Sentence> targets{{4, 5, 6}, {7, 8}, {9, 4, 5, 6}};

  nn::Gradients g_gen(generator.params()), g_trained(trained.params());
  ad::Tape tape;
  const nn::Binding bound_gen(tape, generator.params(), &g_gen);
  const nn::Binding bound_trained(tape, trained.params(), &g_trained);
  std::vector<ad::Var> terms;
  for (const auto& y : targets) {
    Sentence x_hat = generator.greedy(y, 4);
    if (x_hat.empty()) x_hat = {4};
    ad::Var log_p = ad::scale(generator.nll(bound_gen, y, x_hat), -1.0);
    ad::Var weight = ad::sigmoid(log_p);
    if (detach_weight) weight = ad::detach(weight);
    terms.push_back(ad::mul(weight, trained.nll(bound_trained, x_hat, y)));
  }
  tape.backward(ad::sum(ad::concat(terms, 1)));

  GradientNorms out;
  out.generator = g_gen.global_norm();
  out.trained = g_trained.global_norm();
  for (std::size_t i = 0; i < g_gen.size(); ++i)
    for (double v : g_gen[i]) out.max_abs_generator = std::max(out.max_abs_generator, std::abs(v));
  return out;
}

}  // namespace toy

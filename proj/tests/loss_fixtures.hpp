// Loss-instance builders and finite-difference helpers shared by the loss
// tests and the acceptance binary.
#pragma once

#include <cmath>

#include "judgelab/attack_loss.hpp"
#include "oracle/naive_forward.hpp"
#include "support.hpp"

namespace testsupport {

/// Judge prompt with `n` random responses, the target at position t and δ
/// attached to it.
inline AttackInstance build(const Vocab& vocab, Rng& rng, const InjectedSequence& delta,
                            std::size_t n, std::size_t t, std::size_t resp_len = 3) {
  std::vector<TokenSeq> responses;
  for (std::size_t k = 0; k < n; ++k) responses.push_back(random_tokens(rng, resp_len, vocab.size(), 14));
  const auto attached = attach(responses[t - 1], delta);
  responses[t - 1] = attached.tokens;
  const auto layout = assemble_prompt_tokens(vocab, small_template(), "w0 w1", responses, 512);
  auto spans = attached.spans;
  for (auto& s : spans) s.first += layout.response_begin[t - 1];
  return make_instance(layout.tokens, spans, render_target_output(t, vocab), t, 0);
}

inline InjectedSequence random_delta(Rng& rng, std::size_t l, std::size_t vocab, AttachMode mode) {
  return make_injected(random_tokens(rng, l, vocab), mode);
}

inline AttachMode mode_of(std::size_t i) {
  return i % 3 == 0 ? AttachMode::suffix : i % 3 == 1 ? AttachMode::prefix : AttachMode::both;
}

/// The three losses computed straight from their definitions with the naive
/// forward pass.
inline LossBreakdown naive_losses(const oracle::NaiveModel& m, const AttackInstance& inst,
                                  const InjectedSequence& delta, const LossWeights& w) {
  const auto prompt = inst.prompt(delta);
  const auto& o = inst.target.tokens;
  LossBreakdown b;
  b.aligned = -m.seq_logprob(prompt, o);
  auto upto = prompt;
  upto.insert(upto.end(), o.begin(), o.begin() + static_cast<std::ptrdiff_t>(inst.target.index_token_pos));
  b.enhancement = -m.seq_logprob(upto, TokenSeq{o[inst.target.index_token_pos]});
  b.perplexity = -m.seq_logprob(inst.before, delta.tokens) / static_cast<double>(delta.length());
  b.total = b.aligned + w.alpha * b.enhancement + w.beta * b.perplexity;
  return b;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
}

/// Loss as a function of δ's j-th input embedding moved by eps along token
/// v's embedding, with every term laid out from the loss definitions.
inline double perturbed_loss(const TinyLM& lm, const AttackInstance& inst,
                             const InjectedSequence& delta, const LossWeights& w, LossSelect which,
                             std::size_t j, TokenId v, double eps) {
  const auto& p = lm.params();
  const std::size_t d = p.config.d_model;
  const double* E = p.at(p.layout.tok_emb);
  const double a = which == LossSelect::total || which == LossSelect::aligned ? 1.0 : 0.0;
  const double e = which == LossSelect::total ? w.alpha : which == LossSelect::enhancement ? 1.0 : 0.0;
  const double q = which == LossSelect::total ? w.beta : which == LossSelect::perplexity ? 1.0 : 0.0;

  const auto main = inst.full_sequence(delta);
  auto x = embed(p, main);
  const std::size_t pos = inst.delta_position(delta, j);
  for (std::size_t t = 0; t < d; ++t) x[pos * d + t] += eps * E[v * d + t];
  const std::size_t plen = inst.prompt_length(delta.length());
  std::vector<LossTerm> terms;
  for (std::size_t i = 0; i < inst.target.length(); ++i) {
    terms.push_back({plen - 1 + i, inst.target.tokens[i], a});
  }
  const auto k = inst.target.index_token_pos;
  terms.push_back({plen - 1 + k, inst.target.tokens[k], e});
  double total = lm.loss_from_embeddings(x, terms);

  auto ppl_seq = inst.before;
  ppl_seq.insert(ppl_seq.end(), delta.tokens.begin(), delta.tokens.end());
  auto y = embed(p, ppl_seq);
  const std::size_t ppos = inst.h() + j;
  for (std::size_t t = 0; t < d; ++t) y[ppos * d + t] += eps * E[v * d + t];
  std::vector<LossTerm> pterms;
  for (std::size_t i = 0; i < delta.length(); ++i) {
    pterms.push_back({inst.h() - 1 + i, delta.tokens[i], q / static_cast<double>(delta.length())});
  }
  total += lm.loss_from_embeddings(y, pterms);
  return total;
}

}  // namespace testsupport

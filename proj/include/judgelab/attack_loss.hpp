// Attack objective: target-aligned generation, target enhancement and
// adversarial perplexity losses, their weighted total and the sum over
// attack instances.
#pragma once

#include <string>
#include <vector>

#include "judgelab/backend.hpp"
#include "judgelab/error.hpp"
#include "judgelab/injection.hpp"
#include "judgelab/judge.hpp"

namespace judgelab {

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.1;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("loss weights must be >= 0");
  }
};

struct LossBreakdown {
  double aligned = 0.0;
  double enhancement = 0.0;
  double perplexity = 0.0;
  double total = 0.0;
};

inline double combine_losses(double aligned, double enhancement, double perplexity,
                             const LossWeights& w) {
  return aligned + w.alpha * enhancement + w.beta * perplexity;
}

/// One judging context with the injected sequence cut out. With δ in place
/// the model input is
///   before + δ[0, lead) + between + δ[lead, l) + after
/// and the target judgment follows it. `between` is non-empty only when δ is
/// split around the response.
struct AttackInstance {
  TokenSeq before;
  TokenSeq between;
  TokenSeq after;
  TargetOutput target;
  std::size_t position = 1;   // 1-based slot of the target response
  std::size_t set_index = 0;  // 0-based shadow set

  std::size_t h() const { return before.size(); }

  std::size_t prompt_length(std::size_t l) const {
    return before.size() + between.size() + after.size() + l;
  }

  /// Sequence position of δ's j-th token.
  std::size_t delta_position(const InjectedSequence& delta, std::size_t j) const {
    const std::size_t lead = delta.lead();
    return j < lead ? before.size() + j : before.size() + lead + between.size() + (j - lead);
  }

  TokenSeq prompt(const InjectedSequence& delta) const {
    const auto lead = static_cast<std::ptrdiff_t>(delta.lead());
    TokenSeq s = before;
    s.insert(s.end(), delta.tokens.begin(), delta.tokens.begin() + lead);
    s.insert(s.end(), between.begin(), between.end());
    s.insert(s.end(), delta.tokens.begin() + lead, delta.tokens.end());
    s.insert(s.end(), after.begin(), after.end());
    return s;
  }

  /// Prompt followed by the target judgment.
  TokenSeq full_sequence(const InjectedSequence& delta) const {
    TokenSeq s = prompt(delta);
    s.insert(s.end(), target.tokens.begin(), target.tokens.end());
    return s;
  }

  /// True when the perplexity context (before + δ) is a prefix of the full
  /// sequence, so one forward pass serves all three losses.
  bool perplexity_fused() const { return between.empty(); }
};

/// Builds an instance from a prompt that contains δ at the given spans.
inline AttackInstance make_instance(const TokenSeq& prompt,
                                    std::span<const std::pair<std::size_t, std::size_t>> spans,
                                    TargetOutput target, std::size_t position,
                                    std::size_t set_index) {
  if (spans.empty() || spans.size() > 2) throw ValidationError("instance needs 1 or 2 δ spans");
  AttackInstance inst;
  const auto [o0, n0] = spans[0];
  inst.before.assign(prompt.begin(), prompt.begin() + static_cast<std::ptrdiff_t>(o0));
  std::size_t tail = o0 + n0;
  if (spans.size() == 2) {
    const auto [o1, n1] = spans[1];
    inst.between.assign(prompt.begin() + static_cast<std::ptrdiff_t>(tail),
                        prompt.begin() + static_cast<std::ptrdiff_t>(o1));
    tail = o1 + n1;
  }
  inst.after.assign(prompt.begin() + static_cast<std::ptrdiff_t>(tail), prompt.end());
  inst.target = std::move(target);
  inst.position = position;
  inst.set_index = set_index;
  if (inst.target.index != position) {
    throw ValidationError("target output index must equal the target position");
  }
  return inst;
}

namespace detail {

struct InstanceTerms {
  TokenSeq main;
  std::vector<LossTerm> main_terms;
  TokenSeq ppl;  // empty when fused into main
  std::vector<LossTerm> ppl_terms;
  std::size_t n_aligned = 0;
  std::size_t enhancement_term = 0;
};

/// Term layout of main_terms: aligned terms [0, L), enhancement term L, then
/// perplexity terms when fused.
inline InstanceTerms instance_terms(const AttackInstance& inst, const InjectedSequence& delta,
                                    const LossWeights& w, std::size_t ctx_len) {
  const std::size_t l = delta.length();
  if (l == 0) throw ValidationError("empty injected sequence");
  if (inst.h() == 0) throw ValidationError("instance has no tokens before δ");
  InstanceTerms t;
  t.main = inst.full_sequence(delta);
  if (t.main.size() > ctx_len) {
    throw ValidationError("context overflow: attack sequence has " + std::to_string(t.main.size()) +
                          " tokens, limit " + std::to_string(ctx_len));
  }
  const std::size_t p = inst.prompt_length(l);
  const auto& o = inst.target.tokens;
  for (std::size_t j = 0; j < o.size(); ++j) t.main_terms.push_back({p - 1 + j, o[j], 1.0});
  t.n_aligned = o.size();
  t.enhancement_term = t.main_terms.size();
  t.main_terms.push_back(
      {p - 1 + inst.target.index_token_pos, o[inst.target.index_token_pos], w.alpha});
  const double pw = w.beta / static_cast<double>(l);
  if (inst.perplexity_fused()) {
    for (std::size_t j = 0; j < l; ++j) {
      t.main_terms.push_back({inst.delta_position(delta, j) - 1, delta.tokens[j], pw});
    }
  } else {
    t.ppl = inst.before;
    t.ppl.insert(t.ppl.end(), delta.tokens.begin(), delta.tokens.end());
    for (std::size_t j = 0; j < l; ++j) {
      t.ppl_terms.push_back({inst.h() - 1 + j, delta.tokens[j], pw});
    }
  }
  return t;
}

}  // namespace detail

inline LossBreakdown total_loss(const ModelBackend& backend, const AttackInstance& inst,
                                const InjectedSequence& delta, const LossWeights& w) {
  w.validate();
  const auto t = detail::instance_terms(inst, delta, w, backend.context_length());
  const auto nll = backend.term_nll(t.main, t.main_terms);
  LossBreakdown b;
  for (std::size_t j = 0; j < t.n_aligned; ++j) b.aligned += nll[j];
  b.enhancement = nll[t.enhancement_term];
  double ppl_sum = 0.0;
  if (inst.perplexity_fused()) {
    for (std::size_t j = t.enhancement_term + 1; j < nll.size(); ++j) ppl_sum += nll[j];
  } else {
    for (double v : backend.term_nll(t.ppl, t.ppl_terms)) ppl_sum += v;
  }
  b.perplexity = ppl_sum / static_cast<double>(delta.length());
  b.total = combine_losses(b.aligned, b.enhancement, b.perplexity, w);
  return b;
}

inline double aligned_loss(const ModelBackend& backend, const AttackInstance& inst,
                           const InjectedSequence& delta) {
  return total_loss(backend, inst, delta, {0.0, 0.0}).aligned;
}

inline double enhancement_loss(const ModelBackend& backend, const AttackInstance& inst,
                               const InjectedSequence& delta) {
  return total_loss(backend, inst, delta, {0.0, 0.0}).enhancement;
}

inline double perplexity_loss(const ModelBackend& backend, const AttackInstance& inst,
                              const InjectedSequence& delta) {
  return total_loss(backend, inst, delta, {0.0, 0.0}).perplexity;
}

struct AggregateLoss {
  double total = 0.0;
  std::vector<LossBreakdown> per_instance;

  LossBreakdown summed() const {
    LossBreakdown s;
    for (const auto& b : per_instance) {
      s.aligned += b.aligned;
      s.enhancement += b.enhancement;
      s.perplexity += b.perplexity;
      s.total += b.total;
    }
    return s;
  }
};

/// Sum of total_loss over every (shadow set, position) instance.
inline AggregateLoss aggregate_objective(const ModelBackend& backend,
                                         std::span<const AttackInstance> instances,
                                         const InjectedSequence& delta, const LossWeights& w) {
  if (instances.empty()) throw ValidationError("aggregate_objective: no instances");
  AggregateLoss agg;
  for (const auto& inst : instances) {
    agg.per_instance.push_back(total_loss(backend, inst, delta, w));
    agg.total += agg.per_instance.back().total;
  }
  return agg;
}

/// Which loss an analytic gradient is taken of.
enum class LossSelect { aligned, enhancement, perplexity, total };

/// Gradient of the selected loss with respect to the one-hot rows of δ's
/// tokens (l x |V|).
inline GradientMatrix instance_gradient(const ModelBackend& backend, const AttackInstance& inst,
                                        const InjectedSequence& delta, const LossWeights& w,
                                        LossSelect which = LossSelect::total) {
  LossWeights tw = w;
  if (which != LossSelect::total) tw = {1.0, 1.0};
  auto t = detail::instance_terms(inst, delta, tw, backend.context_length());
  const std::size_t l = delta.length();
  auto keep = [&](std::size_t idx, bool is_ppl) {
    switch (which) {
      case LossSelect::total: return true;
      case LossSelect::aligned: return !is_ppl && idx < t.n_aligned;
      case LossSelect::enhancement: return !is_ppl && idx == t.enhancement_term;
      case LossSelect::perplexity: return is_ppl || idx > t.enhancement_term;
    }
    return true;
  };
  for (std::size_t i = 0; i < t.main_terms.size(); ++i) {
    if (!keep(i, false)) t.main_terms[i].weight = 0.0;
  }
  for (auto& term : t.ppl_terms) {
    if (!keep(0, true)) term.weight = 0.0;
  }
  std::vector<std::size_t> positions(l);
  for (std::size_t j = 0; j < l; ++j) positions[j] = inst.delta_position(delta, j);
  auto grad = backend.input_token_gradients(t.main, t.main_terms, positions);
  if (!inst.perplexity_fused()) {
    for (std::size_t j = 0; j < l; ++j) positions[j] = inst.h() + j;
    const auto g2 = backend.input_token_gradients(t.ppl, t.ppl_terms, positions);
    for (std::size_t i = 0; i < grad.values.size(); ++i) grad.values[i] += g2.values[i];
  }
  return grad;
}

}  // namespace judgelab

// The judge engine interface every attack, evaluation, and defense runs against.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "judgelab/error.hpp"
#include "judgelab/text.hpp"

namespace judgelab {

/// One weighted negative log-likelihood term: weight * -log P(target | seq[0..row]).
struct LossTerm {
  std::size_t row = 0;
  TokenId target = 0;
  double weight = 1.0;
};

/// Row-major matrix of positions x |V|.
struct GradientMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
  std::span<double> row(std::size_t r) { return std::span<double>(values).subspan(r * cols, cols); }
};

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t context_length() const = 0;

  /// Logit rows for the requested positions (row j conditions on seq[0..j]).
  virtual std::vector<std::vector<double>> logits_at(std::span<const TokenId> seq,
                                                     std::span<const std::size_t> rows) const = 0;

  /// Unweighted -log P(term.target | seq[0..term.row]) for each term, one forward pass.
  virtual std::vector<double> term_nll(std::span<const TokenId> seq,
                                       std::span<const LossTerm> terms) const = 0;

  /// Gradient of sum(weight * nll) with respect to the one-hot token rows at
  /// `positions`.
  virtual GradientMatrix input_token_gradients(std::span<const TokenId> seq,
                                               std::span<const LossTerm> terms,
                                               std::span<const std::size_t> positions) const = 0;

  std::vector<std::vector<double>> logits(std::span<const TokenId> seq) const {
    std::vector<std::size_t> rows(seq.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return logits_at(seq, rows);
  }

  double weighted_loss(std::span<const TokenId> seq, std::span<const LossTerm> terms) const {
    const auto nll = term_nll(seq, terms);
    double total = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) total += terms[i].weight * nll[i];
    return total;
  }

  /// Natural-log probability of `continuation` following `prefix`.
  virtual double seq_logprob(std::span<const TokenId> prefix,
                             std::span<const TokenId> continuation) const {
    if (continuation.empty()) throw ValidationError("seq_logprob: empty continuation");
    if (prefix.empty()) throw ValidationError("seq_logprob: empty prefix");
    const TokenSeq seq = concat({prefix, continuation});
    std::vector<LossTerm> terms;
    terms.reserve(continuation.size());
    for (std::size_t j = 0; j < continuation.size(); ++j) {
      terms.push_back({prefix.size() - 1 + j, continuation[j], 1.0});
    }
    const auto nll = term_nll(seq, terms);
    double lp = 0.0;
    for (double v : nll) lp -= v;
    return lp;
  }

  /// Appends argmax tokens (lowest id on ties) until `stop` or `max_new`.
  /// The stop token is included in the output.
  virtual TokenSeq greedy_decode(std::span<const TokenId> prefix, std::size_t max_new,
                                 TokenId stop) const {
    if (prefix.empty()) throw ValidationError("greedy_decode: empty prefix");
    TokenSeq seq(prefix.begin(), prefix.end());
    TokenSeq out;
    for (std::size_t step = 0; step < max_new; ++step) {
      if (seq.size() >= context_length()) break;
      const std::size_t last = seq.size() - 1;
      const auto rows = logits_at(seq, std::span<const std::size_t>(&last, 1));
      const auto next = static_cast<TokenId>(argmax(rows[0]));
      out.push_back(next);
      seq.push_back(next);
      if (next == stop) break;
    }
    return out;
  }
};

}  // namespace judgelab

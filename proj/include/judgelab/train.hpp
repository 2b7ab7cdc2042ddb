// Supervised training of the tiny judge on (prompt, judgment) pairs.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "judgelab/error.hpp"
#include "judgelab/rng.hpp"
#include "judgelab/tinylm.hpp"

namespace judgelab {

struct TrainExample {
  TokenSeq prompt;
  TokenSeq judgment;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with linear warmup, global
/// gradient-norm clipping and a cosine decay to 10% of lr.
struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 8;
  double lr = 2e-3;
  std::size_t warmup = 100;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::vector<double> step_losses;
};

/// Mean per-token judgment cross-entropy of one example; prompt positions are
/// masked out.
inline std::vector<LossTerm> judgment_terms(const TrainExample& ex, double weight) {
  std::vector<LossTerm> terms;
  const double w = weight / static_cast<double>(ex.judgment.size());
  for (std::size_t j = 0; j < ex.judgment.size(); ++j) {
    terms.push_back({ex.prompt.size() - 1 + j, ex.judgment[j], w});
  }
  return terms;
}

inline double corpus_loss(const ModelParams& params, std::span<const TrainExample> corpus) {
  TinyLM lm(params);
  double total = 0.0;
  for (const auto& ex : corpus) {
    const auto seq = concat({ex.prompt, ex.judgment});
    total += lm.weighted_loss(seq, judgment_terms(ex, 1.0));
  }
  return total / static_cast<double>(corpus.size());
}

/// Accumulates the gradient of weight * example loss into `grads`; returns the
/// unweighted example loss.
inline double accumulate_example_gradient(const ModelParams& p, const TrainExample& ex,
                                          double weight, std::vector<double>& grads) {
  const auto seq = concat({ex.prompt, ex.judgment});
  const auto terms = judgment_terms(ex, weight);
  const auto cache = forward_from_embeddings(p, embed(p, seq));
  std::vector<double> nll;
  const auto lg = nll_logit_grads(p, cache, terms, &nll);
  const auto dx = backward(p, cache, lg, &grads);
  const std::size_t d = p.config.d_model;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    double* te = grads.data() + p.layout.tok_emb + seq[i] * d;
    double* pe = grads.data() + p.layout.pos_emb + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += dx[i * d + j];
      pe[j] += dx[i * d + j];
    }
  }
  double loss = 0.0;
  for (double v : nll) loss += v;
  return loss / static_cast<double>(ex.judgment.size());
}

/// Trains a copy of `initial`. The result is rounded to float32 so that it
/// survives a checkpoint round trip unchanged.
inline TrainResult train_judge(const ModelParams& initial, std::span<const TrainExample> corpus,
                               const TrainConfig& cfg,
                               const std::function<void(std::size_t, double)>& on_step = {}) {
  if (corpus.empty()) throw ValidationError("train_judge: empty corpus");
  if (cfg.batch_size == 0) throw ValidationError("train_judge: batch_size must be positive");
  for (const auto& ex : corpus) {
    if (ex.prompt.empty() || ex.judgment.empty()) {
      throw ValidationError("train_judge: empty prompt or judgment");
    }
    if (ex.prompt.size() + ex.judgment.size() > initial.config.ctx_len) {
      throw ValidationError("train_judge: example exceeds context length");
    }
  }
  TrainResult result{initial, corpus_loss(initial, corpus), 0.0, {}};
  ModelParams& p = result.params;
  const std::size_t np = p.values.size();
  std::vector<double> m(np, 0.0), v(np, 0.0), g(np);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    double batch_loss = 0.0;
    const double w = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch_loss += w * accumulate_example_gradient(p, corpus[order[cursor++]], w, g);
    }
    if (!std::isfinite(batch_loss)) {
      throw RuntimeError("train_judge: loss diverged at step " + std::to_string(step));
    }
    double norm = 0.0;
    for (double x : g) norm += x * x;
    norm = std::sqrt(norm);
    const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

    double lr = cfg.lr;
    if (cfg.warmup > 0 && step <= cfg.warmup) {
      lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup);
    } else if (cfg.steps > cfg.warmup) {
      const double progress = static_cast<double>(step - cfg.warmup) /
                              static_cast<double>(cfg.steps - cfg.warmup);
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    for (std::size_t i = 0; i < np; ++i) {
      const double gi = g[i] * clip;
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
      p.values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
    result.step_losses.push_back(batch_loss);
    if (on_step) on_step(step, batch_loss);
  }
  if (!p.all_finite()) throw RuntimeError("train_judge: non-finite parameters after training");
  p.round_to_float();
  result.loss_after = corpus_loss(p, corpus);
  return result;
}

}  // namespace judgelab

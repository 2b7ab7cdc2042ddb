// Gradient-guided token search over the injected sequence with positional
// adaptation and step-wise inclusion of shadow sets.
#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "judgelab/attack_loss.hpp"
#include "judgelab/backend.hpp"
#include "judgelab/injection.hpp"
#include "judgelab/io.hpp"
#include "judgelab/judge.hpp"
#include "judgelab/rng.hpp"
#include "judgelab/shadow_data.hpp"

namespace judgelab {

struct OptimizerConfig {
  std::size_t top_k = 64;
  std::size_t batch_size = 128;
  std::size_t max_iters = 600;
  std::size_t length = 20;
  LossWeights weights{};
  InitKind init_kind = InitKind::word;
  std::string init_sentence;  // source text for InitKind::sentence
  AttachMode attach = AttachMode::suffix;
  std::size_t split = 0;  // both mode; 0 selects ceil(l/2)
  DecisionMode success_mode = DecisionMode::likelihood;
  std::uint64_t seed = 0;
  std::vector<std::string> banned_tokens;  // in addition to the specials
  bool keep_incumbent = true;              // candidate 0 is the current δ

  void validate() const {
    if (top_k < 1) throw ValidationError("optimizer: K must be >= 1");
    if (max_iters < 1) throw ValidationError("optimizer: T must be >= 1");
    if (length < 1) throw ValidationError("optimizer: l must be >= 1");
    if (batch_size < (keep_incumbent ? 2U : 1U)) {
      throw ValidationError("optimizer: batch size too small");
    }
    if (batch_size > top_k * length) throw ValidationError("optimizer: B must be <= K * l");
    weights.validate();
  }
};

inline json optimizer_config_to_json(const OptimizerConfig& c) {
  return json{{"K", c.top_k},
              {"B", c.batch_size},
              {"T", c.max_iters},
              {"l", c.length},
              {"alpha", c.weights.alpha},
              {"beta", c.weights.beta},
              {"init", to_string(c.init_kind)},
              {"init_sentence", c.init_sentence},
              {"attach", to_string(c.attach)},
              {"split", c.split},
              {"success_mode", to_string(c.success_mode)},
              {"seed", c.seed},
              {"banned", c.banned_tokens},
              {"keep_incumbent", c.keep_incumbent}};
}

/// Missing keys keep the values already in `c`.
inline OptimizerConfig optimizer_config_from_json(const json& j, OptimizerConfig c = {}) {
  try {
    if (j.contains("K")) c.top_k = j["K"].get<std::size_t>();
    if (j.contains("B")) c.batch_size = j["B"].get<std::size_t>();
    if (j.contains("T")) c.max_iters = j["T"].get<std::size_t>();
    if (j.contains("l")) c.length = j["l"].get<std::size_t>();
    if (j.contains("alpha")) c.weights.alpha = j["alpha"].get<double>();
    if (j.contains("beta")) c.weights.beta = j["beta"].get<double>();
    if (j.contains("init")) c.init_kind = init_kind_from_string(j["init"].get<std::string>());
    if (j.contains("init_sentence")) c.init_sentence = j["init_sentence"].get<std::string>();
    if (j.contains("attach")) c.attach = attach_mode_from_string(j["attach"].get<std::string>());
    if (j.contains("split")) c.split = j["split"].get<std::size_t>();
    if (j.contains("success_mode")) {
      c.success_mode = decision_mode_from_string(j["success_mode"].get<std::string>());
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("banned")) c.banned_tokens = j["banned"].get<std::vector<std::string>>();
    if (j.contains("keep_incumbent")) c.keep_incumbent = j["keep_incumbent"].get<bool>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("optimizer config: ") + e.what());
  }
  return c;
}

/// Everything the optimizer needs about the judging setup.
struct AttackProblem {
  const Vocab* vocab = nullptr;
  JudgeTemplate tmpl;
  std::string question;
  std::string target_response;
  std::vector<ShadowSet> shadow_sets;
};

/// Instances for sets [0, active) x positions [1, m], with δ cut out.
inline std::vector<AttackInstance> build_instances(const ModelBackend& backend,
                                                   const AttackProblem& prob,
                                                   const InjectedSequence& delta,
                                                   std::size_t active) {
  const Vocab& vocab = *prob.vocab;
  const auto target_tokens = encode(vocab, prob.target_response);
  std::vector<AttackInstance> out;
  for (std::size_t i = 0; i < active; ++i) {
    const auto& set = prob.shadow_sets[i];
    for (std::size_t t = 1; t <= set.m(); ++t) {
      const auto attached = attach(target_tokens, delta);
      std::vector<TokenSeq> responses;
      for (const auto& s : set.shadows) responses.push_back(encode(vocab, s));
      responses.insert(responses.begin() + static_cast<std::ptrdiff_t>(t - 1), attached.tokens);
      PromptLayout layout;
      try {
        layout = assemble_prompt_tokens(vocab, prob.tmpl, prob.question, responses,
                                        backend.context_length());
      } catch (const ValidationError& e) {
        throw ValidationError("instance (set " + std::to_string(i + 1) + ", position " +
                              std::to_string(t) + "): " + e.what());
      }
      auto spans = attached.spans;
      for (auto& sp : spans) sp.first += layout.response_begin[t - 1];
      auto inst = make_instance(layout.tokens, spans, render_target_output(t, vocab, prob.tmpl.target),
                                t, i);
      if (inst.full_sequence(delta).size() > backend.context_length()) {
        throw ValidationError("context overflow at instance (set " + std::to_string(i + 1) +
                              ", position " + std::to_string(t) + ")");
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

/// Row j: summed one-hot gradient of the total loss at δ's j-th token.
inline GradientMatrix coordinate_gradients(const ModelBackend& backend,
                                           std::span<const AttackInstance> instances,
                                           const InjectedSequence& delta, const LossWeights& w) {
  if (instances.empty()) throw ValidationError("coordinate_gradients: no instances");
  GradientMatrix sum = instance_gradient(backend, instances[0], delta, w);
  for (std::size_t i = 1; i < instances.size(); ++i) {
    const auto g = instance_gradient(backend, instances[i], delta, w);
    for (std::size_t k = 0; k < sum.values.size(); ++k) sum.values[k] += g.values[k];
  }
  return sum;
}

/// For each row, the K non-banned ids with the most negative entries; ties go
/// to the lower id. Each result is ordered by (value, id).
inline std::vector<std::vector<TokenId>> select_topk(const GradientMatrix& grad, std::size_t k,
                                                     const std::set<TokenId>& banned) {
  std::size_t allowed = 0;
  for (std::size_t v = 0; v < grad.cols; ++v) allowed += banned.count(static_cast<TokenId>(v)) ? 0 : 1;
  if (k == 0 || k > allowed) {
    throw ValidationError("select_topk: K=" + std::to_string(k) + " exceeds the " +
                          std::to_string(allowed) + " eligible tokens");
  }
  std::vector<std::vector<TokenId>> out(grad.rows);
  std::vector<TokenId> ids;
  for (std::size_t r = 0; r < grad.rows; ++r) {
    ids.clear();
    for (std::size_t v = 0; v < grad.cols; ++v) {
      if (!banned.count(static_cast<TokenId>(v))) ids.push_back(static_cast<TokenId>(v));
    }
    const auto row = grad.row(r);
    auto less = [&](TokenId a, TokenId b) { return row[a] < row[b] || (row[a] == row[b] && a < b); };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), less);
    out[r].assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

struct Candidate {
  InjectedSequence delta;
  std::optional<std::size_t> pos;  // substituted coordinate, none for the incumbent
  TokenId old_token = 0;
  TokenId new_token = 0;
};

/// Candidate 0 is δ itself when `keep_incumbent`; every other candidate
/// replaces one uniformly chosen coordinate j with a uniformly chosen member
/// of S_j other than the current token. Coordinates whose S_j offers no
/// alternative are skipped.
inline std::vector<Candidate> propose_batch(const InjectedSequence& delta,
                                            const std::vector<std::vector<TokenId>>& topk,
                                            std::size_t batch, Rng& rng,
                                            bool keep_incumbent = true) {
  std::vector<Candidate> out;
  if (keep_incumbent) out.push_back({delta, std::nullopt, 0, 0});
  const std::size_t l = delta.length();
  std::vector<std::vector<TokenId>> alternatives(l);
  std::vector<std::size_t> usable;
  for (std::size_t j = 0; j < l; ++j) {
    for (auto t : topk[j]) {
      if (t != delta.tokens[j]) alternatives[j].push_back(t);
    }
    if (!alternatives[j].empty()) usable.push_back(j);
  }
  while (out.size() < batch) {
    if (usable.empty()) {
      out.push_back({delta, std::nullopt, 0, 0});
      continue;
    }
    std::size_t j = rng.index(l);
    while (alternatives[j].empty()) j = usable[rng.index(usable.size())];
    const TokenId tok = alternatives[j][rng.index(alternatives[j].size())];
    Candidate c{delta, j, delta.tokens[j], tok};
    c.delta.tokens[j] = tok;
    out.push_back(std::move(c));
  }
  return out;
}

struct Selection {
  std::size_t best = 0;
  std::vector<double> losses;
  AggregateLoss best_loss;
};

/// Exact aggregate loss of every candidate; argmin with ties to the lowest index.
inline Selection evaluate_and_select(const ModelBackend& backend,
                                     std::span<const AttackInstance> instances,
                                     std::span<const Candidate> batch, const LossWeights& w) {
  if (batch.empty()) throw ValidationError("evaluate_and_select: empty batch");
  Selection sel;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto agg = aggregate_objective(backend, instances, batch[b].delta, w);
    sel.losses.push_back(agg.total);
    if (b == 0 || agg.total < sel.losses[sel.best]) {
      sel.best = b;
      sel.best_loss = std::move(agg);
    }
  }
  return sel;
}

/// flags[i][t-1]: the judge picks the target at position t of shadow set i.
using SuccessFlags = std::vector<std::vector<bool>>;

inline bool all_success(const SuccessFlags& flags) {
  for (const auto& set : flags) {
    for (bool f : set) {
      if (!f) return false;
    }
  }
  return true;
}

inline SuccessFlags success_check(const ModelBackend& backend, const AttackProblem& prob,
                                  std::size_t active, const InjectedSequence& delta,
                                  DecisionMode mode) {
  const Vocab& vocab = *prob.vocab;
  const auto attached = attach(encode(vocab, prob.target_response), delta).tokens;
  SuccessFlags flags;
  for (std::size_t i = 0; i < active; ++i) {
    const auto& set = prob.shadow_sets[i];
    std::vector<TokenSeq> shadows;
    for (const auto& s : set.shadows) shadows.push_back(encode(vocab, s));
    std::vector<bool> row;
    for (std::size_t t = 1; t <= set.m(); ++t) {
      auto responses = shadows;
      responses.insert(responses.begin() + static_cast<std::ptrdiff_t>(t - 1), attached);
      const auto layout = assemble_prompt_tokens(vocab, prob.tmpl, prob.question, responses,
                                                 backend.context_length());
      const auto d = decide_prompt(backend, vocab, prob.tmpl, layout.tokens, set.m(), mode);
      row.push_back(d.index && *d.index == t);
    }
    flags.push_back(std::move(row));
  }
  return flags;
}

struct TraceRecord {
  std::size_t iter = 0;
  std::size_t c_r = 1;
  double loss = 0.0;
  LossBreakdown terms;  // summed over instances
  std::optional<std::size_t> pos;
  TokenId old_token = 0;
  TokenId new_token = 0;
  bool success = false;
  SuccessFlags flags;
};

struct AttackArtifact {
  InjectedSequence delta;
  std::string delta_text;
  OptimizerConfig config;
  std::string question;
  std::string target_response;
  std::size_t n_sets = 0;
  std::size_t m = 0;
  std::vector<TraceRecord> trace;
  bool complete = false;
  std::size_t c_r_reached = 1;
};

inline json trace_record_to_json(const TraceRecord& r) {
  json flags = json::array();
  for (const auto& row : r.flags) flags.push_back(row);
  return json{{"iter", r.iter},
              {"c_r", r.c_r},
              {"loss", r.loss},
              {"aligned", r.terms.aligned},
              {"enhancement", r.terms.enhancement},
              {"perplexity", r.terms.perplexity},
              {"pos", r.pos ? static_cast<long long>(*r.pos) : -1LL},
              {"old", r.pos ? static_cast<long long>(r.old_token) : -1LL},
              {"new", r.pos ? static_cast<long long>(r.new_token) : -1LL},
              {"success", r.success},
              {"flags", flags}};
}

inline TraceRecord trace_record_from_json(const json& j) {
  TraceRecord r;
  r.iter = j.at("iter").get<std::size_t>();
  r.c_r = j.at("c_r").get<std::size_t>();
  r.loss = j.at("loss").get<double>();
  r.terms.aligned = j.at("aligned").get<double>();
  r.terms.enhancement = j.at("enhancement").get<double>();
  r.terms.perplexity = j.at("perplexity").get<double>();
  r.terms.total = r.loss;
  const auto pos = j.at("pos").get<long long>();
  if (pos >= 0) {
    r.pos = static_cast<std::size_t>(pos);
    r.old_token = j.at("old").get<TokenId>();
    r.new_token = j.at("new").get<TokenId>();
  }
  r.success = j.at("success").get<bool>();
  for (const auto& row : j.at("flags")) r.flags.push_back(row.get<std::vector<bool>>());
  return r;
}

inline json artifact_to_json(const AttackArtifact& a) {
  json trace = json::array();
  for (const auto& r : a.trace) trace.push_back(trace_record_to_json(r));
  json config = optimizer_config_to_json(a.config);
  config["M"] = a.n_sets;
  config["m"] = a.m;
  config["question"] = a.question;
  config["target_response"] = a.target_response;
  return json{{"delta_ids", a.delta.tokens},
              {"delta_text", a.delta_text},
              {"attach", to_string(a.delta.mode)},
              {"split", a.delta.split},
              {"config", config},
              {"trace", trace},
              {"complete", a.complete},
              {"c_r_reached", a.c_r_reached}};
}

inline AttackArtifact artifact_from_json(const json& j, const Vocab& vocab) {
  AttackArtifact a;
  try {
    a.delta.tokens = j.at("delta_ids").get<TokenSeq>();
    a.delta.mode = attach_mode_from_string(j.at("attach").get<std::string>());
    a.delta.split = j.value("split", std::size_t{0});
    if (a.delta.mode == AttachMode::both && a.delta.split == 0) {
      a.delta.split = default_split(a.delta.tokens.size());
    }
    a.delta_text = j.value("delta_text", std::string{});
    a.complete = j.value("complete", false);
    a.c_r_reached = j.value("c_r_reached", std::size_t{1});
    if (j.contains("config")) {
      const auto& c = j["config"];
      a.config = optimizer_config_from_json(c);
      a.n_sets = c.value("M", std::size_t{0});
      a.m = c.value("m", std::size_t{0});
      a.question = c.value("question", std::string{});
      a.target_response = c.value("target_response", std::string{});
    }
    if (j.contains("trace")) {
      for (const auto& r : j["trace"]) a.trace.push_back(trace_record_from_json(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("artifact: ") + e.what());
  }
  a.delta.validate(vocab);
  return a;
}

inline std::set<TokenId> banned_ids(const Vocab& vocab, const OptimizerConfig& cfg) {
  std::set<TokenId> banned{vocab.pad_id(), vocab.bos_id(), vocab.unk_id()};
  for (const auto& t : cfg.banned_tokens) {
    if (vocab.contains(t)) banned.insert(vocab.id(t));
  }
  return banned;
}

using AttackProgress = std::function<void(const TraceRecord&)>;

/// Runs while C_R <= M and T_iter <= T. Each pass: gradients over the active
/// sets and all positions, Top-K per coordinate, a batch of single-token
/// substitutions, exact re-evaluation, then a success check that advances
/// C_R when every position of every active set is won.
inline AttackArtifact run_attack(const ModelBackend& backend, const AttackProblem& prob,
                                 const OptimizerConfig& cfg,
                                 std::optional<InjectedSequence> initial = std::nullopt,
                                 const AttackProgress& progress = {}) {
  cfg.validate();
  if (!prob.vocab) throw ValidationError("run_attack: missing vocab");
  const Vocab& vocab = *prob.vocab;
  const std::size_t M = prob.shadow_sets.size();
  if (M == 0) throw ValidationError("run_attack: need at least one shadow set");
  const std::size_t m = prob.shadow_sets.front().m();
  for (const auto& s : prob.shadow_sets) {
    if (s.m() != m) throw ValidationError("run_attack: shadow sets differ in size");
  }
  if (m > 9) throw ValidationError("run_attack: at most 9 candidates per set");

  InjectedSequence delta = initial ? *initial
                                   : init_sequence(cfg.init_kind, cfg.length, vocab, cfg.attach,
                                                   cfg.init_sentence);
  if (!initial && cfg.attach == AttachMode::both && cfg.split != 0) delta.split = cfg.split;
  delta.validate(vocab);
  if (delta.length() != cfg.length) throw ValidationError("run_attack: initial δ length != l");

  const auto banned = banned_ids(vocab, cfg);
  Rng rng(cfg.seed);
  AttackArtifact art;
  art.config = cfg;
  art.question = prob.question;
  art.target_response = prob.target_response;
  art.n_sets = M;
  art.m = m;

  std::size_t c_r = 1;
  std::size_t iter = 0;
  std::vector<AttackInstance> instances = build_instances(backend, prob, delta, c_r);
  while (c_r <= M && iter <= cfg.max_iters) {
    const auto grad = coordinate_gradients(backend, instances, delta, cfg.weights);
    const auto topk = select_topk(grad, cfg.top_k, banned);
    const auto batch = propose_batch(delta, topk, cfg.batch_size, rng, cfg.keep_incumbent);
    const auto sel = evaluate_and_select(backend, instances, batch, cfg.weights);
    const auto& chosen = batch[sel.best];
    delta = chosen.delta;

    TraceRecord rec;
    rec.iter = iter;
    rec.c_r = c_r;
    rec.loss = sel.losses[sel.best];
    rec.terms = sel.best_loss.summed();
    rec.pos = chosen.pos;
    rec.old_token = chosen.old_token;
    rec.new_token = chosen.new_token;
    rec.flags = success_check(backend, prob, c_r, delta, cfg.success_mode);
    rec.success = all_success(rec.flags);
    if (progress) progress(rec);
    art.trace.push_back(std::move(rec));

    if (art.trace.back().success) {
      ++c_r;
      if (c_r <= M) instances = build_instances(backend, prob, delta, c_r);
    }
    ++iter;
  }
  art.delta = delta;
  art.delta_text = decode(vocab, delta.tokens);
  art.complete = c_r > M;
  art.c_r_reached = std::min(c_r, M);
  return art;
}

}  // namespace judgelab

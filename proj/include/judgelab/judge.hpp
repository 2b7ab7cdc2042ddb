// LLM-as-a-judge prompt assembly, target judgments and decisions.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "judgelab/backend.hpp"
#include "judgelab/error.hpp"
#include "judgelab/io.hpp"
#include "judgelab/text.hpp"

namespace judgelab {

inline constexpr std::string_view kIndexSlot = "{k}";
inline constexpr std::string_view kTextSlot = "{text}";
inline constexpr std::string_view kDefaultTargetFormat = "Output ({k}) is better.";

namespace detail {

inline std::size_t count_occurrences(std::string_view s, std::string_view pat) {
  std::size_t n = 0;
  for (auto pos = s.find(pat); pos != std::string_view::npos; pos = s.find(pat, pos + pat.size())) {
    ++n;
  }
  return n;
}

inline std::string replace_all(std::string s, std::string_view pat, std::string_view with) {
  for (auto pos = s.find(pat); pos != std::string::npos; pos = s.find(pat, pos + with.size())) {
    s.replace(pos, pat.size(), with);
  }
  return s;
}

}  // namespace detail

/// Sandwich template: header and trailer instructions around the question and
/// the wrapped candidate responses.
struct JudgeTemplate {
  std::string header;
  std::string trailer;
  std::string wrapper = "Output ({k}): {text}";
  std::string target = std::string(kDefaultTargetFormat);

  void validate() const {
    if (header.empty() || trailer.empty()) {
      throw ValidationError("judge template: header and trailer must be non-empty");
    }
    if (detail::count_occurrences(wrapper, kIndexSlot) != 1 ||
        detail::count_occurrences(wrapper, kTextSlot) != 1) {
      throw ValidationError("judge template: wrapper needs exactly one {k} and one {text}");
    }
    if (detail::count_occurrences(target, kIndexSlot) != 1) {
      throw ValidationError("judge template: target needs exactly one {k}");
    }
  }
};

inline JudgeTemplate judge_template_from_json(const json& j) {
  JudgeTemplate t;
  try {
    t.header = j.at("header").get<std::string>();
    t.trailer = j.at("trailer").get<std::string>();
    if (j.contains("wrapper")) t.wrapper = j.at("wrapper").get<std::string>();
    if (j.contains("target")) t.target = j.at("target").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("judge template: ") + e.what());
  }
  t.validate();
  return t;
}

inline json judge_template_to_json(const JudgeTemplate& t) {
  return json{{"header", t.header}, {"trailer", t.trailer}, {"wrapper", t.wrapper},
              {"target", t.target}};
}

struct CandidateSet {
  std::string question;
  std::vector<std::string> responses;

  void validate() const {
    if (responses.size() < 2) throw ValidationError("candidate set needs at least 2 responses");
    for (const auto& r : responses) {
      if (r.empty()) throw ValidationError("candidate set contains an empty response");
    }
  }
};

/// An assembled prompt plus the offset where each response's own tokens begin.
struct PromptLayout {
  TokenSeq tokens;
  std::vector<std::size_t> response_begin;
};

/// bos + header + question + wrapper(1, r_1) + ... + wrapper(n, r_n) + trailer,
/// assembled at token level. Response tokens are inserted verbatim, so
/// callers may pass responses that already carry an injected sequence.
inline PromptLayout assemble_prompt_tokens(const Vocab& vocab, const JudgeTemplate& tmpl,
                                           std::string_view question,
                                           std::span<const TokenSeq> responses,
                                           std::size_t max_len) {
  tmpl.validate();
  PromptLayout out;
  out.tokens.push_back(vocab.bos_id());
  auto append = [&](const TokenSeq& s) { out.tokens.insert(out.tokens.end(), s.begin(), s.end()); };
  append(encode(vocab, tmpl.header));
  append(encode(vocab, question));
  const auto split = tmpl.wrapper.find(kTextSlot);
  const std::string before = tmpl.wrapper.substr(0, split);
  const std::string after = tmpl.wrapper.substr(split + kTextSlot.size());
  for (std::size_t k = 0; k < responses.size(); ++k) {
    const auto idx = std::to_string(k + 1);
    append(encode(vocab, detail::replace_all(before, kIndexSlot, idx)));
    out.response_begin.push_back(out.tokens.size());
    append(responses[k]);
    append(encode(vocab, detail::replace_all(after, kIndexSlot, idx)));
  }
  append(encode(vocab, tmpl.trailer));
  if (out.tokens.size() > max_len) {
    throw ValidationError("context overflow: assembled prompt has " +
                          std::to_string(out.tokens.size()) + " tokens, limit " +
                          std::to_string(max_len));
  }
  return out;
}

inline TokenSeq assemble_prompt(const Vocab& vocab, const JudgeTemplate& tmpl,
                                const CandidateSet& cs, std::size_t max_len) {
  cs.validate();
  std::vector<TokenSeq> rs;
  for (const auto& r : cs.responses) rs.push_back(encode(vocab, r));
  return assemble_prompt_tokens(vocab, tmpl, cs.question, rs, max_len).tokens;
}

struct TargetOutput {
  TokenSeq tokens;
  std::size_t index_token_pos = 0;
  std::size_t index = 0;

  std::size_t length() const { return tokens.size(); }
};

inline TargetOutput render_target_output(std::size_t k, const Vocab& vocab,
                                         std::string_view format = kDefaultTargetFormat) {
  if (k < 1 || k > 9) throw ValidationError("target index must be in [1, 9]");
  const std::string fmt(format);
  const auto slot = fmt.find(kIndexSlot);
  if (slot == std::string::npos) throw ValidationError("target format lacks {k}");
  const auto digit = std::to_string(k);
  TargetOutput t;
  t.tokens = encode(vocab, detail::replace_all(fmt, kIndexSlot, digit));
  t.index_token_pos = normalize_words(fmt.substr(0, slot)).size();
  t.index = k;
  if (t.index_token_pos >= t.tokens.size() || vocab.token(t.tokens[t.index_token_pos]) != digit) {
    throw ValidationError("target format must isolate the index as its own token");
  }
  if (vocab.token(t.tokens[t.index_token_pos]) == kUnkToken) {
    throw ValidationError("target index digit is out of vocabulary");
  }
  return t;
}

enum class DecisionMode { greedy, likelihood };

inline std::string to_string(DecisionMode m) {
  return m == DecisionMode::greedy ? "greedy" : "likelihood";
}

inline DecisionMode decision_mode_from_string(std::string_view s) {
  if (s == "greedy") return DecisionMode::greedy;
  if (s == "likelihood") return DecisionMode::likelihood;
  throw ValidationError("unknown decision mode '" + std::string(s) + "'");
}

struct JudgeDecision {
  std::optional<std::size_t> index;
  std::string raw;
  DecisionMode mode = DecisionMode::likelihood;
  std::vector<double> logprobs;  // likelihood mode only
};

/// First "output ( d ) is better" with 1 <= d <= n in the normalized text.
inline std::optional<std::size_t> parse_decision(std::string_view raw, std::size_t n) {
  const auto w = normalize_words(raw);
  for (std::size_t i = 0; i + 5 < w.size(); ++i) {
    if (w[i] != "output" || w[i + 1] != "(" || w[i + 3] != ")" || w[i + 4] != "is" ||
        w[i + 5] != "better") {
      continue;
    }
    const auto& d = w[i + 2];
    if (d.empty() || d.size() > 2 || d.find_first_not_of("0123456789") != std::string::npos) {
      continue;
    }
    const auto k = static_cast<std::size_t>(std::stoul(d));
    if (k >= 1 && k <= n) return k;
  }
  return std::nullopt;
}

/// 1-based argmax, lowest index on exact ties.
inline std::size_t decide_from_logprobs(std::span<const double> logprobs) {
  if (logprobs.empty()) throw ValidationError("no candidate log-probabilities");
  return argmax(logprobs) + 1;
}

inline constexpr std::size_t kGreedyMaxNew = 12;

inline JudgeDecision decide_prompt(const ModelBackend& backend, const Vocab& vocab,
                                   const JudgeTemplate& tmpl, std::span<const TokenId> prompt,
                                   std::size_t n, DecisionMode mode) {
  JudgeDecision d;
  d.mode = mode;
  if (mode == DecisionMode::greedy) {
    const auto out = backend.greedy_decode(prompt, kGreedyMaxNew, vocab.id("."));
    d.raw = decode(vocab, out);
    d.index = parse_decision(d.raw, n);
    return d;
  }
  for (std::size_t k = 1; k <= n; ++k) {
    const auto target = render_target_output(k, vocab, tmpl.target);
    d.logprobs.push_back(backend.seq_logprob(prompt, target.tokens));
  }
  d.index = decide_from_logprobs(d.logprobs);
  d.raw = decode(vocab, render_target_output(*d.index, vocab, tmpl.target).tokens);
  return d;
}

inline JudgeDecision decide(const ModelBackend& backend, const Vocab& vocab,
                            const JudgeTemplate& tmpl, const CandidateSet& cs, DecisionMode mode) {
  const auto prompt = assemble_prompt(vocab, tmpl, cs, backend.context_length());
  return decide_prompt(backend, vocab, tmpl, prompt, cs.responses.size(), mode);
}

}  // namespace judgelab

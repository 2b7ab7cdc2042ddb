// Shadow candidate responses: pools, deterministic synthesis and the shadow
// sets the optimizer trains against.
#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "judgelab/error.hpp"
#include "judgelab/io.hpp"
#include "judgelab/rng.hpp"
#include "judgelab/text.hpp"

namespace judgelab {

enum class Provenance { file, synth };

struct ShadowPool {
  std::string question;
  std::vector<std::string> responses;
  std::vector<Provenance> provenance;

  std::size_t size() const { return responses.size(); }
};

/// One record per line: {"question": str, "response": str}; all records share
/// the question and responses are distinct.
inline ShadowPool load_pool(const std::filesystem::path& path) {
  ShadowPool pool;
  std::set<std::string> seen;
  for (const auto& [lineno, rec] : read_jsonl(path)) {
    const auto where = path.string() + ": line " + std::to_string(lineno);
    if (!rec.is_object() || !rec.contains("question") || !rec["question"].is_string()) {
      throw ValidationError(where + ": missing \"question\"");
    }
    if (!rec.contains("response") || !rec["response"].is_string()) {
      throw ValidationError(where + ": missing \"response\"");
    }
    const auto q = rec["question"].get<std::string>();
    auto r = rec["response"].get<std::string>();
    if (pool.responses.empty()) {
      pool.question = q;
    } else if (q != pool.question) {
      throw ValidationError(where + ": mixed questions in one pool");
    }
    if (r.empty()) throw ValidationError(where + ": empty response");
    if (!seen.insert(r).second) throw ValidationError(where + ": duplicate response");
    pool.responses.push_back(std::move(r));
    pool.provenance.push_back(Provenance::file);
  }
  if (pool.responses.empty()) throw ValidationError(path.string() + ": empty pool");
  return pool;
}

inline std::string pool_to_jsonl(const ShadowPool& pool) {
  std::string out;
  for (const auto& r : pool.responses) {
    out += json{{"question", pool.question}, {"response", r}}.dump() + "\n";
  }
  return out;
}

/// Deterministic stand-in for rephrased generation prompts. Frames carry a
/// {kw} slot for the question keyword and {a}/{b} slots filled with two
/// distinct fillers.
struct GenTemplateSet {
  std::vector<std::string> frames;
  std::vector<std::string> fillers;
  std::vector<std::string> keywords;

  void validate() const {
    if (frames.empty()) throw ValidationError("template set needs at least one frame");
    if (fillers.size() < 2) throw ValidationError("template set needs at least two fillers");
    if (keywords.empty()) throw ValidationError("template set needs keywords");
  }

  std::size_t capacity() const { return frames.size() * fillers.size() * (fillers.size() - 1); }

  std::string render(std::size_t frame, const std::string& kw, std::size_t a,
                     std::size_t b) const {
    std::string s = frames[frame];
    auto sub = [&](std::string_view slot, const std::string& v) {
      for (auto pos = s.find(slot); pos != std::string::npos; pos = s.find(slot, pos + v.size())) {
        s.replace(pos, slot.size(), v);
      }
    };
    sub("{kw}", kw);
    sub("{a}", fillers[a]);
    sub("{b}", fillers[b]);
    return s;
  }

  /// Every distinct rendering for a keyword, in a fixed enumeration order.
  std::vector<std::string> enumerate(const std::string& kw) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (std::size_t a = 0; a < fillers.size(); ++a) {
        for (std::size_t b = 0; b < fillers.size(); ++b) {
          if (a == b) continue;
          auto s = render(f, kw, a, b);
          if (seen.insert(s).second) out.push_back(std::move(s));
        }
      }
    }
    return out;
  }
};

/// First token of the question that is a known keyword.
inline std::string question_keyword(std::string_view question, const GenTemplateSet& t) {
  for (const auto& w : normalize_words(question)) {
    if (std::find(t.keywords.begin(), t.keywords.end(), w) != t.keywords.end()) return w;
  }
  throw ValidationError("question has no known keyword: " + std::string(question));
}

/// N distinct responses restating the question keyword, drawn by a seeded
/// shuffle of every template rendering.
inline ShadowPool synth_pool(const std::string& question, std::size_t n, const GenTemplateSet& t,
                             std::uint64_t seed) {
  t.validate();
  if (n == 0) throw ValidationError("synth_pool: N must be >= 1");
  auto all = t.enumerate(question_keyword(question, t));
  if (n > all.size()) {
    throw ValidationError("synth_pool: N=" + std::to_string(n) + " exceeds the " +
                          std::to_string(all.size()) + " distinct renderings");
  }
  Rng rng(seed);
  rng.shuffle(all);
  all.resize(n);
  ShadowPool pool{question, std::move(all), std::vector<Provenance>(n, Provenance::synth)};
  return pool;
}

/// m - 1 shadow responses; the target response is placed at positional
/// enumeration time.
struct ShadowSet {
  std::vector<std::string> shadows;

  std::size_t m() const { return shadows.size() + 1; }

  /// Candidate list with the target at 1-based position t.
  std::vector<std::string> arrange(const std::string& target, std::size_t t) const {
    if (t < 1 || t > m()) throw ValidationError("target position out of range");
    std::vector<std::string> out = shadows;
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(t - 1), target);
    return out;
  }
};

/// M sets of m - 1 distinct pool responses each (responses equal to the target
/// are skipped). Sets may share responses with each other.
inline std::vector<ShadowSet> build_shadow_sets(const ShadowPool& pool,
                                                const std::string& target_response,
                                                std::size_t M, std::size_t m, std::uint64_t seed) {
  if (M == 0) throw ValidationError("build_shadow_sets: M must be >= 1");
  if (m == 0) throw ValidationError("build_shadow_sets: m must be >= 1");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.responses.size(); ++i) {
    if (pool.responses[i] != target_response) eligible.push_back(i);
  }
  if (eligible.size() < m - 1) {
    throw ValidationError("build_shadow_sets: pool has " + std::to_string(eligible.size()) +
                          " usable responses, need " + std::to_string(m - 1));
  }
  Rng rng(seed);
  std::vector<ShadowSet> sets(M);
  for (auto& set : sets) {
    auto idx = eligible;
    rng.shuffle(idx);
    for (std::size_t k = 0; k + 1 < m; ++k) set.shadows.push_back(pool.responses[idx[k]]);
  }
  return sets;
}

}  // namespace judgelab

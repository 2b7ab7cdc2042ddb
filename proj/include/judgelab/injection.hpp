// The injected sequence and how it is attached to a target response.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "judgelab/error.hpp"
#include "judgelab/text.hpp"

namespace judgelab {

enum class AttachMode { suffix, prefix, both };

inline std::string to_string(AttachMode m) {
  switch (m) {
    case AttachMode::suffix: return "suffix";
    case AttachMode::prefix: return "prefix";
    case AttachMode::both: return "both";
  }
  return "suffix";
}

inline AttachMode attach_mode_from_string(std::string_view s) {
  if (s == "suffix") return AttachMode::suffix;
  if (s == "prefix") return AttachMode::prefix;
  if (s == "both") return AttachMode::both;
  throw ValidationError("unknown attach mode '" + std::string(s) + "'");
}

/// Split point for AttachMode::both when none is given: ceil(l / 2).
inline std::size_t default_split(std::size_t l) { return (l + 1) / 2; }

struct InjectedSequence {
  TokenSeq tokens;
  AttachMode mode = AttachMode::suffix;
  std::size_t split = 0;  // both: tokens[0, split) lead, tokens[split, l) trail

  std::size_t length() const { return tokens.size(); }

  /// Number of leading δ tokens placed before the response.
  std::size_t lead() const {
    switch (mode) {
      case AttachMode::suffix: return 0;
      case AttachMode::prefix: return tokens.size();
      case AttachMode::both: return split;
    }
    return 0;
  }

  void validate(const Vocab& vocab) const {
    if (tokens.empty()) throw ValidationError("injected sequence must have at least one token");
    for (auto t : tokens) {
      if (t >= vocab.size()) throw ValidationError("invalid token id");
      if (vocab.is_special(t)) throw ValidationError("injected sequence contains a special token");
    }
    if (mode == AttachMode::both && (split < 1 || split >= tokens.size())) {
      throw ValidationError("attach mode 'both' needs 1 <= split < l");
    }
  }
};

inline InjectedSequence make_injected(TokenSeq tokens, AttachMode mode) {
  InjectedSequence s{std::move(tokens), mode, 0};
  if (mode == AttachMode::both) s.split = default_split(s.tokens.size());
  return s;
}

/// Response with δ attached. `spans` holds (offset, length) of each δ piece
/// relative to the start of `tokens`; pieces appear in δ order.
struct AttachedResponse {
  TokenSeq tokens;
  std::vector<std::pair<std::size_t, std::size_t>> spans;

  /// Offset inside `tokens` of δ's j-th token.
  std::size_t delta_offset(std::size_t j) const {
    for (const auto& [off, len] : spans) {
      if (j < len) return off + j;
      j -= len;
    }
    throw ValidationError("delta index out of range");
  }
};

inline AttachedResponse attach(std::span<const TokenId> response, const InjectedSequence& delta) {
  AttachedResponse out;
  const auto& d = delta.tokens;
  const std::size_t lead = delta.lead();
  const std::size_t trail = d.size() - lead;
  out.tokens.insert(out.tokens.end(), d.begin(), d.begin() + static_cast<std::ptrdiff_t>(lead));
  out.tokens.insert(out.tokens.end(), response.begin(), response.end());
  out.tokens.insert(out.tokens.end(), d.begin() + static_cast<std::ptrdiff_t>(lead), d.end());
  if (lead > 0) out.spans.emplace_back(0, lead);
  if (trail > 0) out.spans.emplace_back(lead + response.size(), trail);
  return out;
}

enum class InitKind { word, character, sentence };

inline std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::word: return "word";
    case InitKind::character: return "character";
    case InitKind::sentence: return "sentence";
  }
  return "word";
}

inline InitKind init_kind_from_string(std::string_view s) {
  if (s == "word") return InitKind::word;
  if (s == "character") return InitKind::character;
  if (s == "sentence") return InitKind::sentence;
  throw ValidationError("unknown init kind '" + std::string(s) + "'");
}

inline constexpr std::string_view kWordSeed = "correct";
inline constexpr std::string_view kCharacterSeed = "!";

/// word: l x "correct"; character: l x "!"; sentence: the first l tokens of
/// `sentence`, padded by repeating its last token.
inline InjectedSequence init_sequence(InitKind kind, std::size_t l, const Vocab& vocab,
                                      AttachMode mode = AttachMode::suffix,
                                      std::string_view sentence = {}) {
  if (l == 0) throw ValidationError("injected sequence length must be >= 1");
  auto seed_id = [&](std::string_view tok) {
    const TokenId id = vocab.id(tok);
    if (id == vocab.unk_id()) throw ValidationError("seed token out of vocabulary");
    return id;
  };
  TokenSeq tokens;
  switch (kind) {
    case InitKind::word:
      tokens.assign(l, seed_id(kWordSeed));
      break;
    case InitKind::character:
      tokens.assign(l, seed_id(kCharacterSeed));
      break;
    case InitKind::sentence: {
      const auto words = normalize_words(sentence);
      if (words.empty()) throw ValidationError("sentence initialization needs a seed sentence");
      for (std::size_t i = 0; i < l; ++i) {
        tokens.push_back(seed_id(words[std::min(i, words.size() - 1)]));
      }
      break;
    }
  }
  auto seq = make_injected(std::move(tokens), mode);
  if (mode == AttachMode::both && l < 2) {
    throw ValidationError("attach mode 'both' needs l >= 2");
  }
  return seq;
}

}  // namespace judgelab

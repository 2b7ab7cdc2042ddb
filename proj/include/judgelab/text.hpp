// Word-level tokenizer and vocabulary shared by every judgelab module.
#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "judgelab/error.hpp"

namespace judgelab {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kUnkToken = "<unk>";

inline bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case '(': case ')':
    case '"': case '\'': case ':': case ';':
      return true;
    default:
      return false;
  }
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

/// Lowercases ASCII, splits on whitespace and isolates the punctuation marks
/// . , ! ? ( ) " ' : ; as standalone tokens.
inline std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
    }
  }
  flush();
  return out;
}

class Vocab {
 public:
  Vocab() = default;

  /// Builds from an explicit token list; the first three entries must be the
  /// specials in the order given by pad/bos/unk ids.
  Vocab(std::vector<std::string> tokens, TokenId pad, TokenId bos, TokenId unk)
      : tokens_(std::move(tokens)), pad_(pad), bos_(bos), unk_(unk) {
    const auto n = tokens_.size();
    if (pad_ >= n || bos_ >= n || unk_ >= n || pad_ == bos_ || pad_ == unk_ ||
        bos_ == unk_) {
      throw ValidationError("vocab special ids must be distinct and in range");
    }
    for (TokenId i = 0; i < n; ++i) {
      if (tokens_[i].empty()) throw ValidationError("vocab contains an empty token");
      if (!ids_.emplace(tokens_[i], i).second) {
        throw ValidationError("vocab contains duplicate token '" + tokens_[i] + "'");
      }
    }
  }

  std::size_t size() const { return tokens_.size(); }
  TokenId pad_id() const { return pad_; }
  TokenId bos_id() const { return bos_; }
  TokenId unk_id() const { return unk_; }
  bool is_special(TokenId id) const { return id == pad_ || id == bos_ || id == unk_; }

  const std::vector<std::string>& tokens() const { return tokens_; }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw ValidationError("invalid token id");
    return tokens_[id];
  }

  /// Id of an exact surface token, or unk.
  TokenId id(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    return it == ids_.end() ? unk_ : it->second;
  }

  bool contains(std::string_view tok) const { return ids_.count(std::string(tok)) != 0; }

  bool operator==(const Vocab& o) const {
    return tokens_ == o.tokens_ && pad_ == o.pad_ && bos_ == o.bos_ && unk_ == o.unk_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId pad_ = 0, bos_ = 1, unk_ = 2;
};

/// Specials first (pad, bos, unk), then every distinct normalized token in
/// byte-lexicographic order.
inline Vocab build_vocab(std::span<const std::string> corpus) {
  std::set<std::string> words;
  for (const auto& doc : corpus) {
    for (auto& w : normalize_words(doc)) words.insert(std::move(w));
  }
  if (words.empty()) throw ValidationError("empty corpus");
  words.erase(std::string(kPadToken));
  words.erase(std::string(kBosToken));
  words.erase(std::string(kUnkToken));
  std::vector<std::string> tokens{std::string(kPadToken), std::string(kBosToken),
                                  std::string(kUnkToken)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocab(std::move(tokens), 0, 1, 2);
}

inline Vocab build_vocab(std::initializer_list<std::string> corpus) {
  std::vector<std::string> docs(corpus);
  return build_vocab(std::span<const std::string>(docs));
}

/// No bos is prepended; out-of-vocabulary words map to unk.
inline TokenSeq encode(const Vocab& vocab, std::string_view text) {
  TokenSeq out;
  for (const auto& w : normalize_words(text)) out.push_back(vocab.id(w));
  return out;
}

inline std::string decode(const Vocab& vocab, std::span<const TokenId> seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(seq[i]);
  }
  return out;
}

/// Normalized form of text: its tokens joined by single spaces.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : normalize_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

inline void validate_seq(const Vocab& vocab, std::span<const TokenId> seq) {
  for (auto id : seq) {
    if (id >= vocab.size()) throw ValidationError("invalid token id");
  }
}

inline TokenSeq concat(std::initializer_list<std::span<const TokenId>> parts) {
  TokenSeq out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace judgelab

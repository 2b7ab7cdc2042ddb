// Manual prompt-injection baselines. The strings live in data/baselines.json;
// this header only loads them and fills in the answer index.
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>

#include "judgelab/error.hpp"
#include "judgelab/io.hpp"

namespace judgelab {

enum class BaselineKind {
  naive,
  escape_characters,
  context_ignore,
  fake_completion,
  combined,
  fake_reasoning
};

inline constexpr std::array<BaselineKind, 6> kAllBaselines{
    BaselineKind::naive,           BaselineKind::escape_characters, BaselineKind::context_ignore,
    BaselineKind::fake_completion, BaselineKind::combined,          BaselineKind::fake_reasoning};

inline std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::naive: return "naive";
    case BaselineKind::escape_characters: return "escape_characters";
    case BaselineKind::context_ignore: return "context_ignore";
    case BaselineKind::fake_completion: return "fake_completion";
    case BaselineKind::combined: return "combined";
    case BaselineKind::fake_reasoning: return "fake_reasoning";
  }
  return "naive";
}

inline BaselineKind baseline_kind_from_string(std::string_view s) {
  for (auto k : kAllBaselines) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown baseline kind '" + std::string(s) + "'");
}

inline constexpr std::string_view kIndexPlaceholder = "{this index}";

class BaselineTable {
 public:
  explicit BaselineTable(const json& j) {
    for (auto k : kAllBaselines) {
      const auto key = to_string(k);
      if (!j.contains(key) || !j[key].is_string()) {
        throw ValidationError("baseline table lacks '" + key + "'");
      }
      templates_[k] = j[key].get<std::string>();
    }
  }

  static BaselineTable load(const std::filesystem::path& path) { return BaselineTable(read_json(path)); }

  const std::string& raw(BaselineKind k) const { return templates_.at(k); }

  bool has_index_slot(BaselineKind k) const {
    return raw(k).find(kIndexPlaceholder) != std::string::npos;
  }

  /// The baseline string with "{this index}" replaced by k. Kinds without an
  /// index slot ignore k.
  std::string text(BaselineKind kind, std::size_t k) const {
    std::string s = raw(kind);
    const auto pos = s.find(kIndexPlaceholder);
    if (pos == std::string::npos) return s;
    if (k < 1) throw ValidationError("baseline index must be >= 1");
    s.replace(pos, kIndexPlaceholder.size(), std::to_string(k));
    return s;
  }

 private:
  std::map<BaselineKind, std::string> templates_;
};

}  // namespace judgelab

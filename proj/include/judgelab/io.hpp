// File helpers and JSON conversions for the plain data types.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "judgelab/error.hpp"
#include "judgelab/text.hpp"
#include "judgelab/tinylm.hpp"

namespace judgelab {

using nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

/// Non-empty, trimmed lines of a JSONL file paired with 1-based line numbers.
inline std::vector<std::pair<std::size_t, json>> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<std::size_t, json>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.emplace_back(lineno, json::parse(line));
    } catch (const json::parse_error&) {
      throw ValidationError(path.string() + ": malformed JSON at line " + std::to_string(lineno));
    }
  }
  return out;
}

inline json vocab_to_json(const Vocab& v) {
  return json{{"tokens", v.tokens()}, {"pad", v.pad_id()}, {"bos", v.bos_id()}, {"unk", v.unk_id()}};
}

inline Vocab vocab_from_json(const json& j) {
  try {
    return Vocab(j.at("tokens").get<std::vector<std::string>>(), j.at("pad").get<TokenId>(),
                 j.at("bos").get<TokenId>(), j.at("unk").get<TokenId>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("vocab json: ") + e.what());
  }
}

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},         {"ctx_len", c.ctx_len},       {"vocab_size", c.vocab_size},
              {"seed", c.seed},         {"init_std", c.init_std}};
}

/// Missing keys keep their defaults.
inline ModelConfig model_config_from_json(const json& j, ModelConfig c = {}) {
  try {
    if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<std::size_t>();
    if (j.contains("d_model")) c.d_model = j.at("d_model").get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<std::size_t>();
    if (j.contains("d_ff")) c.d_ff = j.at("d_ff").get<std::size_t>();
    if (j.contains("ctx_len")) c.ctx_len = j.at("ctx_len").get<std::size_t>();
    if (j.contains("vocab_size")) c.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("init_std")) c.init_std = j.at("init_std").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace judgelab

// Checkpoint container:
//
//   "TINYLM1\n"                  8 bytes magic
//   manifest length              uint64, little-endian
//   manifest                     JSON {"config":{...}, "tensors":[{"name","shape","offset"}]}
//   payload                      float32 little-endian; offsets are in bytes from payload start
#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>

#include "judgelab/io.hpp"
#include "judgelab/tinylm.hpp"

namespace judgelab {

inline constexpr std::string_view kCheckpointMagic = "TINYLM1\n";

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xffU));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return x;
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return x;
}

}  // namespace detail

inline std::string serialize_checkpoint(const ModelParams& p) {
  json tensors = json::array();
  for (const auto& t : p.layout.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset * 4}});
  }
  const std::string manifest =
      json{{"config", model_config_to_json(p.config)}, {"tensors", tensors}}.dump();
  std::string out(kCheckpointMagic);
  const std::uint64_t len = manifest.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xffU));
  out += manifest;
  out.reserve(out.size() + p.values.size() * 4);
  for (double v : p.values) {
    detail::put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline ModelParams deserialize_checkpoint(std::string_view bytes) {
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kCheckpointMagic.size() + 8 ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw ValidationError("checkpoint: bad magic, expected TINYLM1");
  }
  const std::uint64_t mlen = detail::get_u64_le(u + kCheckpointMagic.size());
  const std::size_t mstart = kCheckpointMagic.size() + 8;
  if (mlen > bytes.size() - mstart) throw ValidationError("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(mstart, mlen));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  ModelConfig config;
  try {
    config = model_config_from_json(manifest.at("config"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  config.validate();
  ModelParams p{config, ParamLayout::build(config), {}};

  json tensors;
  try {
    tensors = manifest.at("tensors");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (!tensors.is_array() || tensors.size() != p.layout.tensors.size()) {
    throw ValidationError("checkpoint: tensor count does not match config");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& expect = p.layout.tensors[i];
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    try {
      name = tensors[i].at("name").get<std::string>();
      shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
      offset = tensors[i].at("offset").get<std::size_t>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("checkpoint: bad tensor entry: ") + e.what());
    }
    if (name != expect.name) {
      throw ValidationError("checkpoint: unexpected tensor '" + name + "', wanted '" +
                            expect.name + "'");
    }
    if (shape != expect.shape) {
      throw ValidationError("checkpoint: shape mismatch for tensor '" + name + "'");
    }
    if (offset != expect.offset * 4) {
      throw ValidationError("checkpoint: offset mismatch for tensor '" + name + "'");
    }
  }
  const std::size_t pstart = mstart + mlen;
  const std::size_t need = p.layout.total * 4;
  if (bytes.size() - pstart != need) {
    throw ValidationError("checkpoint: payload is " + std::to_string(bytes.size() - pstart) +
                          " bytes, expected " + std::to_string(need));
  }
  p.values.resize(p.layout.total);
  for (std::size_t i = 0; i < p.layout.total; ++i) {
    p.values[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32_le(u + pstart + 4 * i)));
  }
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace judgelab

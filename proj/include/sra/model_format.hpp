#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sra/model.hpp"

namespace sra {

using Bytes = std::vector<std::uint8_t>;

inline constexpr char kModelMagic[8] = {'S', 'R', 'A', 'M', 'O', 'D', 'L', '\0'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Location of one parameter element: layer index, role, flat element index.
struct ParamPath {
  Index layer = 0;
  ParamRole role = ParamRole::weight;
  Index element = 0;
};

/// Header-level view of a serialized model, obtained without touching the
/// parameter values.
struct ModelFileInfo {
  Arch arch;
  std::map<std::string, std::string> meta;
  std::size_t param_block_offset = 0;  // absolute byte offset of the parameter block
  std::uint64_t param_count = 0;
};

Bytes serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
ModelFileInfo inspect_model(std::span<const std::uint8_t> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// Byte offset of an element relative to the start of the parameter block.
/// Throws SpecError for a path that does not exist in `arch`.
std::uint64_t param_offset(const Arch& arch, const ParamPath& path);

/// CRC-32 (zlib polynomial) over the parameter block bytes.
std::uint32_t param_block_checksum(std::span<const std::uint8_t> block);

/// Rewrites the trailing checksum of a serialized model in place.
void refresh_checksum(Bytes& file);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Little-endian scalar helpers shared by the binary formats.
void put_u32(Bytes& out, std::uint32_t v);
void put_u64(Bytes& out, std::uint64_t v);
void put_f32(Bytes& out, float v);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at);
std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at);
float get_f32(std::span<const std::uint8_t> in, std::size_t at);
std::uint32_t float_bits(float v);

}  // namespace sra

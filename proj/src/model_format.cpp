#include "sra/model_format.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sra {

namespace {

constexpr std::size_t kPreambleSize = 16;  // magic + version + header length

std::string header_text(const Model& model) {
  std::string text = arch_to_text(model.arch);
  for (const auto& [key, value] : model.meta) {
    if (key.empty() || key.find_first_of(" \t\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw FormatError("meta entries must be single-line with a whitespace-free key");
    }
    text += "meta " + key + " " + value + "\n";
  }
  return text;
}

void need(std::span<const std::uint8_t> bytes, std::size_t end, const char* what) {
  if (bytes.size() < end) throw TruncatedFileError(std::string("model file truncated in ") + what);
}

}  // namespace

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t float_bits(float v) { return std::bit_cast<std::uint32_t>(v); }

void put_f32(Bytes& out, float v) { put_u32(out, float_bits(v)); }

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

float get_f32(std::span<const std::uint8_t> in, std::size_t at) {
  return std::bit_cast<float>(get_u32(in, at));
}

std::uint32_t param_block_checksum(std::span<const std::uint8_t> block) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large blocks in pieces.
  std::size_t done = 0;
  while (done < block.size()) {
    const std::size_t len = std::min<std::size_t>(block.size() - done, 1u << 30);
    crc = crc32(crc, block.data() + done, static_cast<uInt>(len));
    done += len;
  }
  return static_cast<std::uint32_t>(crc);
}

Bytes serialize_model(const Model& model) {
  validate(model.arch);
  const auto layout = param_layout(model.arch);
  if (layout.size() != model.params.size()) throw ShapeError("parameter set does not match architecture");
  const std::string header = header_text(model);
  Bytes out;
  const auto total = static_cast<std::size_t>(param_count(model.arch));
  out.reserve(kPreambleSize + header.size() + 12 + 4 * total);
  out.insert(out.end(), std::begin(kModelMagic), std::end(kModelMagic));
  put_u32(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  put_u64(out, total);
  const std::size_t block_start = out.size();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& p = model.params[i];
    if (p.info.name() != layout[i].name() || p.value.shape() != layout[i].shape) {
      throw ShapeError("parameter " + p.info.name() + " out of canonical order or misshapen");
    }
    for (Index k = 0; k < p.value.size(); ++k) put_f32(out, p.value[k]);
  }
  const std::uint32_t crc = param_block_checksum(std::span(out).subspan(block_start));
  put_u32(out, crc);
  return out;
}

ModelFileInfo inspect_model(std::span<const std::uint8_t> bytes) {
  need(bytes, kPreambleSize, "preamble");
  if (std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0) {
    throw BadMagicError("not a model file (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kModelFormatVersion) {
    throw VersionMismatchError("model format version " + std::to_string(version) + ", expected " +
                               std::to_string(kModelFormatVersion));
  }
  const std::uint32_t header_len = get_u32(bytes, 12);
  need(bytes, kPreambleSize + header_len + 8, "header");
  std::string header(reinterpret_cast<const char*>(bytes.data() + kPreambleSize), header_len);

  ModelFileInfo info;
  const auto end_pos = header.find("\nend\n");
  if (end_pos == std::string::npos) throw FormatError("architecture block not terminated");
  info.arch = arch_from_text(std::string_view(header).substr(0, end_pos + 5));
  std::istringstream meta(header.substr(end_pos + 5));
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    if (!line.starts_with("meta ")) throw FormatError("unexpected header line: " + line);
    const auto sep = line.find(' ', 5);
    if (sep == std::string::npos) throw FormatError("meta line without value: " + line);
    info.meta[line.substr(5, sep - 5)] = line.substr(sep + 1);
  }
  info.param_count = get_u64(bytes, kPreambleSize + header_len);
  info.param_block_offset = kPreambleSize + header_len + 8;
  if (info.param_count != static_cast<std::uint64_t>(param_count(info.arch))) {
    throw FormatError("parameter count in header disagrees with architecture");
  }
  need(bytes, info.param_block_offset + 4 * info.param_count + 4, "parameter block");
  if (bytes.size() != info.param_block_offset + 4 * info.param_count + 4) {
    throw FormatError("trailing bytes after checksum");
  }
  return info;
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  ModelFileInfo info = inspect_model(bytes);
  const auto block = bytes.subspan(info.param_block_offset, 4 * info.param_count);
  const std::uint32_t stored = get_u32(bytes, info.param_block_offset + block.size());
  if (param_block_checksum(block) != stored) throw ChecksumMismatchError("parameter block checksum mismatch");
  Model model{info.arch, ParamSet<float>::zeros(info.arch), std::move(info.meta)};
  std::size_t at = 0;
  for (auto& p : model.params) {
    for (Index k = 0; k < p.value.size(); ++k, at += 4) p.value[k] = get_f32(block, at);
  }
  return model;
}

void refresh_checksum(Bytes& file) {
  const ModelFileInfo info = inspect_model(file);
  const auto block = std::span<const std::uint8_t>(file).subspan(info.param_block_offset, 4 * info.param_count);
  const std::uint32_t crc = param_block_checksum(block);
  const std::size_t at = info.param_block_offset + block.size();
  for (int i = 0; i < 4; ++i) file[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
}

std::uint64_t param_offset(const Arch& arch, const ParamPath& path) {
  std::uint64_t offset = 0;
  for (const auto& info : param_layout(arch)) {
    if (info.layer == path.layer && info.role == path.role) {
      if (path.element < 0 || path.element >= info.size()) {
        throw SpecError("element " + std::to_string(path.element) + " outside " + info.name());
      }
      return offset + 4 * static_cast<std::uint64_t>(path.element);
    }
    offset += 4 * static_cast<std::uint64_t>(info.size());
  }
  throw SpecError("architecture has no parameter " + std::string(to_string(path.role)) + " at layer " +
                  std::to_string(path.layer));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace sra

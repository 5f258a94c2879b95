#include "sra/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <numeric>

#include "sra/errors.hpp"
#include "sra/model_format.hpp"

namespace sra {

namespace {

// Reads a file, inflating it when gzip-compressed (gzread passes plain files
// through unchanged).
Bytes read_maybe_gz(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing dataset file " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  Bytes out;
  std::uint8_t buf[1 << 16];
  int got = 0;
  while ((got = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + got);
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw TruncatedFileError("corrupt compressed stream in " + path.string());
  return out;
}

std::uint32_t be32(const Bytes& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

std::string checksum_line(const std::filesystem::path& path, const Bytes& bytes) {
  return path.filename().string() + " crc32=" + hash_hex(param_block_checksum(bytes)).substr(8);
}

std::filesystem::path with_gz_fallback(const std::filesystem::path& p) {
  if (std::filesystem::exists(p)) return p;
  std::filesystem::path gz = p;
  gz += ".gz";
  return std::filesystem::exists(gz) ? gz : p;
}

}  // namespace

DatasetFormat parse_dataset_format(const std::string& s) {
  if (s == "idx") return DatasetFormat::idx;
  if (s == "cifar-bin" || s == "cifar") return DatasetFormat::cifar_bin;
  throw ConfigError("unknown dataset format '" + s + "' (expected idx or cifar-bin)");
}

Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const std::string& split) {
  const Bytes ib = read_maybe_gz(images);
  const Bytes lb = read_maybe_gz(labels);
  if (ib.size() < 16) throw TruncatedFileError("IDX image header truncated in " + images.string());
  if (lb.size() < 8) throw TruncatedFileError("IDX label header truncated in " + labels.string());
  if (be32(ib, 0) != 0x00000803) throw BadMagicError("bad IDX image magic in " + images.string());
  if (be32(lb, 0) != 0x00000801) throw BadMagicError("bad IDX label magic in " + labels.string());
  const Index n = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12);
  if (n == 0 || h == 0 || w == 0) throw FormatError("IDX image file has an empty dimension");
  if (static_cast<Index>(be32(lb, 4)) != n) throw FormatError("IDX image and label counts differ");
  if (static_cast<Index>(ib.size()) < 16 + n * h * w) throw TruncatedFileError("IDX image data truncated in " + images.string());
  if (static_cast<Index>(lb.size()) < 8 + n) throw TruncatedFileError("IDX label data truncated in " + labels.string());

  Dataset d;
  d.split = split;
  d.images = Tensor<float>({n, 1, h, w});
  for (Index i = 0; i < n * h * w; ++i) d.images[i] = ib[static_cast<std::size_t>(16 + i)] / 255.0f;
  d.labels.resize(static_cast<std::size_t>(n));
  int max_label = 0;
  for (Index i = 0; i < n; ++i) {
    d.labels[static_cast<std::size_t>(i)] = lb[static_cast<std::size_t>(8 + i)];
    max_label = std::max(max_label, d.labels[static_cast<std::size_t>(i)]);
  }
  d.classes = std::max(10, max_label + 1);
  d.checksums = {checksum_line(images, ib), checksum_line(labels, lb)};
  return d;
}

Dataset ingest_cifar(const std::vector<std::filesystem::path>& files, const std::string& split) {
  constexpr Index kRecord = 1 + 3 * 32 * 32;
  std::vector<Bytes> raw;
  Index n = 0;
  Dataset d;
  d.split = split;
  for (const auto& f : files) {
    raw.push_back(read_maybe_gz(f));
    const Index size = static_cast<Index>(raw.back().size());
    if (size == 0 || size % kRecord != 0) {
      throw TruncatedFileError("CIFAR batch " + f.string() + " is not a whole number of 3073-byte records");
    }
    n += size / kRecord;
    d.checksums.push_back(checksum_line(f, raw.back()));
  }
  if (n == 0) throw ConfigError("no CIFAR batch files given");
  d.images = Tensor<float>({n, 3, 32, 32});
  d.labels.reserve(static_cast<std::size_t>(n));
  Index at = 0;
  for (const Bytes& b : raw) {
    for (std::size_t r = 0; r < b.size(); r += kRecord, ++at) {
      if (b[r] > 9) throw FormatError("CIFAR label out of range");
      d.labels.push_back(b[r]);
      for (Index k = 0; k < kRecord - 1; ++k) d.images[at * (kRecord - 1) + k] = b[r + 1 + static_cast<std::size_t>(k)] / 255.0f;
    }
  }
  return d;
}

Dataset ingest(const std::filesystem::path& path, DatasetFormat format, const std::string& split) {
  if (format == DatasetFormat::cifar_bin) return ingest_cifar({path}, split);
  if (std::filesystem::is_directory(path)) {
    return ingest_idx(with_gz_fallback(path / (split + "-images-idx3-ubyte")),
                      with_gz_fallback(path / (split + "-labels-idx1-ubyte")), split);
  }
  std::string name = path.filename().string();
  const auto pos = name.find("images-idx3");
  if (pos == std::string::npos) throw ConfigError("cannot locate the IDX labels file for " + path.string());
  name.replace(pos, std::strlen("images-idx3"), "labels-idx1");
  return ingest_idx(path, path.parent_path() / name, split);
}

Tensor<float> gather_images(const Tensor<float>& images, const std::vector<Index>& idx) {
  if (idx.empty()) throw ShapeError("cannot gather an empty batch");
  Shape shape = images.shape();
  const Index row = images.size() / shape[0];
  shape[0] = static_cast<Index>(idx.size());
  Tensor<float> out(shape);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= images.dim(0)) throw ShapeError("sample index out of range");
    std::copy_n(images.data() + idx[k] * row, row, out.data() + static_cast<Index>(k) * row);
  }
  return out;
}

Dataset subset(const Dataset& d, const std::vector<Index>& idx) {
  Dataset out;
  out.split = d.split;
  out.classes = d.classes;
  out.checksums = d.checksums;
  out.images = gather_images(d.images, idx);
  out.labels.reserve(idx.size());
  for (Index i : idx) out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  return out;
}

Dataset take(const Dataset& d, Index first, Index count) {
  if (first < 0 || count <= 0 || first + count > d.size()) throw ShapeError("dataset slice out of range");
  std::vector<Index> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), first);
  return subset(d, idx);
}

std::vector<Index> shuffled_indices(Index n, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(uniform_int(rng, 0, i))]);
  return idx;
}

}  // namespace sra

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sra/random.hpp"
#include "sra/tensor.hpp"

namespace sra {

enum class DatasetFormat { idx, cifar_bin };

DatasetFormat parse_dataset_format(const std::string& s);

/// Images are NCHW floats in [0,1]; labels are 0-based class indices.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::string split;
  int classes = 10;
  std::vector<std::string> checksums;  // "<file> crc32=<hex>" per source file

  Index size() const { return images.empty() ? 0 : images.dim(0); }
  Index channels() const { return images.dim(1); }
  Index height() const { return images.dim(2); }
  Index width() const { return images.dim(3); }
};

/// IDX: `path` is either a directory holding `<split>-images-idx3-ubyte` and
/// `<split>-labels-idx1-ubyte` (optionally .gz), or the images file itself,
/// with the labels file found by replacing "images-idx3" with "labels-idx1".
/// CIFAR binary: `path` is one batch file of 3073-byte records.
Dataset ingest(const std::filesystem::path& path, DatasetFormat format, const std::string& split = "train");
Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const std::string& split);
Dataset ingest_cifar(const std::vector<std::filesystem::path>& files, const std::string& split);

/// Rows `idx` of the dataset, in that order.
Dataset subset(const Dataset& d, const std::vector<Index>& idx);
Dataset take(const Dataset& d, Index first, Index count);
Tensor<float> gather_images(const Tensor<float>& images, const std::vector<Index>& idx);

/// Seeded permutation of 0..n-1.
std::vector<Index> shuffled_indices(Index n, Rng& rng);

}  // namespace sra

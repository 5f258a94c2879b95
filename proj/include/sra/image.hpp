#pragma once

#include <filesystem>
#include <optional>

#include "sra/tensor.hpp"

namespace sra {

/// Planar image: pixels (C,H,W) in [0,1], optional alpha (H,W) in [0,1].
struct Image {
  Tensor<float> pixels;
  std::optional<Tensor<float>> alpha;
};

/// Reads binary Netpbm: PGM (P5), PPM (P6) and PAM (P7, GRAYSCALE, RGB and
/// their _ALPHA variants). Maxval up to 255.
Image read_image(const std::filesystem::path& path);

/// Writes PGM/PPM, or PAM when an alpha plane is given.
void write_image(const std::filesystem::path& path, const Tensor<float>& pixels,
                 const Tensor<float>* alpha = nullptr);

/// Resamples a (C,H,W) or (H,W) tensor. Downscaling averages a supersampled
/// grid inside each output pixel; equal sizes return the input unchanged.
Tensor<float> resize(const Tensor<float>& image, Index height, Index width);

}  // namespace sra

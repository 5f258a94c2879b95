#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sra/tensor.hpp"

namespace sra {

enum class LayerKind { dense, conv2d, batchnorm, relu, maxpool, avgpool, flatten, residual_add };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One layer of an architecture. Only the fields relevant to `kind` are used:
///   dense:        in, out
///   conv2d:       in, out, kernel, stride, padding, groups
///   batchnorm:    in (channels or features)
///   maxpool/avg:  kernel, stride
///   residual_add: source (index of an earlier layer whose output is added)
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  Index in = 0;
  Index out = 0;
  Index kernel = 0;
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
  Index source = -1;

  static LayerSpec dense(Index in, Index out) { return {LayerKind::dense, in, out}; }
  static LayerSpec conv2d(Index in, Index out, Index kernel, Index stride = 1, Index padding = 0,
                          Index groups = 1) {
    return {LayerKind::conv2d, in, out, kernel, stride, padding, groups};
  }
  static LayerSpec batchnorm(Index channels) { return {LayerKind::batchnorm, channels}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool(Index kernel, Index stride) {
    return {LayerKind::maxpool, 0, 0, kernel, stride};
  }
  static LayerSpec avgpool(Index kernel, Index stride) {
    return {LayerKind::avgpool, 0, 0, kernel, stride};
  }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec residual_add(Index source) {
    LayerSpec s{LayerKind::residual_add};
    s.source = source;
    return s;
  }

  bool has_params() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::batchnorm;
  }
  bool is_node_layer() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Architecture descriptor: input geometry, optional per-channel input
/// standardization, and an ordered layer list ending in a dense classifier.
struct Arch {
  std::string name = "custom";
  Index channels = 1;
  Index height = 1;
  Index width = 1;
  Index classes = 2;
  std::vector<double> input_mean;  // empty = no standardization
  std::vector<double> input_std;
  std::vector<LayerSpec> layers;

  Shape input_shape() const { return {channels, height, width}; }

  friend bool operator==(const Arch&, const Arch&) = default;
};

/// Per-sample output shape of every layer (no batch axis). Throws ShapeError
/// when consecutive layers are incompatible.
std::vector<Shape> layer_output_shapes(const Arch& arch);

/// Per-sample input shape of layer `i`.
Shape layer_input_shape(const Arch& arch, std::size_t i);

/// Full structural validation; throws ShapeError.
void validate(const Arch& arch);

/// Canonical UTF-8 text form (also the model-file architecture block).
std::string arch_to_text(const Arch& arch);
Arch arch_from_text(std::string_view text);

/// Stable 64-bit hash of the canonical text form.
std::uint64_t arch_hash(const Arch& arch);
std::string hash_hex(std::uint64_t h);
std::uint64_t fnv1a64(std::string_view bytes);

/// Closed-form parameter count per layer (independent of ParamSet).
Index layer_param_count(const LayerSpec& layer);
Index param_count(const Arch& arch);

namespace archs {

/// Plain MLP over a flat input of widths.front() features.
Arch mlp(const std::vector<Index>& widths);

/// Small VGG-style CNN for 28x28 grayscale inputs; pools to 1x1 before the classifier.
Arch toy_vgg();

/// Narrower VGG-style CNN used by fast tests.
Arch toy_cnn();

/// CNN with a residual block (identity skip) for surgery tests.
Arch toy_resnet();

/// Resolve a built-in architecture by name ("toy_vgg", "toy_cnn", "toy_resnet", "mlp:2,3,2").
Arch by_name(std::string_view name);

}  // namespace archs

}  // namespace sra

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sra/random.hpp"
#include "sra/tensor.hpp"

namespace sra {

enum class TriggerMode { patch, blend, perturb, filter };
enum class Placement { fixed, random };

std::string to_string(TriggerMode m);
TriggerMode parse_trigger_mode(const std::string& s);

/// Simulated physical conditions: a perspective bank from rotations about
/// the X, Y and Z axes, then a random scale (longest side, pixels),
/// brightness factor and legal placement.
struct PhysicalTransformConfig {
  std::vector<double> angles_deg = {-60, -30, 0, 30, 60};
  Index scale_min = 7;
  Index scale_max = 12;
  double brightness_min = 0.6;
  double brightness_max = 1.4;
};

void validate(const PhysicalTransformConfig& cfg, Index image_height, Index image_width);

/// One rendered perspective variant on its canvas. Pattern is zero wherever
/// the (binary) mask is zero; bbox is {top, left, height, width} of the mask.
struct PerspectiveEntry {
  std::array<double, 3> angles_deg{};
  Tensor<float> pattern;  // (C, canvas, canvas)
  Tensor<float> mask;     // (canvas, canvas), values 0 or 1
  std::array<Index, 4> bbox{};
};

/// k^3 variants, rotating the trigger plane about X, then Y, then Z, and
/// projecting with a pinhole camera at distance 3*size (focal length equal to
/// the distance, so the unrotated plane maps 1:1).
std::vector<PerspectiveEntry> gen_perspective_bank(const Tensor<float>& pattern, const Tensor<float>& mask,
                                                   const std::vector<double>& angles_deg);

/// A trigger ready to stamp at (row, col).
struct PlacedTrigger {
  Tensor<float> pattern;  // (C, h, w)
  Tensor<float> mask;     // (h, w)
  Index row = 0;
  Index col = 0;
  double brightness = 1.0;
};

/// Random bank entry, cropped to its bbox, rescaled, brightened and placed
/// uniformly over legal positions. Degenerate (empty) warps are resampled.
PlacedTrigger sample_physical(const std::vector<PerspectiveEntry>& bank, const PhysicalTransformConfig& cfg,
                              Index image_height, Index image_width, Rng& rng);

/// Same as sample_physical but with the bank entry fixed.
PlacedTrigger sample_physical_entry(const PerspectiveEntry& entry, const PhysicalTransformConfig& cfg,
                                    Index image_height, Index image_width, Rng& rng);

struct TriggerSpec {
  std::string id = "trigger";
  TriggerMode mode = TriggerMode::patch;
  Tensor<float> pattern;  // (C, h, w); perturb patterns may be signed
  Tensor<float> mask;     // (h, w) in [0,1]; binary in patch mode
  double alpha = 1.0;
  Placement placement = Placement::fixed;
  Index row = -1;  // fixed top-left; -1 puts the trigger in the bottom-right corner
  Index col = -1;
  std::optional<PhysicalTransformConfig> physical;  // patch mode only
  std::vector<PerspectiveEntry> bank;               // filled by make_physical
};

/// Throws ConfigError when the spec violates its invariants or does not fit
/// an image of the given geometry.
void validate(const TriggerSpec& spec, Index channels, Index height, Index width);

/// Attaches a physical transform distribution and renders its bank.
void make_physical(TriggerSpec& spec, const PhysicalTransformConfig& cfg);

/// Stamps one placed trigger into a single (C,H,W) image in place.
void stamp(float* image, Index channels, Index height, Index width, const PlacedTrigger& t, TriggerMode mode,
           double alpha);

/// Applies T to every sample of an NCHW batch. Random placement and physical
/// sampling draw from `rng`; fixed static triggers ignore it. Outputs are
/// clamped to [0,1].
Tensor<float> apply_trigger(const Tensor<float>& batch, const TriggerSpec& spec, Rng& rng);

/// Stamps a given placed trigger into every sample (used for per-variant
/// evaluation).
Tensor<float> apply_placed(const Tensor<float>& batch, const PlacedTrigger& t, TriggerMode mode, double alpha);

/// Fixed per-channel piecewise-linear tone curve followed by a 3x3 unsharp
/// mask, clamped to [0,1]. Knots: see tone_curve_knots().
Tensor<float> tone_curve_filter(const Tensor<float>& batch);
const std::array<std::vector<std::array<float, 2>>, 3>& tone_curve_knots();
inline constexpr float kUnsharpAmount = 1.0f;

/// Built-in triggers by name:
///   checker:N   NxN checkerboard of 1-pixel cells, white top-left (patch)
///   square:N    solid white NxN square (patch)
///   noise:SEED  full-image uniform [0,1] noise (blend)
///   signed-noise:SEED full-image uniform [-1,1] noise (perturb)
///   filter      tone-curve filter
TriggerSpec builtin_trigger(const std::string& name, Index channels, Index height, Index width);

/// Text trigger file (see docs/formats.md). Image paths are resolved relative
/// to the file.
TriggerSpec load_trigger(const std::filesystem::path& path, Index channels, Index height, Index width);
TriggerSpec parse_trigger(const std::string& text, const std::filesystem::path& base_dir, Index channels,
                          Index height, Index width);

}  // namespace sra

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "sra/arch.hpp"
#include "sra/network.hpp"
#include "sra/params.hpp"

namespace sra {

/// An architecture plus its 32-bit parameters. `meta` carries free-form
/// header entries (used for subnet output wiring and provenance).
struct Model {
  Arch arch;
  ParamSet<float> params;
  std::map<std::string, std::string> meta;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Freshly initialized model; parameters depend only on (arch, seed).
Model make_model(const Arch& arch, std::uint64_t seed);

/// Eval-mode logits for an NCHW batch, processed in chunks.
Tensor<float> predict_logits(const Model& model, const Tensor<float>& batch, Index chunk = 256);

}  // namespace sra

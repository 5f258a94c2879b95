#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "sra/model_format.hpp"
#include "sra/structure_graph.hpp"
#include "sra/subnet.hpp"

namespace sra {

struct ParamWrite {
  ParamPath path;
  float value = 0;
};

/// Every element a replacement overwrites, in canonical parameter order.
/// Depends only on (arch, spec, subnet), never on victim values.
std::vector<ParamWrite> plan_replacement(const Arch& arch, const SubnetSpec& spec, const BackdoorSubnet& subnet);

/// Copy of `victim` with the subnet spliced in: selected positions carry the
/// subnet's parameters, cross weights between selected and unselected nodes
/// are zeroed, and the selected node's classifier column is wired into the
/// target class only.
Model replace_subnet(const Model& victim, const BackdoorSubnet& subnet, const SubnetSpec& spec);

/// Sequential replacement of several subnets. Specs must be pairwise
/// disjoint (OverlapError) and targets distinct.
Model multi_replace(const Model& victim, const std::vector<std::pair<BackdoorSubnet, SubnetSpec>>& attacks);

inline constexpr std::uint32_t kPatchFormatVersion = 1;

struct PatchEntry {
  std::uint64_t offset = 0;  // into the parameter block
  float value = 0;

  friend bool operator==(const PatchEntry&, const PatchEntry&) = default;
};

struct PatchList {
  std::uint32_t version = kPatchFormatVersion;
  std::uint64_t arch_hash = 0;
  int target = 0;
  OutputWiring wiring;
  std::vector<PatchEntry> entries;  // strictly increasing offsets

  friend bool operator==(const PatchList&, const PatchList&) = default;
};

PatchList emit_patch(const Arch& arch, const SubnetSpec& spec, const BackdoorSubnet& subnet);

/// Writes the entries into a serialized model and refreshes its checksum.
/// Throws ArchHashMismatchError or PatchError.
Bytes apply_patch(std::span<const std::uint8_t> model_file, const PatchList& patch);
void apply_patch_file(const std::filesystem::path& in, const PatchList& patch, const std::filesystem::path& out);

Bytes serialize_patch(const PatchList& patch);
PatchList deserialize_patch(std::span<const std::uint8_t> bytes);
void save_patch(const PatchList& patch, const std::filesystem::path& path);
PatchList load_patch(const std::filesystem::path& path);

}  // namespace sra

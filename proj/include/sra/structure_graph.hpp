#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sra/arch.hpp"

namespace sra {

/// Layered node view of an architecture. Node layer 0 is the input (one
/// node per image channel); each dense/conv layer adds one node layer
/// (neurons or output channels). The last node layer is the classifier
/// output, so nodes.back() == classes.
struct StructureGraph {
  std::vector<Index> nodes;        // n_k
  std::vector<Index> producer;     // arch layer producing node layer k (-1 for the input)
  std::vector<Index> tie;          // representative node layer; residual adds and depthwise convs tie layers

  Index node_layers() const { return static_cast<Index>(nodes.size()); }
  Index edge_count() const;
};

/// Which node layer a tensor's leading feature axis belongs to, and how many
/// flat features each node spans (H*W after a flatten, else 1).
struct NodeSpace {
  Index node_layer = 0;
  Index factor = 1;
};

/// Node space of every layer's output, in layer order.
std::vector<NodeSpace> layer_spaces(const Arch& arch);

/// Node space of layer i's input.
NodeSpace input_space(const Arch& arch, std::size_t i);

StructureGraph build_graph(const Arch& arch);

enum class SelectStrategy { random, top };

std::string to_string(SelectStrategy s);
SelectStrategy parse_select_strategy(const std::string& s);

/// Selected node indices per node layer. selected[0] is every input channel,
/// selected.back() is empty (the classifier is rewired, not replaced).
struct SubnetSpec {
  std::uint64_t arch_hash = 0;
  Index width = 1;
  int target = 0;  // 0-based class
  std::uint64_t seed = 0;
  SelectStrategy strategy = SelectStrategy::random;
  std::vector<std::vector<Index>> selected;

  friend bool operator==(const SubnetSpec&, const SubnetSpec&) = default;
};

/// Throws SpecError if `spec` violates any subnet condition for `arch`.
void validate_spec(const Arch& arch, const SubnetSpec& spec);

/// Random or lowest-index selection. Throws SpecError for layers that are too
/// narrow, an out-of-range target, or grouping that admits no valid choice.
SubnetSpec select_subnet(const Arch& arch, Index width, int target, std::uint64_t seed,
                         SelectStrategy strategy = SelectStrategy::random);

/// The narrow architecture a backdoor subnet for `spec` must have: same
/// layer list with widths |V_k|, ending in a dense 1-output head.
Arch derive_subnet_arch(const Arch& arch, const SubnetSpec& spec);

/// True when two specs select no common node in any hidden node layer.
bool specs_disjoint(const SubnetSpec& a, const SubnetSpec& b);

struct BudgetReport {
  Index modified = 0;
  Index budget = 0;
  bool accepted = false;
};

/// Closed-form number of parameter elements a replacement overwrites.
/// Without an explicit budget, the budget is the full parameter count.
BudgetReport count_modified(const Arch& arch, const SubnetSpec& spec, std::optional<Index> budget = {});

std::string spec_to_text(const SubnetSpec& spec);
SubnetSpec spec_from_text(const std::string& text);
void save_spec(const SubnetSpec& spec, const std::filesystem::path& path);
SubnetSpec load_spec(const std::filesystem::path& path);

}  // namespace sra

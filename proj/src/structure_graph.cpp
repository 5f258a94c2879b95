#include "sra/structure_graph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sra/errors.hpp"
#include "sra/random.hpp"

namespace sra {

namespace {

Index find_root(std::vector<Index>& parent, Index k) {
  while (parent[static_cast<std::size_t>(k)] != k) k = parent[static_cast<std::size_t>(k)];
  return k;
}

void unite(std::vector<Index>& parent, Index a, Index b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  // Smallest index is the representative.
  if (a < b) parent[static_cast<std::size_t>(b)] = a;
  else parent[static_cast<std::size_t>(a)] = b;
}

bool is_depthwise(const LayerSpec& l) { return l.kind == LayerKind::conv2d && l.groups > 1 && l.groups == l.in && l.groups == l.out; }

struct Analysis {
  std::vector<NodeSpace> spaces;  // per layer output
  StructureGraph graph;
};

Analysis analyze(const Arch& arch) {
  validate(arch);
  const auto shapes = layer_output_shapes(arch);
  Analysis an;
  auto& g = an.graph;
  g.nodes.push_back(arch.channels);
  g.producer.push_back(-1);
  std::vector<std::pair<Index, Index>> ties;
  NodeSpace cur{0, 1};
  Shape cur_shape = arch.input_shape();
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const Index k = static_cast<Index>(g.nodes.size());
        g.nodes.push_back(l.out);
        g.producer.push_back(static_cast<Index>(i));
        if (is_depthwise(l)) ties.emplace_back(cur.node_layer, k);
        cur = {k, 1};
        break;
      }
      case LayerKind::flatten:
        if (cur_shape.size() == 3) cur.factor *= cur_shape[1] * cur_shape[2];
        break;
      case LayerKind::residual_add: {
        const NodeSpace& src = an.spaces.at(static_cast<std::size_t>(l.source));
        if (src.factor != cur.factor) throw SpecError("residual add joins tensors with different node layouts");
        ties.emplace_back(cur.node_layer, src.node_layer);
        break;
      }
      case LayerKind::batchnorm:
      case LayerKind::relu:
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        break;
    }
    an.spaces.push_back(cur);
    cur_shape = shapes[i];
  }
  g.tie.resize(g.nodes.size());
  std::iota(g.tie.begin(), g.tie.end(), Index{0});
  for (auto [a, b] : ties) unite(g.tie, a, b);
  for (Index k = 0; k < g.node_layers(); ++k) g.tie[static_cast<std::size_t>(k)] = find_root(g.tie, k);
  return an;
}

std::size_t uz(Index i) { return static_cast<std::size_t>(i); }

}  // namespace

Index StructureGraph::edge_count() const {
  Index e = 0;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) e += nodes[k] * nodes[k + 1];
  return e;
}

std::vector<NodeSpace> layer_spaces(const Arch& arch) { return analyze(arch).spaces; }

NodeSpace input_space(const Arch& arch, std::size_t i) {
  if (i == 0) return {0, 1};
  return layer_spaces(arch).at(i - 1);
}

StructureGraph build_graph(const Arch& arch) { return analyze(arch).graph; }

std::string to_string(SelectStrategy s) { return s == SelectStrategy::top ? "top" : "random"; }

SelectStrategy parse_select_strategy(const std::string& s) {
  if (s == "random") return SelectStrategy::random;
  if (s == "top") return SelectStrategy::top;
  throw ConfigError("unknown selection strategy '" + s + "' (expected random or top)");
}

void validate_spec(const Arch& arch, const SubnetSpec& spec) {
  const Analysis an = analyze(arch);
  const auto& g = an.graph;
  const Index last = g.node_layers() - 1;
  if (spec.arch_hash != arch_hash(arch)) throw SpecError("subnet spec was made for a different architecture");
  if (spec.width < 1) throw SpecError("width must be at least 1");
  if (spec.target < 0 || spec.target >= arch.classes) {
    throw SpecError("target class " + std::to_string(spec.target) + " out of range");
  }
  if (static_cast<Index>(spec.selected.size()) != g.node_layers()) {
    throw SpecError("spec has " + std::to_string(spec.selected.size()) + " node layers, architecture has " +
                    std::to_string(g.node_layers()));
  }
  std::vector<Index> all(uz(g.nodes[0]));
  std::iota(all.begin(), all.end(), Index{0});
  if (spec.selected[0] != all) throw SpecError("input node layer must select every input channel");
  if (!spec.selected[uz(last)].empty()) throw SpecError("classifier node layer must select nothing");
  for (Index k = 1; k < last; ++k) {
    const auto& sel = spec.selected[uz(k)];
    const std::string where = "node layer " + std::to_string(k);
    if (sel.empty()) throw SpecError(where + " selects nothing");
    if (static_cast<Index>(sel.size()) > spec.width) throw SpecError(where + " exceeds width " + std::to_string(spec.width));
    if (static_cast<Index>(sel.size()) >= g.nodes[uz(k)]) throw SpecError(where + " is too narrow to leave a remainder");
    for (std::size_t j = 0; j < sel.size(); ++j) {
      if (sel[j] < 0 || sel[j] >= g.nodes[uz(k)]) throw SpecError(where + " index out of range");
      if (j > 0 && sel[j] <= sel[j - 1]) throw SpecError(where + " indices must be sorted and unique");
    }
    if (sel != spec.selected[uz(g.tie[uz(k)])]) throw SpecError(where + " must match its tied residual/depthwise layer");
    if (g.tie[uz(k)] == 0) throw SpecError(where + " is tied to the input layer");
  }
  if (spec.selected[uz(last - 1)].size() != 1) throw SpecError("last hidden node layer must select exactly one node");

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const NodeSpace in = i == 0 ? NodeSpace{0, 1} : an.spaces[i - 1];
    if (l.kind == LayerKind::batchnorm && in.node_layer == 0) {
      throw SpecError("batchnorm on the shared input layer cannot be replaced");
    }
    if (l.kind == LayerKind::conv2d && l.groups > 1 && !is_depthwise(l)) {
      const Index out_k = an.spaces[i].node_layer;
      const Index cin = l.in / l.groups, cout = l.out / l.groups;
      const auto& si = spec.selected[uz(in.node_layer)];
      const auto& so = spec.selected[uz(out_k)];
      const Index grp = so.front() / cout;
      bool ok = so.back() / cout == grp;
      for (Index c : si) ok = ok && c / cin == grp;
      if (!ok) throw SpecError("incompatible grouping at layer " + std::to_string(i) + ": selection crosses conv groups");
    }
  }
  const NodeSpace head_in = an.spaces[arch.layers.size() - 2];
  if (head_in.factor != 1) {
    throw SpecError("the last hidden node layer must be pooled to 1x1 before the classifier");
  }
}

SubnetSpec select_subnet(const Arch& arch, Index width, int target, std::uint64_t seed, SelectStrategy strategy) {
  if (width < 1) throw SpecError("width must be at least 1");
  if (target < 0 || target >= arch.classes) throw SpecError("target class " + std::to_string(target) + " out of range");
  const StructureGraph g = build_graph(arch);
  const Index last = g.node_layers() - 1;
  if (last < 2) throw SpecError("architecture needs at least one hidden node layer");

  SubnetSpec spec;
  spec.arch_hash = arch_hash(arch);
  spec.width = width;
  spec.target = target;
  spec.seed = seed;
  spec.strategy = strategy;

  std::vector<Index> group_size(g.nodes.size(), 0);
  for (Index k = 1; k < last; ++k) {
    const Index r = g.tie[uz(k)];
    if (r == 0) throw SpecError("node layer " + std::to_string(k) + " is tied to the input layer");
    const Index want = k == last - 1 ? 1 : width;
    group_size[uz(r)] = group_size[uz(r)] == 0 ? want : std::min(group_size[uz(r)], want);
  }
  for (Index k = 1; k < last; ++k) {
    if (g.nodes[uz(k)] <= group_size[uz(g.tie[uz(k)])]) {
      throw SpecError("node layer " + std::to_string(k) + " has " + std::to_string(g.nodes[uz(k)]) +
                      " nodes, too narrow for width " + std::to_string(group_size[uz(g.tie[uz(k)])]));
    }
  }

  Rng rng(derive_seed(seed, 0x5e1ec7));
  const int attempts = strategy == SelectStrategy::top ? 1 : 500;
  for (int attempt = 0;; ++attempt) {
    spec.selected.assign(g.nodes.size(), {});
    spec.selected[0].resize(uz(g.nodes[0]));
    std::iota(spec.selected[0].begin(), spec.selected[0].end(), Index{0});
    for (Index k = 1; k < last; ++k) {
      if (g.tie[uz(k)] != k) continue;
      std::vector<Index> idx(uz(g.nodes[uz(k)]));
      std::iota(idx.begin(), idx.end(), Index{0});
      if (strategy == SelectStrategy::random) std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(uz(group_size[uz(k)]));
      std::sort(idx.begin(), idx.end());
      spec.selected[uz(k)] = std::move(idx);
    }
    for (Index k = 1; k < last; ++k) spec.selected[uz(k)] = spec.selected[uz(g.tie[uz(k)])];
    try {
      validate_spec(arch, spec);
      return spec;
    } catch (const SpecError&) {
      if (attempt + 1 >= attempts) throw;
    }
  }
}

Arch derive_subnet_arch(const Arch& arch, const SubnetSpec& spec) {
  validate_spec(arch, spec);
  const Analysis an = analyze(arch);
  Arch out = arch;
  out.name = arch.name + "-subnet";
  out.classes = 1;
  auto count = [&](const NodeSpace& s) { return static_cast<Index>(spec.selected[uz(s.node_layer)].size()) * s.factor; };
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    auto& n = out.layers[i];
    const NodeSpace in = i == 0 ? NodeSpace{0, 1} : an.spaces[i - 1];
    switch (l.kind) {
      case LayerKind::conv2d:
        n.in = count(in);
        n.out = count(an.spaces[i]);
        n.groups = is_depthwise(l) ? n.out : 1;
        break;
      case LayerKind::dense:
        n.in = count(in);
        n.out = i + 1 == arch.layers.size() ? 1 : count(an.spaces[i]);
        break;
      case LayerKind::batchnorm:
        n.in = count(in);
        break;
      default:
        break;
    }
  }
  validate(out);
  return out;
}

bool specs_disjoint(const SubnetSpec& a, const SubnetSpec& b) {
  if (a.selected.size() != b.selected.size()) return true;
  for (std::size_t k = 1; k + 1 < a.selected.size(); ++k) {
    for (Index x : a.selected[k]) {
      if (std::binary_search(b.selected[k].begin(), b.selected[k].end(), x)) return false;
    }
  }
  return true;
}

BudgetReport count_modified(const Arch& arch, const SubnetSpec& spec, std::optional<Index> budget) {
  validate_spec(arch, spec);
  const Analysis an = analyze(arch);
  const auto& g = an.graph;
  auto sel = [&](Index k) { return static_cast<Index>(spec.selected[uz(k)].size()); };
  Index total = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const NodeSpace in = i == 0 ? NodeSpace{0, 1} : an.spaces[i - 1];
    const Index s_in = sel(in.node_layer) * in.factor;
    const Index n_in = g.nodes[uz(in.node_layer)] * in.factor;
    const bool shared_input = in.node_layer == 0;
    switch (l.kind) {
      case LayerKind::conv2d: {
        const Index kk = l.kernel * l.kernel;
        const Index s_out = sel(an.spaces[i].node_layer);
        if (is_depthwise(l)) {
          total += s_out * kk + s_out;
          break;
        }
        const Index cin = n_in / l.groups, cout = l.out / l.groups;
        total += s_out * s_in * kk;                                // subnet weights
        total += s_out * (cin - s_in) * kk;                        // unselected -> selected
        if (!shared_input) total += (cout - s_out) * s_in * kk;    // selected -> unselected
        total += s_out;                                            // biases
        break;
      }
      case LayerKind::dense:
        if (i + 1 == arch.layers.size()) {
          total += arch.classes * s_in + 1;  // selected node's classifier column + target bias
        } else {
          const Index s_out = sel(an.spaces[i].node_layer);
          total += s_out * s_in + s_out * (n_in - s_in) + s_out;
          if (!shared_input) total += (l.out - s_out) * s_in;
        }
        break;
      case LayerKind::batchnorm:
        total += 4 * s_in;
        break;
      default:
        break;
    }
  }
  BudgetReport r;
  r.modified = total;
  r.budget = budget.value_or(param_count(arch));
  r.accepted = r.modified <= r.budget;
  return r;
}

std::string spec_to_text(const SubnetSpec& spec) {
  std::ostringstream os;
  os << "sra-subnet-spec 1\n";
  os << "arch_hash " << hash_hex(spec.arch_hash) << "\n";
  os << "width " << spec.width << "\n";
  os << "target " << spec.target << "\n";
  os << "seed " << spec.seed << "\n";
  os << "strategy " << to_string(spec.strategy) << "\n";
  for (std::size_t k = 0; k < spec.selected.size(); ++k) {
    os << "nodes " << k << " ";
    if (spec.selected[k].empty()) {
      os << "none";
    } else {
      for (std::size_t j = 0; j < spec.selected[k].size(); ++j) os << (j ? "," : "") << spec.selected[k][j];
    }
    os << "\n";
  }
  os << "end\n";
  return os.str();
}

SubnetSpec spec_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "sra-subnet-spec 1") throw FormatError("not a subnet spec (bad header)");
  SubnetSpec spec;
  bool ended = false;
  auto number = [](const std::string& s) -> long long {
    try {
      std::size_t used = 0;
      long long v = std::stoll(s, &used);
      if (used != s.size()) throw FormatError("bad number '" + s + "' in subnet spec");
      return v;
    } catch (const std::logic_error&) {
      throw FormatError("bad number '" + s + "' in subnet spec");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    if (key == "nodes") {
      std::string k;
      ls >> k >> value;
      if (number(k) != static_cast<long long>(spec.selected.size())) throw FormatError("node layers out of order");
      std::vector<Index> idx;
      if (value != "none") {
        std::stringstream vs(value);
        std::string part;
        while (std::getline(vs, part, ',')) idx.push_back(static_cast<Index>(number(part)));
      }
      spec.selected.push_back(std::move(idx));
      continue;
    }
    ls >> value;
    if (key == "arch_hash") {
      try {
        spec.arch_hash = std::stoull(value, nullptr, 16);
      } catch (const std::logic_error&) {
        throw FormatError("bad arch hash in subnet spec");
      }
    } else if (key == "width") {
      spec.width = static_cast<Index>(number(value));
    } else if (key == "target") {
      spec.target = static_cast<int>(number(value));
    } else if (key == "seed") {
      try {
        spec.seed = std::stoull(value);
      } catch (const std::logic_error&) {
        throw FormatError("bad seed in subnet spec");
      }
    } else if (key == "strategy") {
      try {
        spec.strategy = parse_select_strategy(value);
      } catch (const ConfigError& e) {
        throw FormatError(e.what());
      }
    } else {
      throw FormatError("unknown subnet spec key '" + key + "'");
    }
  }
  if (!ended) throw FormatError("subnet spec not terminated by 'end'");
  return spec;
}

void save_spec(const SubnetSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << spec_to_text(spec);
  if (!out) throw IoError("write failed for " + path.string());
}

SubnetSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return spec_from_text(ss.str());
}

}  // namespace sra

#include "sra/surgery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "sra/errors.hpp"

namespace sra {

namespace {

std::size_t uz(Index i) { return static_cast<std::size_t>(i); }

// Position of x within a sorted selection, or -1.
Index position(const std::vector<Index>& sel, Index x) {
  auto it = std::lower_bound(sel.begin(), sel.end(), x);
  return it != sel.end() && *it == x ? static_cast<Index>(it - sel.begin()) : -1;
}

bool depthwise(const LayerSpec& l) { return l.groups > 1 && l.groups == l.in && l.groups == l.out; }

const char kPatchMagic[] = "SRAPATCH";

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<ParamWrite> plan_replacement(const Arch& arch, const SubnetSpec& spec, const BackdoorSubnet& subnet) {
  const Arch narrow = derive_subnet_arch(arch, spec);
  if (!(subnet.model.arch.layers == narrow.layers) || subnet.model.arch.input_shape() != narrow.input_shape() ||
      subnet.model.arch.classes != 1) {
    throw SpecError("subnet architecture does not match the architecture derived from the spec");
  }
  if (!subnet.model.params.all_finite() || !std::isfinite(subnet.wiring.w_out) ||
      !std::isfinite(subnet.wiring.delta_b)) {
    throw NumericError("subnet parameters or wiring are not finite");
  }
  const auto spaces = layer_spaces(arch);
  const auto& sp = subnet.model.params;
  std::vector<ParamWrite> plan;
  auto put = [&](std::size_t layer, ParamRole role, Index element, float value) {
    plan.push_back({{static_cast<Index>(layer), role, element}, value});
  };

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const NodeSpace in = i == 0 ? NodeSpace{0, 1} : spaces[i - 1];
    const auto& sin = spec.selected[uz(in.node_layer)];
    const bool shared_input = in.node_layer == 0;
    const Index s_in = static_cast<Index>(sin.size());
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto& sout = spec.selected[uz(spaces[i].node_layer)];
        const auto& sw = sp.at(static_cast<Index>(i), ParamRole::weight);
        const auto& sb = sp.at(static_cast<Index>(i), ParamRole::bias);
        const Index kk = l.kernel * l.kernel;
        if (depthwise(l)) {
          for (std::size_t j = 0; j < sout.size(); ++j) {
            for (Index q = 0; q < kk; ++q) put(i, ParamRole::weight, sout[j] * kk + q, sw[static_cast<Index>(j) * kk + q]);
            put(i, ParamRole::bias, sout[j], sb[static_cast<Index>(j)]);
          }
          break;
        }
        const Index cin = l.in / l.groups, cout = l.out / l.groups;
        for (Index o = 0; o < l.out; ++o) {
          const Index j = position(sout, o);
          if (j < 0 && shared_input) continue;
          const Index grp = o / cout;
          for (Index cl = 0; cl < cin; ++cl) {
            const Index m = position(sin, grp * cin + cl);
            if (j < 0 && m < 0) continue;
            for (Index q = 0; q < kk; ++q) {
              const float v = j >= 0 && m >= 0 ? sw[(j * s_in + m) * kk + q] : 0.0f;
              put(i, ParamRole::weight, (o * cin + cl) * kk + q, v);
            }
          }
          if (j >= 0) put(i, ParamRole::bias, o, sb[j]);
        }
        break;
      }
      case LayerKind::dense: {
        const Index f = in.factor;
        const auto& sw = sp.at(static_cast<Index>(i), ParamRole::weight);
        const auto& sb = sp.at(static_cast<Index>(i), ParamRole::bias);
        if (i + 1 == arch.layers.size()) {
          // Classifier: the selected node feeds only the target logit.
          const Index node = sin.front();
          const double u = sw[0], c = sb[0];
          for (Index y = 0; y < l.out; ++y) {
            const float v = y == spec.target ? static_cast<float>(subnet.wiring.w_out * u) : 0.0f;
            put(i, ParamRole::weight, y * l.in + node, v);
          }
          put(i, ParamRole::bias, spec.target, static_cast<float>(subnet.wiring.w_out * c + subnet.wiring.delta_b));
          break;
        }
        const auto& sout = spec.selected[uz(spaces[i].node_layer)];
        const Index sub_in = s_in * f;
        for (Index o = 0; o < l.out; ++o) {
          const Index j = position(sout, o);
          if (j < 0 && shared_input) continue;
          for (Index x = 0; x < l.in; ++x) {
            const Index m = position(sin, x / f);
            if (j < 0 && m < 0) continue;
            const float v = j >= 0 && m >= 0 ? sw[j * sub_in + m * f + x % f] : 0.0f;
            put(i, ParamRole::weight, o * l.in + x, v);
          }
          if (j >= 0) put(i, ParamRole::bias, o, sb[j]);
        }
        break;
      }
      case LayerKind::batchnorm: {
        const Index f = in.factor;
        for (ParamRole role : {ParamRole::bn_scale, ParamRole::bn_shift, ParamRole::bn_mean, ParamRole::bn_var}) {
          const auto& src = sp.at(static_cast<Index>(i), role);
          for (Index m = 0; m < s_in; ++m) {
            for (Index p = 0; p < f; ++p) put(i, role, sin[uz(m)] * f + p, src[m * f + p]);
          }
        }
        break;
      }
      default:
        break;
    }
  }
  std::sort(plan.begin(), plan.end(), [](const ParamWrite& a, const ParamWrite& b) {
    return std::tie(a.path.layer, a.path.role, a.path.element) < std::tie(b.path.layer, b.path.role, b.path.element);
  });
  for (std::size_t k = 1; k < plan.size(); ++k) {
    const auto& a = plan[k - 1].path;
    const auto& b = plan[k].path;
    if (a.layer == b.layer && a.role == b.role && a.element == b.element) {
      throw Error("internal: replacement plan writes one element twice");
    }
  }
  return plan;
}

Model replace_subnet(const Model& victim, const BackdoorSubnet& subnet, const SubnetSpec& spec) {
  if (spec.arch_hash != arch_hash(victim.arch)) throw SpecError("subnet spec was made for a different architecture");
  const auto plan = plan_replacement(victim.arch, spec, subnet);
  Model out = victim;
  for (const auto& w : plan) out.params.at(w.path.layer, w.path.role)[w.path.element] = w.value;
  return out;
}

Model multi_replace(const Model& victim, const std::vector<std::pair<BackdoorSubnet, SubnetSpec>>& attacks) {
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    for (std::size_t b = a + 1; b < attacks.size(); ++b) {
      if (!specs_disjoint(attacks[a].second, attacks[b].second)) {
        throw OverlapError("subnet specs " + std::to_string(a) + " and " + std::to_string(b) + " overlap");
      }
      if (attacks[a].second.target == attacks[b].second.target) {
        throw SpecError("subnets " + std::to_string(a) + " and " + std::to_string(b) + " share a target class");
      }
    }
  }
  Model out = victim;
  for (const auto& [subnet, spec] : attacks) out = replace_subnet(out, subnet, spec);
  return out;
}

PatchList emit_patch(const Arch& arch, const SubnetSpec& spec, const BackdoorSubnet& subnet) {
  PatchList patch;
  patch.arch_hash = arch_hash(arch);
  patch.target = spec.target;
  patch.wiring = subnet.wiring;
  for (const auto& w : plan_replacement(arch, spec, subnet)) {
    patch.entries.push_back({param_offset(arch, w.path), w.value});
  }
  return patch;
}

Bytes apply_patch(std::span<const std::uint8_t> model_file, const PatchList& patch) {
  const ModelFileInfo info = inspect_model(model_file);
  if (arch_hash(info.arch) != patch.arch_hash) {
    throw ArchHashMismatchError("patch was made for architecture " + hash_hex(patch.arch_hash) + ", file has " +
                                hash_hex(arch_hash(info.arch)));
  }
  const std::uint64_t block = 4 * info.param_count;
  Bytes out(model_file.begin(), model_file.end());
  for (std::size_t k = 0; k < patch.entries.size(); ++k) {
    const auto& e = patch.entries[k];
    if (e.offset % 4 != 0 || e.offset + 4 > block) {
      throw PatchError("patch offset " + std::to_string(e.offset) + " outside the parameter block");
    }
    if (k > 0 && e.offset <= patch.entries[k - 1].offset) throw PatchError("patch offsets not strictly increasing");
    const std::uint32_t bits = float_bits(e.value);
    for (int b = 0; b < 4; ++b) out[info.param_block_offset + e.offset + static_cast<std::uint64_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  refresh_checksum(out);
  return out;
}

void apply_patch_file(const std::filesystem::path& in, const PatchList& patch, const std::filesystem::path& out) {
  write_file(out, apply_patch(read_file(in), patch));
}

Bytes serialize_patch(const PatchList& patch) {
  std::ostringstream os;
  os << kPatchMagic << " " << patch.version << "\n"
     << "arch_hash " << hash_hex(patch.arch_hash) << "\n"
     << "target " << patch.target << "\n"
     << "w_out " << exact(patch.wiring.w_out) << "\n"
     << "delta_b " << exact(patch.wiring.delta_b) << "\n"
     << "entries " << patch.entries.size() << "\n"
     << "end\n";
  const std::string header = os.str();
  Bytes out(header.begin(), header.end());
  const std::size_t table = out.size();
  for (const auto& e : patch.entries) {
    put_u64(out, e.offset);
    put_f32(out, e.value);
  }
  put_u32(out, param_block_checksum(std::span<const std::uint8_t>(out).subspan(table)));
  return out;
}

PatchList deserialize_patch(std::span<const std::uint8_t> bytes) {
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!all.starts_with(kPatchMagic)) throw BadMagicError("not a patch file (bad magic)");
  const auto end = all.find("\nend\n");
  if (end == std::string_view::npos) throw FormatError("patch header not terminated");
  std::istringstream in{std::string(all.substr(0, end))};
  PatchList p;
  std::string magic, key;
  in >> magic >> p.version;
  if (p.version != kPatchFormatVersion) {
    throw VersionMismatchError("patch format version " + std::to_string(p.version) + ", expected " +
                               std::to_string(kPatchFormatVersion));
  }
  std::size_t count = 0;
  bool have_count = false;
  while (in >> key) {
    std::string value;
    if (!(in >> value)) throw FormatError("patch header key '" + key + "' without value");
    try {
      if (key == "arch_hash") p.arch_hash = std::stoull(value, nullptr, 16);
      else if (key == "target") p.target = std::stoi(value);
      else if (key == "w_out") p.wiring.w_out = std::stod(value);
      else if (key == "delta_b") p.wiring.delta_b = std::stod(value);
      else if (key == "entries") {
        count = std::stoull(value);
        have_count = true;
      } else throw FormatError("unknown patch header key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError("bad value for patch header key '" + key + "'");
    }
  }
  if (!have_count) throw FormatError("patch header lacks an entry count");
  const std::size_t table = end + 5;
  if (bytes.size() < table + 12 * count + 4) throw TruncatedFileError("patch entry table truncated");
  if (bytes.size() != table + 12 * count + 4) throw FormatError("trailing bytes after patch checksum");
  const std::uint32_t stored = get_u32(bytes, table + 12 * count);
  if (param_block_checksum(bytes.subspan(table, 12 * count)) != stored) {
    throw ChecksumMismatchError("patch entry table checksum mismatch");
  }
  p.entries.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    p.entries[k].offset = get_u64(bytes, table + 12 * k);
    p.entries[k].value = get_f32(bytes, table + 12 * k + 8);
  }
  return p;
}

void save_patch(const PatchList& patch, const std::filesystem::path& path) { write_file(path, serialize_patch(patch)); }

PatchList load_patch(const std::filesystem::path& path) { return deserialize_patch(read_file(path)); }

}  // namespace sra

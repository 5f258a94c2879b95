#include "sra/arch.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

namespace sra {

namespace {

constexpr std::string_view kArchMagic = "sra-arch";
constexpr int kArchTextVersion = 1;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Index parse_index(std::string_view s, std::string_view what) {
  Index v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("bad integer for " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::residual_add: return "residual_add";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  static const std::map<std::string_view, LayerKind> kinds = {
      {"dense", LayerKind::dense},         {"conv2d", LayerKind::conv2d},
      {"batchnorm", LayerKind::batchnorm}, {"relu", LayerKind::relu},
      {"maxpool", LayerKind::maxpool},     {"avgpool", LayerKind::avgpool},
      {"flatten", LayerKind::flatten},     {"residual_add", LayerKind::residual_add}};
  auto it = kinds.find(name);
  if (it == kinds.end()) throw FormatError("unsupported layer kind '" + std::string(name) + "'");
  return it->second;
}

std::vector<Shape> layer_output_shapes(const Arch& arch) {
  if (arch.channels <= 0 || arch.height <= 0 || arch.width <= 0) {
    throw ShapeError("input extents must be positive");
  }
  std::vector<Shape> shapes;
  shapes.reserve(arch.layers.size());
  Shape cur = arch.input_shape();
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + "): ";
    switch (l.kind) {
      case LayerKind::dense:
        if (cur.size() != 1) throw ShapeError(where + "dense needs a flat input; insert flatten");
        if (cur[0] != l.in || l.out <= 0) {
          throw ShapeError(where + "expected " + std::to_string(l.in) + " features, got " +
                           shape_string(cur));
        }
        cur = {l.out};
        break;
      case LayerKind::conv2d: {
        if (cur.size() != 3 || cur[0] != l.in) {
          throw ShapeError(where + "input " + shape_string(cur) + " incompatible with in=" +
                           std::to_string(l.in));
        }
        if (l.kernel <= 0 || l.stride <= 0 || l.padding < 0 || l.groups <= 0 || l.out <= 0 ||
            l.in % l.groups != 0 || l.out % l.groups != 0) {
          throw ShapeError(where + "invalid conv hyperparameters");
        }
        const Index ho = (cur[1] + 2 * l.padding - l.kernel) / l.stride + 1;
        const Index wo = (cur[2] + 2 * l.padding - l.kernel) / l.stride + 1;
        if (cur[1] + 2 * l.padding < l.kernel || cur[2] + 2 * l.padding < l.kernel) {
          throw ShapeError(where + "kernel larger than padded input");
        }
        cur = {l.out, ho, wo};
        break;
      }
      case LayerKind::batchnorm:
        if (cur.empty() || cur[0] != l.in) {
          throw ShapeError(where + "channel count mismatch for " + shape_string(cur));
        }
        break;
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        if (cur.size() != 3 || l.kernel <= 0 || l.stride <= 0 || cur[1] < l.kernel || cur[2] < l.kernel) {
          throw ShapeError(where + "pooling window does not fit " + shape_string(cur));
        }
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      case LayerKind::flatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::residual_add:
        if (l.source < 0 || static_cast<std::size_t>(l.source) >= i) {
          throw ShapeError(where + "source must reference an earlier layer");
        }
        if (shapes[static_cast<std::size_t>(l.source)] != cur) {
          throw ShapeError(where + "source shape " + shape_string(shapes[static_cast<std::size_t>(l.source)]) +
                           " differs from " + shape_string(cur));
        }
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

Shape layer_input_shape(const Arch& arch, std::size_t i) {
  if (i == 0) return arch.input_shape();
  return layer_output_shapes(arch).at(i - 1);
}

void validate(const Arch& arch) {
  if (arch.classes < 1) throw ShapeError("need at least one output");
  if (arch.layers.empty()) throw ShapeError("architecture has no layers");
  if (!arch.input_mean.empty() || !arch.input_std.empty()) {
    if (arch.input_mean.size() != static_cast<std::size_t>(arch.channels) ||
        arch.input_std.size() != arch.input_mean.size()) {
      throw ShapeError("input standardization must give one mean/std per channel");
    }
    for (double s : arch.input_std) {
      if (!(s > 0)) throw ShapeError("input std must be positive");
    }
  }
  auto shapes = layer_output_shapes(arch);
  const LayerSpec& last = arch.layers.back();
  if (last.kind != LayerKind::dense || last.out != arch.classes) {
    throw ShapeError("last layer must be a dense classifier with " + std::to_string(arch.classes) +
                     " outputs");
  }
}

std::string arch_to_text(const Arch& arch) {
  std::ostringstream os;
  os << kArchMagic << ' ' << kArchTextVersion << '\n';
  os << "name " << arch.name << '\n';
  os << "input " << arch.channels << ' ' << arch.height << ' ' << arch.width << '\n';
  os << "classes " << arch.classes << '\n';
  if (!arch.input_mean.empty()) {
    os << "mean";
    for (double m : arch.input_mean) os << ' ' << format_double(m);
    os << "\nstd";
    for (double s : arch.input_std) os << ' ' << format_double(s);
    os << '\n';
  }
  for (const LayerSpec& l : arch.layers) {
    os << "layer " << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::dense:
        os << " in=" << l.in << " out=" << l.out;
        break;
      case LayerKind::conv2d:
        os << " in=" << l.in << " out=" << l.out << " kernel=" << l.kernel << " stride=" << l.stride
           << " padding=" << l.padding << " groups=" << l.groups;
        break;
      case LayerKind::batchnorm:
        os << " in=" << l.in;
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        os << " kernel=" << l.kernel << " stride=" << l.stride;
        break;
      case LayerKind::residual_add:
        os << " source=" << l.source;
        break;
      case LayerKind::relu:
      case LayerKind::flatten:
        break;
    }
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

Arch arch_from_text(std::string_view text) {
  Arch arch;
  arch.layers.clear();
  std::istringstream is{std::string(text)};
  std::string line;
  bool saw_header = false;
  bool saw_end = false;
  while (std::getline(is, line)) {
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (!saw_header) {
      if (tok[0] != kArchMagic || tok.size() != 2) throw FormatError("missing sra-arch header");
      if (parse_index(tok[1], "arch version") != kArchTextVersion) {
        throw VersionMismatchError("unsupported arch text version " + tok[1]);
      }
      saw_header = true;
      continue;
    }
    const std::string& key = tok[0];
    if (key == "end") {
      saw_end = true;
      break;
    } else if (key == "name" && tok.size() == 2) {
      arch.name = tok[1];
    } else if (key == "input" && tok.size() == 4) {
      arch.channels = parse_index(tok[1], "channels");
      arch.height = parse_index(tok[2], "height");
      arch.width = parse_index(tok[3], "width");
    } else if (key == "classes" && tok.size() == 2) {
      arch.classes = parse_index(tok[1], "classes");
    } else if (key == "mean" || key == "std") {
      auto& dst = key == "mean" ? arch.input_mean : arch.input_std;
      for (std::size_t i = 1; i < tok.size(); ++i) dst.push_back(std::stod(tok[i]));
    } else if (key == "layer" && tok.size() >= 2) {
      LayerSpec l;
      l.kind = parse_layer_kind(tok[1]);
      for (std::size_t i = 2; i < tok.size(); ++i) {
        auto eq = tok[i].find('=');
        if (eq == std::string::npos) throw FormatError("bad layer attribute '" + tok[i] + "'");
        std::string_view k(tok[i].data(), eq);
        std::string_view v(tok[i].data() + eq + 1, tok[i].size() - eq - 1);
        Index value = parse_index(v, k);
        if (k == "in") l.in = value;
        else if (k == "out") l.out = value;
        else if (k == "kernel") l.kernel = value;
        else if (k == "stride") l.stride = value;
        else if (k == "padding") l.padding = value;
        else if (k == "groups") l.groups = value;
        else if (k == "source") l.source = value;
        else throw FormatError("unknown layer attribute '" + std::string(k) + "'");
      }
      arch.layers.push_back(l);
    } else {
      throw FormatError("unrecognized arch line: '" + line + "'");
    }
  }
  if (!saw_header || !saw_end) throw FormatError("truncated architecture block");
  validate(arch);
  return arch;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t arch_hash(const Arch& arch) { return fnv1a64(arch_to_text(arch)); }

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Index layer_param_count(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::dense: return l.in * l.out + l.out;
    case LayerKind::conv2d: return l.out * (l.in / l.groups) * l.kernel * l.kernel + l.out;
    case LayerKind::batchnorm: return 4 * l.in;
    default: return 0;
  }
}

Index param_count(const Arch& arch) {
  Index n = 0;
  for (const auto& l : arch.layers) n += layer_param_count(l);
  return n;
}

namespace archs {

Arch mlp(const std::vector<Index>& widths) {
  if (widths.size() < 2) throw ShapeError("mlp needs at least input and output widths");
  Arch a;
  a.name = "mlp";
  for (std::size_t i = 0; i < widths.size(); ++i) a.name += (i ? "_" : ":") + std::to_string(widths[i]);
  a.channels = widths.front();
  a.classes = widths.back();
  a.layers.push_back(LayerSpec::flatten());
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    a.layers.push_back(LayerSpec::dense(widths[i], widths[i + 1]));
    if (i + 2 < widths.size()) a.layers.push_back(LayerSpec::relu());
  }
  validate(a);
  return a;
}

namespace {

Arch vgg_like(std::string name, Index c1, Index c2, Index c3) {
  Arch a;
  a.name = std::move(name);
  a.channels = 1;
  a.height = 28;
  a.width = 28;
  a.classes = 10;
  a.layers = {
      LayerSpec::conv2d(1, c1, 3, 1, 1),  LayerSpec::batchnorm(c1), LayerSpec::relu(),
      LayerSpec::maxpool(2, 2),
      LayerSpec::conv2d(c1, c2, 3, 1, 1), LayerSpec::batchnorm(c2), LayerSpec::relu(),
      LayerSpec::maxpool(2, 2),
      LayerSpec::conv2d(c2, c3, 3, 1, 1), LayerSpec::batchnorm(c3), LayerSpec::relu(),
      LayerSpec::maxpool(7, 7),
      LayerSpec::flatten(),
      LayerSpec::dense(c3, 10),
  };
  validate(a);
  return a;
}

}  // namespace

Arch toy_vgg() { return vgg_like("toy_vgg", 32, 64, 64); }

Arch toy_cnn() { return vgg_like("toy_cnn", 8, 16, 16); }

Arch toy_resnet() {
  Arch a;
  a.name = "toy_resnet";
  a.channels = 1;
  a.height = 28;
  a.width = 28;
  a.classes = 10;
  a.layers = {
      LayerSpec::conv2d(1, 8, 3, 1, 1),   // 0
      LayerSpec::batchnorm(8),            // 1
      LayerSpec::relu(),                  // 2
      LayerSpec::maxpool(2, 2),           // 3  -> 8x14x14
      LayerSpec::conv2d(8, 8, 3, 1, 1),   // 4
      LayerSpec::batchnorm(8),            // 5
      LayerSpec::relu(),                  // 6
      LayerSpec::conv2d(8, 8, 3, 1, 1),   // 7
      LayerSpec::batchnorm(8),            // 8
      LayerSpec::residual_add(3),         // 9
      LayerSpec::relu(),                  // 10
      LayerSpec::maxpool(2, 2),           // 11 -> 8x7x7
      LayerSpec::conv2d(8, 16, 3, 1, 1),  // 12
      LayerSpec::batchnorm(16),           // 13
      LayerSpec::relu(),                  // 14
      LayerSpec::maxpool(7, 7),           // 15
      LayerSpec::flatten(),               // 16
      LayerSpec::dense(16, 10),           // 17
  };
  validate(a);
  return a;
}

Arch by_name(std::string_view name) {
  if (name == "toy_vgg") return toy_vgg();
  if (name == "toy_cnn") return toy_cnn();
  if (name == "toy_resnet") return toy_resnet();
  if (name.starts_with("mlp:")) {
    std::vector<Index> widths;
    std::string rest(name.substr(4));
    std::istringstream is(rest);
    std::string part;
    while (std::getline(is, part, ',')) widths.push_back(parse_index(part, "mlp width"));
    return mlp(widths);
  }
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

}  // namespace archs

}  // namespace sra

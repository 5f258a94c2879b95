#include "sra/params.hpp"

#include <map>

namespace sra {

std::string_view to_string(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::bn_scale: return "bn_scale";
    case ParamRole::bn_shift: return "bn_shift";
    case ParamRole::bn_mean: return "bn_mean";
    case ParamRole::bn_var: return "bn_var";
  }
  return "?";
}

ParamRole parse_param_role(std::string_view name) {
  static const std::map<std::string_view, ParamRole> roles = {
      {"weight", ParamRole::weight},     {"bias", ParamRole::bias},
      {"bn_scale", ParamRole::bn_scale}, {"bn_shift", ParamRole::bn_shift},
      {"bn_mean", ParamRole::bn_mean},   {"bn_var", ParamRole::bn_var}};
  auto it = roles.find(name);
  if (it == roles.end()) throw SpecError("unknown parameter role '" + std::string(name) + "'");
  return it->second;
}

std::string ParamInfo::name() const {
  return "layers." + std::to_string(layer) + "." + std::string(to_string(role));
}

std::vector<ParamInfo> param_layout(const Arch& arch, bool trainable_only) {
  std::vector<ParamInfo> out;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    const auto idx = static_cast<Index>(i);
    switch (l.kind) {
      case LayerKind::dense:
        out.push_back({idx, ParamRole::weight, {l.out, l.in}});
        out.push_back({idx, ParamRole::bias, {l.out}});
        break;
      case LayerKind::conv2d:
        out.push_back({idx, ParamRole::weight, {l.out, l.in / l.groups, l.kernel, l.kernel}});
        out.push_back({idx, ParamRole::bias, {l.out}});
        break;
      case LayerKind::batchnorm:
        out.push_back({idx, ParamRole::bn_scale, {l.in}});
        out.push_back({idx, ParamRole::bn_shift, {l.in}});
        if (!trainable_only) {
          out.push_back({idx, ParamRole::bn_mean, {l.in}});
          out.push_back({idx, ParamRole::bn_var, {l.in}});
        }
        break;
      default:
        break;
    }
  }
  return out;
}

}  // namespace sra

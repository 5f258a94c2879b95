#include "sra/subnet.hpp"

#include <cmath>
#include <cstdio>

#include "sra/errors.hpp"
#include "sra/model_format.hpp"

namespace sra {

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw FormatError(std::string("bad value for ") + what + ": '" + s + "'");
}

}  // namespace

Eigen::ArrayXf subnet_outputs(const BackdoorSubnet& subnet, const Tensor<float>& batch, Index chunk) {
  if (subnet.model.arch.classes != 1) throw ShapeError("backdoor subnet must have a scalar output");
  return predict_logits(subnet.model, batch, chunk).values();
}

Model subnet_to_model(const BackdoorSubnet& subnet) {
  if (!std::isfinite(subnet.wiring.w_out) || !std::isfinite(subnet.wiring.delta_b)) {
    throw NumericError("subnet wiring is not finite");
  }
  Model m = subnet.model;
  m.meta["subnet.w_out"] = exact(subnet.wiring.w_out);
  m.meta["subnet.delta_b"] = exact(subnet.wiring.delta_b);
  if (!subnet.trigger_id.empty()) m.meta["subnet.trigger"] = subnet.trigger_id;
  if (!subnet.config_hash.empty()) m.meta["subnet.config_hash"] = subnet.config_hash;
  return m;
}

BackdoorSubnet subnet_from_model(Model model) {
  if (model.arch.classes != 1) throw FormatError("model is not a backdoor subnet (output is not scalar)");
  BackdoorSubnet s;
  auto take = [&](const std::string& key) -> std::string {
    auto it = model.meta.find(key);
    if (it == model.meta.end()) return {};
    std::string v = it->second;
    model.meta.erase(it);
    return v;
  };
  const std::string w = take("subnet.w_out");
  const std::string b = take("subnet.delta_b");
  if (!w.empty()) s.wiring.w_out = parse_double(w, "subnet.w_out");
  if (!b.empty()) s.wiring.delta_b = parse_double(b, "subnet.delta_b");
  s.trigger_id = take("subnet.trigger");
  s.config_hash = take("subnet.config_hash");
  s.model = std::move(model);
  return s;
}

void save_subnet(const BackdoorSubnet& subnet, const std::filesystem::path& path) {
  save_model(subnet_to_model(subnet), path);
}

BackdoorSubnet load_subnet(const std::filesystem::path& path) { return subnet_from_model(load_model(path)); }

}  // namespace sra

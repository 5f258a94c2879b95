#pragma once

#include <cmath>
#include <random>

namespace sra {

template <typename Scalar, typename Rng>
ParamSet<Scalar> init_params(const Arch& arch, Rng& rng) {
  validate(arch);
  auto params = ParamSet<Scalar>::zeros(arch);
  for (auto& p : params) {
    const LayerSpec& layer = arch.layers[static_cast<std::size_t>(p.info.layer)];
    switch (p.info.role) {
      case ParamRole::weight: {
        const Index fan_in = p.value.size() / layer.out;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<Scalar>(dist(rng));
        break;
      }
      case ParamRole::bn_scale:
      case ParamRole::bn_var:
        p.value.values().setOnes();
        break;
      default:
        break;
    }
  }
  return params;
}

}  // namespace sra

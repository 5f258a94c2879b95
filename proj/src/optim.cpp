#include "sra/optim.hpp"

#include <cmath>
#include <string>

namespace sra {

namespace {

template <typename Scalar>
void ensure_state(ParamSet<Scalar>& slot, const Gradients<Scalar>& grads) {
  if (slot.size() == grads.size()) return;
  slot = ParamSet<Scalar>();
  for (const auto& g : grads) slot.push_back({g.info, Tensor<Scalar>(g.value.shape())});
}

template <typename Scalar>
Tensor<Scalar>& matching_param(ParamSet<Scalar>& params, const Param<Scalar>& g) {
  auto& p = params.at(g.info.layer, g.info.role);
  if (p.shape() != g.value.shape()) {
    throw ShapeError("gradient shape mismatch for " + g.info.name());
  }
  return p;
}

}  // namespace

void validate(const SgdConfig& cfg) {
  if (!(cfg.lr > 0)) throw ConfigError("sgd: lr must be > 0");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw ConfigError("sgd: momentum must be in [0,1)");
  if (cfg.weight_decay < 0) throw ConfigError("sgd: weight_decay must be >= 0");
}

void validate(const AdamConfig& cfg) {
  if (!(cfg.lr > 0)) throw ConfigError("adam: lr must be > 0");
  if (!(cfg.beta1 > 0 && cfg.beta1 < 1)) throw ConfigError("adam: beta1 must be in (0,1)");
  if (!(cfg.beta2 > 0 && cfg.beta2 < 1)) throw ConfigError("adam: beta2 must be in (0,1)");
  if (!(cfg.eps > 0)) throw ConfigError("adam: eps must be > 0");
  if (cfg.weight_decay < 0) throw ConfigError("adam: weight_decay must be >= 0");
}

template <typename Scalar>
void sgd_step(ParamSet<Scalar>& params, const Gradients<Scalar>& grads, OptimizerState<Scalar>& state,
              const SgdConfig& cfg) {
  validate(cfg);
  const bool use_momentum = cfg.momentum > 0;
  if (use_momentum) ensure_state(state.first, grads);
  const auto lr = static_cast<Scalar>(cfg.lr);
  const auto wd = static_cast<Scalar>(cfg.weight_decay);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& g = grads[i];
    auto& p = matching_param(params, g);
    auto step = g.value.values() + wd * p.values();
    if (use_momentum) {
      auto& v = state.first[i].value.values();
      v = static_cast<Scalar>(cfg.momentum) * v + step;
      p.values() -= lr * v;
    } else {
      p.values() -= lr * step;
    }
  }
  ++state.step;
}

template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const Gradients<Scalar>& grads, OptimizerState<Scalar>& state,
               const AdamConfig& cfg) {
  validate(cfg);
  ensure_state(state.first, grads);
  ensure_state(state.second, grads);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto corr1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const auto corr2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const auto lr = static_cast<Scalar>(cfg.lr);
  const auto eps = static_cast<Scalar>(cfg.eps);
  const auto wd = static_cast<Scalar>(cfg.weight_decay);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& g = grads[i];
    auto& p = matching_param(params, g);
    auto& m = state.first[i].value.values();
    auto& v = state.second[i].value.values();
    typename Tensor<Scalar>::Array grad = g.value.values() + wd * p.values();
    m = b1 * m + (Scalar(1) - b1) * grad;
    v = b2 * v + (Scalar(1) - b2) * grad.square();
    p.values() -= lr * (m / corr1) / ((v / corr2).sqrt() + eps);
  }
}

template void sgd_step(ParamSet<float>&, const Gradients<float>&, OptimizerState<float>&, const SgdConfig&);
template void sgd_step(ParamSet<double>&, const Gradients<double>&, OptimizerState<double>&, const SgdConfig&);
template void adam_step(ParamSet<float>&, const Gradients<float>&, OptimizerState<float>&, const AdamConfig&);
template void adam_step(ParamSet<double>&, const Gradients<double>&, OptimizerState<double>&, const AdamConfig&);

}  // namespace sra

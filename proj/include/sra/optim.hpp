#pragma once

#include "sra/params.hpp"

namespace sra {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 added to the gradient
};

/// Velocity (sgd) or first/second moments (adam), keyed like the gradients.
template <typename Scalar>
struct OptimizerState {
  ParamSet<Scalar> first;
  ParamSet<Scalar> second;
  long long step = 0;
};

/// Throws ConfigError for lr <= 0, momentum outside [0,1), betas outside (0,1).
void validate(const SgdConfig& cfg);
void validate(const AdamConfig& cfg);

/// In-place update of every trainable parameter present in `grads`.
template <typename Scalar>
void sgd_step(ParamSet<Scalar>& params, const Gradients<Scalar>& grads, OptimizerState<Scalar>& state,
              const SgdConfig& cfg);

template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const Gradients<Scalar>& grads, OptimizerState<Scalar>& state,
               const AdamConfig& cfg);

}  // namespace sra

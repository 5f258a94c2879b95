#pragma once

// Central finite-difference oracle for the engine's backward pass. Test-only:
// it reuses forward() but never backward().

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sra/network.hpp"
#include "sra/random.hpp"

namespace sra::testing {

struct GradCheckResult {
  double max_rel_error = 0;  // max |analytic - numeric| / gradient scale
  Index checked = 0;
};

// Loss = sum(R * logits), accumulated in double.
template <typename Scalar>
double probe_loss(const Arch& arch, const ParamSet<Scalar>& params, const Tensor<Scalar>& x, Mode mode,
                  const Tensor<Scalar>& r) {
  Tensor<Scalar> y = forward(arch, params, x, mode);
  double acc = 0;
  for (Index i = 0; i < y.size(); ++i) acc += static_cast<double>(r[i]) * static_cast<double>(y[i]);
  return acc;
}

template <typename Scalar>
GradCheckResult gradcheck(const Arch& arch, const ParamSet<Scalar>& params, const Tensor<Scalar>& x, Mode mode,
                          double step, Rng& rng) {
  ForwardCache<Scalar> cache;
  Tensor<Scalar> y = forward(arch, params, x, mode, &cache);
  Tensor<Scalar> r(y.shape());
  std::normal_distribution<double> normal;
  for (Index i = 0; i < r.size(); ++i) r[i] = static_cast<Scalar>(normal(rng));
  Tensor<Scalar> dx;
  Gradients<Scalar> grads = backward(arch, params, cache, r, &dx);

  std::vector<double> analytic, numeric;
  const auto h = static_cast<Scalar>(step);
  for (const auto& g : grads) {
    for (Index k = 0; k < g.value.size(); ++k) {
      ParamSet<Scalar> plus = params, minus = params;
      plus.at(g.info.layer, g.info.role)[k] += h;
      minus.at(g.info.layer, g.info.role)[k] -= h;
      const double actual_h = 0.5 * (static_cast<double>(plus.at(g.info.layer, g.info.role)[k]) -
                                     static_cast<double>(minus.at(g.info.layer, g.info.role)[k]));
      numeric.push_back((probe_loss(arch, plus, x, mode, r) - probe_loss(arch, minus, x, mode, r)) /
                        (2 * actual_h));
      analytic.push_back(static_cast<double>(g.value[k]));
    }
  }
  for (Index k = 0; k < x.size(); ++k) {
    Tensor<Scalar> plus = x, minus = x;
    plus[k] += h;
    minus[k] -= h;
    const double actual_h = 0.5 * (static_cast<double>(plus[k]) - static_cast<double>(minus[k]));
    numeric.push_back((probe_loss(arch, params, plus, mode, r) - probe_loss(arch, params, minus, mode, r)) /
                      (2 * actual_h));
    analytic.push_back(static_cast<double>(dx[k]));
  }
  double scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  GradCheckResult res;
  res.checked = static_cast<Index>(analytic.size());
  if (scale == 0) return res;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return res;
}

enum class MicroKind { dense, conv2d, grouped_conv, batchnorm_train, batchnorm_eval, batchnorm_dense, relu,
                       maxpool, avgpool, flatten, residual_add };

inline const std::vector<MicroKind>& all_micro_kinds() {
  static const std::vector<MicroKind> kinds = {
      MicroKind::dense,           MicroKind::conv2d,  MicroKind::grouped_conv, MicroKind::batchnorm_train,
      MicroKind::batchnorm_eval,  MicroKind::batchnorm_dense, MicroKind::relu, MicroKind::maxpool,
      MicroKind::avgpool,         MicroKind::flatten, MicroKind::residual_add};
  return kinds;
}

inline std::string micro_name(MicroKind k) {
  switch (k) {
    case MicroKind::dense: return "dense";
    case MicroKind::conv2d: return "conv2d";
    case MicroKind::grouped_conv: return "conv2d(groups)";
    case MicroKind::batchnorm_train: return "batchnorm(train)";
    case MicroKind::batchnorm_eval: return "batchnorm(eval)";
    case MicroKind::batchnorm_dense: return "batchnorm(dense)";
    case MicroKind::relu: return "relu";
    case MicroKind::maxpool: return "maxpool";
    case MicroKind::avgpool: return "avgpool";
    case MicroKind::flatten: return "flatten";
    case MicroKind::residual_add: return "residual_add";
  }
  return "?";
}

template <typename Scalar>
struct MicroInstance {
  Arch arch;
  ParamSet<Scalar> params;
  Tensor<Scalar> input;
  Mode mode = Mode::train;
};

// Random small instance exercising one layer kind. Inputs to relu and
// maxpool are kept away from kinks and ties so central differences are valid.
template <typename Scalar>
MicroInstance<Scalar> make_micro(MicroKind kind, Rng& rng) {
  auto pick = [&](long long lo, long long hi) { return static_cast<Index>(uniform_int(rng, lo, hi)); };
  MicroInstance<Scalar> m;
  Arch& a = m.arch;
  a.name = micro_name(kind);
  a.classes = pick(2, 3);
  // Batchnorm in train mode needs a few samples per feature for a
  // well-conditioned batch variance.
  const bool batch_stats = kind == MicroKind::batchnorm_train || kind == MicroKind::batchnorm_dense;
  const Index n = batch_stats ? pick(4, 6) : pick(2, 3);
  a.channels = pick(1, 3);
  a.height = pick(3, 5);
  a.width = pick(3, 5);
  auto head = [&](Shape cur) {
    a.layers.push_back(LayerSpec::flatten());
    a.layers.push_back(LayerSpec::dense(shape_size(cur), a.classes));
  };
  switch (kind) {
    case MicroKind::dense:
      a.layers.push_back(LayerSpec::flatten());
      a.layers.push_back(LayerSpec::dense(a.channels * a.height * a.width, 4));
      a.layers.push_back(LayerSpec::dense(4, a.classes));
      break;
    case MicroKind::conv2d: {
      const Index k = pick(1, 3), s = pick(1, 2), p = pick(0, 1), out = pick(1, 3);
      a.layers.push_back(LayerSpec::conv2d(a.channels, out, k, s, p));
      head(layer_output_shapes(a).back());
      break;
    }
    case MicroKind::grouped_conv: {
      a.channels = 4;
      const Index g = pick(0, 1) ? 2 : 4;
      a.layers.push_back(LayerSpec::conv2d(4, g == 4 ? 4 : 2 * pick(1, 2), 3, 1, 1, g));
      head(layer_output_shapes(a).back());
      break;
    }
    case MicroKind::batchnorm_train:
    case MicroKind::batchnorm_eval:
      a.layers.push_back(LayerSpec::batchnorm(a.channels));
      head(a.input_shape());
      m.mode = kind == MicroKind::batchnorm_train ? Mode::train : Mode::eval;
      break;
    case MicroKind::batchnorm_dense:
      a.layers.push_back(LayerSpec::flatten());
      a.layers.push_back(LayerSpec::dense(a.channels * a.height * a.width, 3));
      a.layers.push_back(LayerSpec::batchnorm(3));
      a.layers.push_back(LayerSpec::dense(3, a.classes));
      break;
    case MicroKind::relu:
      a.layers.push_back(LayerSpec::relu());
      head(a.input_shape());
      break;
    case MicroKind::maxpool:
    case MicroKind::avgpool: {
      const Index k = pick(2, 3), s = pick(1, 2);
      a.height = pick(k, 5);
      a.width = pick(k, 5);
      a.layers.push_back(kind == MicroKind::maxpool ? LayerSpec::maxpool(k, s) : LayerSpec::avgpool(k, s));
      head(layer_output_shapes(a).back());
      break;
    }
    case MicroKind::flatten:
      head(a.input_shape());
      break;
    case MicroKind::residual_add:
      a.layers.push_back(LayerSpec::conv2d(a.channels, a.channels, 3, 1, 1));
      a.layers.push_back(LayerSpec::conv2d(a.channels, a.channels, 3, 1, 1));
      a.layers.push_back(LayerSpec::residual_add(0));
      head(a.input_shape());
      break;
  }
  validate(a);
  m.params = init_params<Scalar>(a, rng);
  // Randomize biases and bn parameters so they are exercised too.
  for (auto& p : m.params) {
    for (Index i = 0; i < p.value.size(); ++i) {
      switch (p.info.role) {
        case ParamRole::bias:
        case ParamRole::bn_shift:
        case ParamRole::bn_mean:
          p.value[i] = static_cast<Scalar>(uniform(rng, -0.5, 0.5));
          break;
        case ParamRole::bn_scale:
        case ParamRole::bn_var:
          p.value[i] = static_cast<Scalar>(uniform(rng, 0.5, 1.5));
          break;
        default:
          break;
      }
    }
  }
  m.input = Tensor<Scalar>({n, a.channels, a.height, a.width});
  if (kind == MicroKind::maxpool) {
    // Distinct values 0.05 apart, shuffled.
    std::vector<Index> order(static_cast<std::size_t>(m.input.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) m.input[order[i]] = static_cast<Scalar>(0.05 * (static_cast<double>(i) - order.size() / 2.0));
  } else if (kind == MicroKind::relu) {
    for (Index i = 0; i < m.input.size(); ++i) {
      const double mag = uniform(rng, 0.1, 1.0);
      m.input[i] = static_cast<Scalar>(uniform01(rng) < 0.5 ? -mag : mag);
    }
  } else {
    for (Index i = 0; i < m.input.size(); ++i) m.input[i] = static_cast<Scalar>(uniform(rng, -1.0, 1.0));
  }
  return m;
}

}  // namespace sra::testing

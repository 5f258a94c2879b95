#pragma once

// Random architectures, models and subnets shared by the unit and acceptance tests.

#include <string>

#include "sra/model.hpp"
#include "sra/random.hpp"
#include "sra/structure_graph.hpp"
#include "sra/subnet.hpp"

namespace sra::testing {

/// Every parameter random, including biases and bn running statistics, so
/// no element coincides with an overwrite value by accident.
inline Model random_model(const Arch& arch, std::uint64_t seed) {
  Model m = make_model(arch, seed);
  Rng rng(derive_seed(seed, 77));
  for (auto& p : m.params) {
    for (Index i = 0; i < p.value.size(); ++i) {
      switch (p.info.role) {
        case ParamRole::bn_var:
        case ParamRole::bn_scale:
          p.value[i] = static_cast<float>(uniform(rng, 0.5, 1.5));
          break;
        case ParamRole::weight:
          break;
        default:
          p.value[i] = static_cast<float>(uniform(rng, -0.5, 0.5));
      }
    }
  }
  return m;
}

inline BackdoorSubnet random_subnet(const Arch& narrow, std::uint64_t seed, OutputWiring wiring = {2.5, -1.25}) {
  BackdoorSubnet s;
  s.model = random_model(narrow, seed);
  s.wiring = wiring;
  return s;
}

/// Small random architecture from a handful of families: plain MLP, VGG-style
/// CNN with global pooling, CNN with a flatten into a hidden dense layer,
/// residual block, and grouped/depthwise convolutions.
inline Arch random_arch(Rng& rng, int family = -1) {
  auto pick = [&](long long lo, long long hi) { return static_cast<Index>(uniform_int(rng, lo, hi)); };
  if (family < 0) family = static_cast<int>(uniform_int(rng, 0, 4));
  Arch a;
  a.classes = pick(2, 5);
  switch (family) {
    case 0: {
      std::vector<Index> widths{pick(2, 6)};
      const Index hidden = pick(2, 4);
      for (Index h = 0; h < hidden; ++h) widths.push_back(pick(3, 7));
      widths.push_back(a.classes);
      a = archs::mlp(widths);
      break;
    }
    case 1: {
      a.name = "rand_cnn";
      a.channels = pick(1, 3);
      a.height = a.width = 8;
      const Index c1 = pick(3, 6), c2 = pick(3, 6);
      a.layers = {LayerSpec::conv2d(a.channels, c1, 3, 1, 1), LayerSpec::batchnorm(c1), LayerSpec::relu(),
                  LayerSpec::maxpool(2, 2),
                  LayerSpec::conv2d(c1, c2, 3, 1, 1), LayerSpec::batchnorm(c2), LayerSpec::relu(),
                  LayerSpec::avgpool(4, 4), LayerSpec::flatten(), LayerSpec::dense(c2, a.classes)};
      break;
    }
    case 2: {
      a.name = "rand_flat";
      a.channels = pick(1, 2);
      a.height = a.width = 5;
      const Index c1 = pick(3, 5), h = pick(3, 6);
      a.layers = {LayerSpec::conv2d(a.channels, c1, 3), LayerSpec::relu(), LayerSpec::flatten(),
                  LayerSpec::dense(c1 * 9, h), LayerSpec::batchnorm(h), LayerSpec::relu(),
                  LayerSpec::dense(h, a.classes)};
      break;
    }
    case 3: {
      a.name = "rand_res";
      a.channels = 1;
      a.height = a.width = 6;
      const Index c = pick(3, 5), c2 = pick(3, 5);
      a.layers = {LayerSpec::conv2d(1, c, 3, 1, 1), LayerSpec::batchnorm(c), LayerSpec::relu(),     // 0-2
                  LayerSpec::conv2d(c, c, 3, 1, 1), LayerSpec::batchnorm(c), LayerSpec::relu(),     // 3-5
                  LayerSpec::conv2d(c, c, 3, 1, 1), LayerSpec::batchnorm(c),                        // 6-7
                  LayerSpec::residual_add(2), LayerSpec::relu(),                                    // 8-9
                  LayerSpec::conv2d(c, c2, 3, 2, 1), LayerSpec::relu(),                             // 10-11
                  LayerSpec::avgpool(3, 3), LayerSpec::flatten(), LayerSpec::dense(c2, a.classes)};
      break;
    }
    default: {
      a.name = "rand_grouped";
      a.channels = 1;
      a.height = a.width = 6;
      const Index g = 2, per = pick(2, 3);
      a.layers = {LayerSpec::conv2d(1, g * per, 3, 1, 1), LayerSpec::relu(),
                  LayerSpec::conv2d(g * per, g * 3, 3, 1, 1, g), LayerSpec::batchnorm(g * 3), LayerSpec::relu(),
                  LayerSpec::conv2d(g * 3, g * 3, 3, 1, 1, g * 3), LayerSpec::relu(),
                  LayerSpec::avgpool(6, 6), LayerSpec::flatten(), LayerSpec::dense(g * 3, a.classes)};
      break;
    }
  }
  validate(a);
  return a;
}

inline Tensor<float> random_images(const Arch& arch, Index n, Rng& rng) {
  Tensor<float> x({n, arch.channels, arch.height, arch.width});
  for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(uniform01(rng));
  return x;
}

}  // namespace sra::testing

#pragma once

#include <filesystem>
#include <string>

#include "sra/model.hpp"

namespace sra {

/// How the subnet's scalar output enters the victim: the target logit gains
/// w_out * F(x) + delta_b.
struct OutputWiring {
  double w_out = 1.0;
  double delta_b = 0.0;

  friend bool operator==(const OutputWiring&, const OutputWiring&) = default;
};

/// A narrow model with scalar output (classes == 1) plus its wiring.
struct BackdoorSubnet {
  Model model;
  OutputWiring wiring;
  std::string trigger_id;
  std::string config_hash;
};

/// Scalar subnet outputs, one per sample.
Eigen::ArrayXf subnet_outputs(const BackdoorSubnet& subnet, const Tensor<float>& batch, Index chunk = 256);

/// Subnets persist as ordinary model files; wiring and provenance live in
/// header meta entries.
void save_subnet(const BackdoorSubnet& subnet, const std::filesystem::path& path);
BackdoorSubnet load_subnet(const std::filesystem::path& path);
Model subnet_to_model(const BackdoorSubnet& subnet);
BackdoorSubnet subnet_from_model(Model model);

}  // namespace sra

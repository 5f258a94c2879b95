#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sra/dataset.hpp"
#include "sra/model.hpp"
#include "sra/structure_graph.hpp"
#include "sra/subnet.hpp"
#include "sra/trigger.hpp"

namespace sra {

/// Input-gradient norms of the two parts of an attacked target logit:
/// the wired subnet w_out * F(x) and the pruned victim's target logit.
struct GradReport {
  std::vector<double> subnet_norm;
  std::vector<double> benign_norm;
  std::vector<double> ratio;  // subnet / benign, benign floored at 1e-12
  double mean_ratio = 0;
  double median_ratio = 0;
  double max_ratio = 0;
  double max_decomposition_error = 0;  // relative, against the attacked model's own gradient
};

/// Gradient of one class logit w.r.t. the raw input, per sample.
Tensor<float> logit_input_grad(const Model& model, const Tensor<float>& images, int cls);

/// `attacked` must be `victim` after replace_subnet with this subnet and
/// spec, or anything that agrees with it on the selected positions.
GradReport grad_ratio(const Model& attacked, const SubnetSpec& spec, const BackdoorSubnet& subnet,
                      const Tensor<float>& samples);

struct ReverseConfig {
  int iterations = 500;
  double l1_weight = 1e-2;
  double lr = 0.1;
  Index batch_size = 32;
  Index eval_samples = 200;
  int eval_every = 10;
  double success = 0.99;  // ASR a candidate needs to count
  std::uint64_t seed = 1;
};

void validate(const ReverseConfig& cfg);

struct TracePoint {
  int iteration = 0;
  double loss = 0;
  double l1 = 0;
  double asr = 0;
};

struct RestoredTrigger {
  int cls = 0;
  Tensor<float> mask;     // (H, W) in [0,1]
  Tensor<float> pattern;  // (C, H, W) in [0,1]
  double l1 = 0;          // sum of mask entries
  double asr = 0;         // on the evaluation samples
  bool reached = false;   // some checkpoint met cfg.success
  std::vector<TracePoint> trace;
};

/// Optimizes a mask and pattern (both through a sigmoid) with Adam so that
/// (1 - m) x + m p is classified as `cls`, penalizing sum(m). Keeps the
/// smallest mask among checkpoints reaching cfg.success, or the highest-ASR
/// checkpoint when none does.
RestoredTrigger reverse_trigger(const Model& model, int cls, const Dataset& data, const ReverseConfig& cfg = {});

/// Stamps a restored trigger into a batch.
Tensor<float> apply_restored(const Tensor<float>& images, const RestoredTrigger& t);

struct ModelComparison {
  RestoredTrigger clean;
  RestoredTrigger dp;
  RestoredTrigger sra;
  double sra_over_dp = 0;
  double sra_over_clean = 0;
  double sra_trigger_asr_on_clean = 0;  // restored SRA trigger applied to the clean model
  double sra_trigger_asr_on_sra = 0;
};

ModelComparison compare_models(const Model& clean, const Model& dp, const Model& sra, int cls, const Dataset& data,
                               const ReverseConfig& cfg = {});

/// mask.pgm, pattern.p[gp]m and metrics.txt under `dir`.
void save_restored(const RestoredTrigger& t, const std::filesystem::path& dir);
std::string comparison_text(const ModelComparison& c);

}  // namespace sra

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sra/dataset.hpp"
#include "sra/model.hpp"
#include "sra/optim.hpp"
#include "sra/subnet.hpp"
#include "sra/trigger.hpp"

namespace sra {

/// Shared by victim, poisoned and subnet training. `a` and `lambda` only
/// matter for subnets.
struct TrainerConfig {
  double a = 20.0;
  double lambda = 1.0;
  int epochs = 5;
  Index batch_size = 64;
  AdamConfig adam;
  bool physical = false;
  std::uint64_t seed = 1;
  int restarts = 4;  // subnet training only: extra seeded attempts when stuck
  double final_lr_fraction = 1.0;  // cosine decay of the learning rate to lr * this

  /// Defaults used by the workbench and the acceptance runs.
  static TrainerConfig victim_defaults();
  static TrainerConfig subnet_defaults();
};

void validate(const TrainerConfig& cfg);
std::string config_text(const TrainerConfig& cfg);

/// Top-1 accuracy in eval mode.
double accuracy(const Model& model, const Dataset& data);

/// Softmax cross-entropy training. When `test` is given its accuracy is
/// recorded in meta["train.clean_accuracy"].
Model train_victim(const Arch& arch, const Dataset& train, const TrainerConfig& cfg,
                   const Dataset* test = nullptr);

/// Classic data poisoning: a fixed seeded subset of `rate * N` training
/// samples is replaced by triggered copies relabelled `target`. rate == 0 is
/// exactly train_victim.
Model train_poisoned(const Arch& arch, const Dataset& train, const TriggerSpec& trigger, double rate, int target,
                     const TrainerConfig& cfg, const Dataset* test = nullptr);

struct SubnetTraining {
  BackdoorSubnet subnet;  // wiring left at {1, 0}
  std::vector<double> epoch_loss;  // of the attempt kept
  int attempts = 1;
  bool converged = false;  // final loss below 10% of the best constant output's loss
};

/// Minimizes mean (F(x))^2 + lambda * mean (F(T(x)) - a)^2 over paired clean
/// and triggered copies of each batch. Takes images only: labels are never
/// seen. In physical mode T draws from the trigger's perspective bank.
/// A width-1 path can stall at a constant output; such attempts are retried
/// with derived seeds (up to cfg.restarts more) and the lowest-loss one kept.
SubnetTraining train_backdoor_subnet(const Arch& narrow, const Tensor<float>& images, const TriggerSpec& trigger,
                                     const TrainerConfig& cfg);

struct ActivationHistogram {
  std::vector<double> clean;
  std::vector<double> triggered;
  std::vector<double> edges;  // bins + 1 edges covering both samples
  std::vector<Index> clean_counts;
  std::vector<Index> triggered_counts;
};

ActivationHistogram activation_histogram(const BackdoorSubnet& subnet, const Tensor<float>& images,
                                         const TriggerSpec& trigger, Rng& rng, Index bins = 40);

struct Separation {
  double auc = 0;  // P(triggered > clean), ties count half
  double max_clean = 0;
  double min_triggered = 0;
  bool separated = false;  // min triggered > max clean
};

Separation separation(const ActivationHistogram& hist);

enum class CalibrationMode { gap, youden, fixed };

/// gap: t sits just above the clean cluster (clean q99.5 plus `gap_fraction`
/// of the distance to triggered q0.5); falls back to youden when the clusters
/// overlap. youden: threshold maximizing TPR - FPR. fixed: t = `threshold`.
/// Gain: `gain` when positive, otherwise boost / (median triggered - t).
struct CalibrationPolicy {
  CalibrationMode mode = CalibrationMode::gap;
  double threshold = 0;
  double gain = 0;
  double boost = 20;
  double gap_fraction = 0.01;
};

CalibrationMode parse_calibration_mode(const std::string& s);
std::string to_string(CalibrationMode m);

struct Calibration {
  OutputWiring wiring;
  double threshold = 0;
  bool overlap = false;  // clusters overlap: best effort only
  std::string warning;
};

Calibration calibrate_output(const ActivationHistogram& hist, double a, const CalibrationPolicy& policy = {});

/// `count` thresholds evenly spaced between the clean and triggered medians
/// (exclusive), ascending.
std::vector<double> sweep_thresholds(const ActivationHistogram& hist, Index count = 8);

double quantile(std::vector<double> v, double q);

}  // namespace sra

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sra/dataset.hpp"
#include "sra/model.hpp"
#include "sra/structure_graph.hpp"
#include "sra/subnet.hpp"
#include "sra/trainer.hpp"
#include "sra/trigger.hpp"

namespace sra {

/// Whether samples whose true label is the target are left out of ASR.
enum class AsrPolicy { exclude_target, include_all };

std::vector<int> predict_labels(const Model& model, const Tensor<float>& images);

/// Fraction of (already triggered) images predicted as `target`.
double asr_on(const Model& model, const Tensor<float>& triggered, const std::vector<int>& labels, int target,
              AsrPolicy policy = AsrPolicy::exclude_target);

double asr(const Model& model, const Dataset& data, const TriggerSpec& trigger, int target, Rng& rng,
           AsrPolicy policy = AsrPolicy::exclude_target);

struct CadResult {
  double acc_before = 0;
  double acc_after = 0;
  double cad = 0;
};

CadResult cad(const Model& clean, const Model& attacked, const Dataset& data);

struct ObjectiveScore {
  double score = 0;
  Index floored = 0;  // probabilities clamped up to the floor
};

inline constexpr double kLogFloor = 1e-12;

/// Mean over samples of log p(y|x) + alpha * log p(target|T(x)).
ObjectiveScore objective_from_logits(const Tensor<float>& clean_logits, const std::vector<int>& labels,
                                     const Tensor<float>& triggered_logits, int target, double alpha);
ObjectiveScore objective_score(const Model& model, const Dataset& data, const TriggerSpec& trigger, int target,
                               double alpha, Rng& rng);

struct EvalReport {
  std::string trial;  // trial number, or "median"
  int victim = 0;
  std::uint64_t spec_seed = 0;
  double acc_before = 0;
  double acc_after = 0;
  double asr_before = 0;
  double asr_after = 0;
  double cad = 0;
  double objective = 0;
  double seconds = 0;
  bool asr_excludes_target = true;
  std::string error;  // empty when the trial succeeded

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct TrialTable {
  std::vector<EvalReport> rows;
  EvalReport median;

  friend bool operator==(const TrialTable&, const TrialTable&) = default;
};

struct TrialConfig {
  Index width = 1;
  int target = 0;
  int trials = 10;
  std::uint64_t seed = 1;
  double alpha = 1.0;
  AsrPolicy policy = AsrPolicy::exclude_target;
};

/// Trial k attacks victims[k % n] through a random spec seeded from
/// (seed, k) with the same subnet. A failing trial is recorded, not thrown.
TrialTable run_trials(const std::vector<Model>& victims, const BackdoorSubnet& subnet, const Dataset& data,
                      const TriggerSpec& trigger, const TrialConfig& cfg);

/// Element-wise lower median over successful rows.
EvalReport median_row(const std::vector<EvalReport>& rows);

enum class ReportFormat { csv, jsonl };
ReportFormat parse_report_format(const std::string& s);

void export_report(const TrialTable& table, const std::filesystem::path& path, ReportFormat format);
TrialTable import_report(const std::filesystem::path& path, ReportFormat format);

/// One calibration threshold on the ASR/CAD trade-off.
struct OperatingPoint {
  double threshold = 0;
  OutputWiring wiring;
  double asr = 0;
  double cad = 0;
};

/// Evaluates the attack at each threshold with a fixed gain, so the target
/// logit falls monotonically as the threshold rises.
std::vector<OperatingPoint> threshold_sweep(const Model& victim, const BackdoorSubnet& subnet, const SubnetSpec& spec,
                                            const Dataset& data, const TriggerSpec& trigger,
                                            const std::vector<double>& thresholds, double gain, Rng& rng);

/// Per-variant ASR over a physical trigger's bank: every image gets its own
/// random scale, brightness and placement of that variant.
std::vector<double> bank_asr(const Model& model, const Dataset& data, const TriggerSpec& trigger, int target, Rng& rng,
                             AsrPolicy policy = AsrPolicy::exclude_target);

}  // namespace sra

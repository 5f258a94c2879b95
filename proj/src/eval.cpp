#include "sra/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sra/errors.hpp"
#include "sra/loss.hpp"
#include "sra/surgery.hpp"

namespace sra {

namespace {

constexpr std::uint64_t kTrialStream = 0x7419;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_num(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw FormatError("bad number '" + s + "' in report column " + what);
}

const std::vector<std::string>& columns() {
  static const std::vector<std::string> c = {"trial",     "victim",    "spec_seed", "acc_before", "acc_after",
                                             "asr_before", "asr_after", "cad",       "objective",  "seconds",
                                             "asr_excludes_target",     "error"};
  return c;
}

// CSV fields are quoted only when they contain separators or quotes.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::vector<std::string> row_fields(const EvalReport& r) {
  return {r.trial,           std::to_string(r.victim), std::to_string(r.spec_seed), num(r.acc_before),
          num(r.acc_after),  num(r.asr_before),        num(r.asr_after),            num(r.cad),
          num(r.objective),  num(r.seconds),           r.asr_excludes_target ? "1" : "0", r.error};
}

EvalReport row_from_fields(const std::vector<std::string>& f) {
  if (f.size() != columns().size()) throw FormatError("report row has " + std::to_string(f.size()) + " fields");
  EvalReport r;
  r.trial = f[0];
  r.victim = static_cast<int>(parse_num(f[1], "victim"));
  try {
    r.spec_seed = std::stoull(f[2]);
  } catch (const std::logic_error&) {
    throw FormatError("bad spec_seed '" + f[2] + "'");
  }
  r.acc_before = parse_num(f[3], "acc_before");
  r.acc_after = parse_num(f[4], "acc_after");
  r.asr_before = parse_num(f[5], "asr_before");
  r.asr_after = parse_num(f[6], "asr_after");
  r.cad = parse_num(f[7], "cad");
  r.objective = parse_num(f[8], "objective");
  r.seconds = parse_num(f[9], "seconds");
  r.asr_excludes_target = f[10] == "1";
  r.error = f[11];
  return r;
}

nlohmann::ordered_json row_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["trial"] = r.trial;
  j["victim"] = r.victim;
  j["spec_seed"] = r.spec_seed;
  j["acc_before"] = r.acc_before;
  j["acc_after"] = r.acc_after;
  j["asr_before"] = r.asr_before;
  j["asr_after"] = r.asr_after;
  j["cad"] = r.cad;
  j["objective"] = r.objective;
  j["seconds"] = r.seconds;
  j["asr_excludes_target"] = r.asr_excludes_target;
  j["error"] = r.error;
  return j;
}

EvalReport row_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.trial = j.at("trial").get<std::string>();
  r.victim = j.at("victim").get<int>();
  r.spec_seed = j.at("spec_seed").get<std::uint64_t>();
  r.acc_before = j.at("acc_before").get<double>();
  r.acc_after = j.at("acc_after").get<double>();
  r.asr_before = j.at("asr_before").get<double>();
  r.asr_after = j.at("asr_after").get<double>();
  r.cad = j.at("cad").get<double>();
  r.objective = j.at("objective").get<double>();
  r.seconds = j.at("seconds").get<double>();
  r.asr_excludes_target = j.at("asr_excludes_target").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

double lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

}  // namespace

std::vector<int> predict_labels(const Model& model, const Tensor<float>& images) {
  const Tensor<float> logits = predict_logits(model, images);
  const Index n = images.dim(0), c = model.arch.classes;
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

double asr_on(const Model& model, const Tensor<float>& triggered, const std::vector<int>& labels, int target,
              AsrPolicy policy) {
  if (target < 0 || target >= model.arch.classes) throw ConfigError("target class out of range");
  const auto pred = predict_labels(model, triggered);
  Index hits = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (policy == AsrPolicy::exclude_target && labels[i] == target) continue;
    ++total;
    if (pred[i] == target) ++hits;
  }
  if (total == 0) throw ConfigError("no samples left for ASR after excluding the target class");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double asr(const Model& model, const Dataset& data, const TriggerSpec& trigger, int target, Rng& rng, AsrPolicy policy) {
  return asr_on(model, apply_trigger(data.images, trigger, rng), data.labels, target, policy);
}

CadResult cad(const Model& clean, const Model& attacked, const Dataset& data) {
  CadResult r;
  r.acc_before = accuracy(clean, data);
  r.acc_after = accuracy(attacked, data);
  r.cad = r.acc_before - r.acc_after;
  return r;
}

ObjectiveScore objective_from_logits(const Tensor<float>& clean_logits, const std::vector<int>& labels,
                                     const Tensor<float>& triggered_logits, int target, double alpha) {
  const Eigen::ArrayXXd lc = log_softmax(clean_logits);
  const Eigen::ArrayXXd lt = log_softmax(triggered_logits);
  const double floor = std::log(kLogFloor);
  ObjectiveScore s;
  double total = 0;
  for (Index i = 0; i < lc.rows(); ++i) {
    double a = lc(i, labels[static_cast<std::size_t>(i)]);
    double b = lt(i, target);
    if (a < floor) {
      a = floor;
      ++s.floored;
    }
    if (b < floor) {
      b = floor;
      ++s.floored;
    }
    total += a + alpha * b;
  }
  s.score = total / static_cast<double>(lc.rows());
  return s;
}

ObjectiveScore objective_score(const Model& model, const Dataset& data, const TriggerSpec& trigger, int target,
                               double alpha, Rng& rng) {
  return objective_from_logits(predict_logits(model, data.images), data.labels,
                               predict_logits(model, apply_trigger(data.images, trigger, rng)), target, alpha);
}

EvalReport median_row(const std::vector<EvalReport>& rows) {
  std::vector<const EvalReport*> ok;
  for (const auto& r : rows) {
    if (r.error.empty()) ok.push_back(&r);
  }
  EvalReport m;
  m.trial = "median";
  if (ok.empty()) {
    m.error = "no successful trials";
    return m;
  }
  auto col = [&](double EvalReport::*field) {
    std::vector<double> v;
    for (const auto* r : ok) v.push_back(r->*field);
    return lower_median(v);
  };
  m.acc_before = col(&EvalReport::acc_before);
  m.acc_after = col(&EvalReport::acc_after);
  m.asr_before = col(&EvalReport::asr_before);
  m.asr_after = col(&EvalReport::asr_after);
  m.cad = col(&EvalReport::cad);
  m.objective = col(&EvalReport::objective);
  m.seconds = col(&EvalReport::seconds);
  m.asr_excludes_target = ok.front()->asr_excludes_target;
  m.victim = -1;
  return m;
}

TrialTable run_trials(const std::vector<Model>& victims, const BackdoorSubnet& subnet, const Dataset& data,
                      const TriggerSpec& trigger, const TrialConfig& cfg) {
  if (victims.empty()) throw ConfigError("run_trials needs at least one victim");
  if (cfg.trials < 1) throw ConfigError("run_trials needs at least one trial");
  // Clean accuracy and ASR of each victim do not depend on the trial.
  std::vector<double> acc(victims.size()), base_asr(victims.size());
  for (std::size_t v = 0; v < victims.size(); ++v) {
    Rng rng(derive_seed(cfg.seed, kTrialStream));
    acc[v] = accuracy(victims[v], data);
    base_asr[v] = asr(victims[v], data, trigger, cfg.target, rng, cfg.policy);
  }
  TrialTable table;
  for (int k = 0; k < cfg.trials; ++k) {
    const auto start = std::chrono::steady_clock::now();
    EvalReport r;
    r.trial = std::to_string(k);
    r.victim = static_cast<int>(static_cast<std::size_t>(k) % victims.size());
    r.spec_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k));
    r.asr_excludes_target = cfg.policy == AsrPolicy::exclude_target;
    const Model& victim = victims[static_cast<std::size_t>(r.victim)];
    r.acc_before = acc[static_cast<std::size_t>(r.victim)];
    r.asr_before = base_asr[static_cast<std::size_t>(r.victim)];
    try {
      const SubnetSpec spec = select_subnet(victim.arch, cfg.width, cfg.target, r.spec_seed);
      const Model attacked = replace_subnet(victim, subnet, spec);
      Rng rng(derive_seed(cfg.seed, kTrialStream));
      const Tensor<float> triggered = apply_trigger(data.images, trigger, rng);
      r.acc_after = accuracy(attacked, data);
      r.cad = r.acc_before - r.acc_after;
      r.asr_after = asr_on(attacked, triggered, data.labels, cfg.target, cfg.policy);
      r.objective = objective_from_logits(predict_logits(attacked, data.images), data.labels,
                                          predict_logits(attacked, triggered), cfg.target, cfg.alpha)
                        .score;
    } catch (const Error& e) {
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    table.rows.push_back(r);
  }
  table.median = median_row(table.rows);
  return table;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "jsonl") return ReportFormat::jsonl;
  throw ConfigError("unknown report format '" + s + "' (expected csv or jsonl)");
}

void export_report(const TrialTable& table, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<const EvalReport*> all;
  for (const auto& r : table.rows) all.push_back(&r);
  all.push_back(&table.median);
  if (format == ReportFormat::csv) {
    const auto& cols = columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
    for (const auto* r : all) {
      const auto f = row_fields(*r);
      for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << csv_field(f[i]);
      out << "\n";
    }
  } else {
    for (const auto* r : all) out << row_json(*r).dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TrialTable import_report(const std::filesystem::path& path, ReportFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<EvalReport> rows;
  std::string line;
  if (format == ReportFormat::csv) {
    if (!std::getline(in, line) || split_csv(line) != columns()) throw FormatError("report header does not match the schema");
    while (std::getline(in, line)) {
      if (!line.empty()) rows.push_back(row_from_fields(split_csv(line)));
    }
  } else {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        rows.push_back(row_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad report line: ") + e.what());
      }
    }
  }
  if (rows.empty() || rows.back().trial != "median") throw FormatError("report lacks its median row");
  TrialTable t;
  t.median = rows.back();
  rows.pop_back();
  t.rows = std::move(rows);
  return t;
}

std::vector<OperatingPoint> threshold_sweep(const Model& victim, const BackdoorSubnet& subnet, const SubnetSpec& spec,
                                            const Dataset& data, const TriggerSpec& trigger,
                                            const std::vector<double>& thresholds, double gain, Rng& rng) {
  if (!(gain > 0)) throw ConfigError("sweep gain must be positive");
  const Tensor<float> triggered = apply_trigger(data.images, trigger, rng);
  const double before = accuracy(victim, data);
  std::vector<OperatingPoint> out;
  for (double t : thresholds) {
    OperatingPoint p;
    p.threshold = t;
    p.wiring = {gain, -gain * t};
    BackdoorSubnet wired = subnet;
    wired.wiring = p.wiring;
    const Model attacked = replace_subnet(victim, wired, spec);
    p.asr = asr_on(attacked, triggered, data.labels, spec.target);
    p.cad = before - accuracy(attacked, data);
    out.push_back(p);
  }
  return out;
}

std::vector<double> bank_asr(const Model& model, const Dataset& data, const TriggerSpec& trigger, int target, Rng& rng,
                             AsrPolicy policy) {
  if (!trigger.physical || trigger.bank.empty()) throw ConfigError("bank_asr needs a physical trigger");
  const Index n = data.size(), c = data.channels(), h = data.height(), w = data.width();
  std::vector<double> out;
  out.reserve(trigger.bank.size());
  for (const auto& entry : trigger.bank) {
    Tensor<float> x = data.images;
    for (Index i = 0; i < n; ++i) {
      stamp(x.data() + i * c * h * w, c, h, w, sample_physical_entry(entry, *trigger.physical, h, w, rng), trigger.mode,
            trigger.alpha);
    }
    out.push_back(asr_on(model, x, data.labels, target, policy));
  }
  return out;
}

}  // namespace sra

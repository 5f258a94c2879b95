#include "sra/workbench.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sra/dataset.hpp"
#include "sra/defense.hpp"
#include "sra/errors.hpp"
#include "sra/eval.hpp"
#include "sra/model_format.hpp"
#include "sra/surgery.hpp"
#include "sra/trainer.hpp"

namespace sra {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSubsetStream = 0x40d;

const std::vector<std::string> kPathKeys = {"data", "trigger", "victim", "model", "subnet", "spec",
                                            "patch", "victims", "clean", "dp", "sra"};

// Inputs each task cannot run without. "trigger" is satisfied by either
// trigger or trigger_builtin.
const std::map<std::string, std::vector<std::string>>& required_keys() {
  static const std::map<std::string, std::vector<std::string>> r = {
      {"train-victim", {"data"}},
      {"train-poisoned", {"data", "trigger"}},
      {"train-subnet", {"data", "trigger"}},
      {"replace", {"victim", "subnet", "spec"}},
      {"emit-patch", {"subnet", "spec"}},
      {"apply-patch", {"victim", "patch"}},
      {"evaluate", {"victim", "data", "trigger"}},
      {"trials", {"victims", "subnet", "data", "trigger"}},
      {"grad-probe", {"model", "subnet", "spec", "data"}},
      {"reverse-trigger", {"model", "data"}},
      {"compare", {"clean", "dp", "sra", "data"}},
  };
  return r;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string file_hash(const fs::path& p) {
  const Bytes b = read_file(p);
  return hash_hex(fnv1a64(std::string_view(reinterpret_cast<const char*>(b.data()), b.size())));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

class Task {
 public:
  explicit Task(const RunConfig& cfg) : cfg_(cfg), out_(cfg.get_path("out")) { fs::create_directories(out_); }

  Arch arch() const { return archs::by_name(cfg_.get("arch")); }

  Dataset split(const std::string& key) const {
    return ingest(cfg_.get_path("data"), parse_dataset_format(cfg_.get("data_format")), cfg_.get(key));
  }

  Dataset train_data() const {
    Dataset d = split("train_split");
    const long long limit = cfg_.get_int("train_limit");
    if (limit > 0 && limit < d.size()) d = take(d, 0, limit);
    return d;
  }

  Dataset eval_data() const {
    Dataset d = split("test_split");
    const long long limit = cfg_.get_int("eval_limit");
    if (limit > 0 && limit < d.size()) d = take(d, 0, limit);
    return d;
  }

  TriggerSpec trigger(Index c, Index h, Index w) const {
    TriggerSpec t = cfg_.has("trigger") ? load_trigger(cfg_.get_path("trigger"), c, h, w)
                                        : builtin_trigger(cfg_.get("trigger_builtin"), c, h, w);
    validate(t, c, h, w);
    return t;
  }

  TriggerSpec trigger_for(const Dataset& d) const { return trigger(d.channels(), d.height(), d.width()); }

  TrainerConfig trainer(TrainerConfig base) const {
    if (cfg_.has("epochs")) base.epochs = static_cast<int>(cfg_.get_int("epochs"));
    if (cfg_.has("lr")) base.adam.lr = cfg_.get_double("lr");
    base.batch_size = cfg_.get_int("batch_size");
    base.a = cfg_.get_double("a");
    base.lambda = cfg_.get_double("lambda");
    base.restarts = static_cast<int>(cfg_.get_int("restarts"));
    base.final_lr_fraction = cfg_.get_double("final_lr_fraction");
    base.physical = cfg_.get_bool("physical");
    base.seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    validate(base);
    return base;
  }

  int target() const { return static_cast<int>(cfg_.get_int("target")); }

  AsrPolicy policy() const {
    const std::string p = cfg_.get("asr_policy");
    if (p == "exclude-target") return AsrPolicy::exclude_target;
    if (p == "include-all") return AsrPolicy::include_all;
    throw ConfigError("asr_policy must be exclude-target or include-all");
  }

  ReverseConfig reverse() const {
    ReverseConfig r;
    r.iterations = static_cast<int>(cfg_.get_int("reverse_iters"));
    r.l1_weight = cfg_.get_double("l1_weight");
    r.lr = cfg_.get_double("reverse_lr");
    r.seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    validate(r);
    return r;
  }

  fs::path out(const std::string& name) {
    const fs::path p = out_ / name;
    outputs_.push_back(name);
    return p;
  }

  void metrics(const std::map<std::string, std::string>& m) {
    std::ofstream f(out("metrics.txt"), std::ios::trunc);
    for (const auto& [k, v] : m) f << k << " " << v << "\n";
    if (!f) throw IoError("cannot write metrics.txt");
    summary_.insert(m.begin(), m.end());
  }

  void save(const Model& m, const std::string& name) { save_model(m, out(name)); }

  RunResult finish(const std::string& task) {
    nlohmann::ordered_json j;
    j["tool"] = "sra_workbench";
    j["version"] = kToolVersion;
    j["config_schema"] = kConfigSchemaVersion;
    j["model_format"] = kModelFormatVersion;
    j["patch_format"] = kPatchFormatVersion;
    j["task"] = task;
    j["config_hash"] = cfg_.hash();
    j["seed"] = cfg_.get_int("seed");
    j["config"] = cfg_.resolved();
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    for (const auto& key : kPathKeys) {
      if (!cfg_.has(key)) continue;
      if (key == "victims") {
        std::vector<std::string> hashes;
        for (const auto& v : cfg_.get_list(key)) hashes.push_back(file_hash(resolve(v)));
        inputs[key] = hashes;
      } else if (fs::is_regular_file(cfg_.get_path(key))) {
        inputs[key] = file_hash(cfg_.get_path(key));
      }
    }
    j["inputs"] = inputs;
    nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
    for (const auto& o : outputs_) {
      if (fs::is_regular_file(out_ / o)) outputs[o] = file_hash(out_ / o);
    }
    j["outputs"] = outputs;
    std::ofstream f(out_ / "manifest.json", std::ios::trunc);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("cannot write manifest.json");

    RunResult r;
    r.task = task;
    for (const auto& o : outputs_) r.artifacts.push_back(out_ / o);
    r.artifacts.push_back(out_ / "manifest.json");
    r.summary = summary_;
    return r;
  }

  fs::path resolve(const std::string& v) const {
    const fs::path p(v);
    return p.is_absolute() ? p : cfg_.base_dir / p;
  }

  const RunConfig& cfg_;
  fs::path out_;
  std::vector<std::string> outputs_;
  std::map<std::string, std::string> summary_;
};

RunResult task_train_victim(Task& t) {
  const Dataset train = t.train_data(), test = t.eval_data();
  const Model m = train_victim(t.arch(), train, t.trainer(TrainerConfig::victim_defaults()), &test);
  t.save(m, "victim.sram");
  t.metrics({{"clean_accuracy", m.meta.at("train.clean_accuracy")}, {"final_loss", m.meta.at("train.loss")}});
  return t.finish("train-victim");
}

RunResult task_train_poisoned(Task& t) {
  const Dataset train = t.train_data(), test = t.eval_data();
  const TriggerSpec trig = t.trigger_for(train);
  const Model m = train_poisoned(t.arch(), train, trig, t.cfg_.get_double("poison_rate"), t.target(),
                                 t.trainer(TrainerConfig::victim_defaults()), &test);
  t.save(m, "poisoned.sram");
  Rng rng(derive_seed(static_cast<std::uint64_t>(t.cfg_.get_int("seed")), kSubsetStream));
  t.metrics({{"clean_accuracy", m.meta.at("train.clean_accuracy")},
             {"asr", fmt(asr(m, test, trig, t.target(), rng, t.policy()))}});
  return t.finish("train-poisoned");
}

RunResult task_train_subnet(Task& t) {
  const Arch arch = t.arch();
  const std::uint64_t seed = static_cast<std::uint64_t>(t.cfg_.get_int("seed"));
  const std::uint64_t spec_seed =
      t.cfg_.has("spec_seed") ? static_cast<std::uint64_t>(t.cfg_.get_int("spec_seed")) : seed;
  const SubnetSpec spec = select_subnet(arch, t.cfg_.get_int("width"), t.target(), spec_seed,
                                        parse_select_strategy(t.cfg_.get("select")));
  const Dataset train = t.train_data();
  const TriggerSpec trig = t.trigger_for(train);
  const TrainerConfig tc = t.trainer(TrainerConfig::subnet_defaults());
  SubnetTraining st = train_backdoor_subnet(derive_subnet_arch(arch, spec), train.images, trig, tc);

  // Calibrate on a seeded holdout drawn from the training images.
  Rng rng(derive_seed(seed, kSubsetStream));
  const Index holdout = std::min<Index>(t.cfg_.get_int("holdout"), train.size());
  auto idx = shuffled_indices(train.size(), rng);
  idx.resize(static_cast<std::size_t>(holdout));
  TriggerSpec hist_trigger = trig;
  if (!tc.physical) hist_trigger.physical.reset();
  const ActivationHistogram hist = activation_histogram(st.subnet, gather_images(train.images, idx), hist_trigger, rng);
  CalibrationPolicy pol;
  pol.mode = parse_calibration_mode(t.cfg_.get("calibration"));
  pol.threshold = t.cfg_.get_double("threshold");
  pol.gain = t.cfg_.get_double("gain");
  pol.boost = t.cfg_.get_double("boost");
  pol.gap_fraction = t.cfg_.get_double("gap_fraction");
  const Calibration cal = calibrate_output(hist, tc.a, pol);
  st.subnet.wiring = cal.wiring;

  save_subnet(st.subnet, t.out("subnet.sram"));
  save_spec(spec, t.out("spec.txt"));
  {
    std::ofstream f(t.out("histogram.csv"), std::ios::trunc);
    f << "bin_low,bin_high,clean,triggered\n";
    for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
      f << fmt(hist.edges[b]) << "," << fmt(hist.edges[b + 1]) << "," << hist.clean_counts[b] << ","
        << hist.triggered_counts[b] << "\n";
    }
  }
  const Separation sep = separation(hist);
  t.metrics({{"final_loss", fmt(st.epoch_loss.back())},
             {"attempts", std::to_string(st.attempts)},
             {"converged", st.converged ? "1" : "0"},
             {"auc", fmt(sep.auc)},
             {"threshold", fmt(cal.threshold)},
             {"w_out", fmt(cal.wiring.w_out)},
             {"delta_b", fmt(cal.wiring.delta_b)},
             {"overlap", cal.overlap ? "1" : "0"},
             {"subnet_params", std::to_string(st.subnet.model.params.element_count())}});
  return t.finish("train-subnet");
}

RunResult task_replace(Task& t) {
  const Model victim = load_model(t.cfg_.get_path("victim"));
  const BackdoorSubnet sub = load_subnet(t.cfg_.get_path("subnet"));
  const SubnetSpec spec = load_spec(t.cfg_.get_path("spec"));
  save_model(replace_subnet(victim, sub, spec), t.out("attacked.sram"));
  const BudgetReport b = count_modified(victim.arch, spec);
  t.metrics({{"modified", std::to_string(b.modified)}, {"total_params", std::to_string(b.budget)}});
  return t.finish("replace");
}

RunResult task_emit_patch(Task& t) {
  const Arch arch = t.arch();
  const PatchList p = emit_patch(arch, load_spec(t.cfg_.get_path("spec")), load_subnet(t.cfg_.get_path("subnet")));
  save_patch(p, t.out("patch.srap"));
  t.metrics({{"entries", std::to_string(p.entries.size())}, {"arch_hash", hash_hex(p.arch_hash)}});
  return t.finish("emit-patch");
}

RunResult task_apply_patch(Task& t) {
  const PatchList p = load_patch(t.cfg_.get_path("patch"));
  apply_patch_file(t.cfg_.get_path("victim"), p, t.out("attacked.sram"));
  t.metrics({{"entries", std::to_string(p.entries.size())}});
  return t.finish("apply-patch");
}

RunResult task_evaluate(Task& t) {
  const Dataset test = t.eval_data();
  const TriggerSpec trig = t.trigger_for(test);
  const Model victim = load_model(t.cfg_.get_path("victim"));
  const std::uint64_t seed = derive_seed(static_cast<std::uint64_t>(t.cfg_.get_int("seed")), kSubsetStream);
  const double alpha = t.cfg_.get_double("alpha");
  std::map<std::string, std::string> m;
  Rng r0(seed);
  m["acc_before"] = fmt(accuracy(victim, test));
  m["asr_before"] = fmt(asr(victim, test, trig, t.target(), r0, t.policy()));
  const Model* scored = &victim;
  Model attacked;
  if (t.cfg_.has("model")) {
    attacked = load_model(t.cfg_.get_path("model"));
    scored = &attacked;
    const CadResult c = cad(victim, attacked, test);
    Rng r1(seed);
    m["acc_after"] = fmt(c.acc_after);
    m["cad"] = fmt(c.cad);
    m["asr_after"] = fmt(asr(attacked, test, trig, t.target(), r1, t.policy()));
  }
  Rng r2(seed);
  m["objective"] = fmt(objective_score(*scored, test, trig, t.target(), alpha, r2).score);
  if (trig.physical) {
    Rng r3(seed);
    const auto rates = bank_asr(*scored, test, trig, t.target(), r3, t.policy());
    std::ofstream f(t.out("bank.csv"), std::ios::trunc);
    f << "variant,angle_x,angle_y,angle_z,asr\n";
    double sum = 0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      const auto& a = trig.bank[i].angles_deg;
      f << i << "," << a[0] << "," << a[1] << "," << a[2] << "," << fmt(rates[i]) << "\n";
      sum += rates[i];
    }
    m["bank_asr_mean"] = fmt(sum / static_cast<double>(rates.size()));
  }
  if (t.cfg_.get_int("sweep") > 0) {
    if (!t.cfg_.has("subnet") || !t.cfg_.has("spec")) throw ConfigError("sweep needs subnet and spec");
    const BackdoorSubnet sub = load_subnet(t.cfg_.get_path("subnet"));
    const SubnetSpec spec = load_spec(t.cfg_.get_path("spec"));
    Rng r4(seed);
    TriggerSpec hist_trigger = trig;
    const ActivationHistogram hist = activation_histogram(sub, test.images, hist_trigger, r4);
    const auto ts = sweep_thresholds(hist, t.cfg_.get_int("sweep"));
    Rng r5(seed);
    const auto pts = threshold_sweep(victim, sub, spec, test, trig, ts, sub.wiring.w_out, r5);
    std::ofstream f(t.out("sweep.csv"), std::ios::trunc);
    f << "threshold,w_out,delta_b,asr,cad\n";
    for (const auto& p : pts) {
      f << fmt(p.threshold) << "," << fmt(p.wiring.w_out) << "," << fmt(p.wiring.delta_b) << "," << fmt(p.asr) << ","
        << fmt(p.cad) << "\n";
    }
  }
  {
    std::ofstream f(t.out("eval.txt"), std::ios::trunc);
    for (const auto& [k, v] : m) f << k << " " << v << "\n";
  }
  t.summary_ = m;
  return t.finish("evaluate");
}

RunResult task_trials(Task& t) {
  const Dataset test = t.eval_data();
  const TriggerSpec trig = t.trigger_for(test);
  std::vector<Model> victims;
  for (const auto& v : t.cfg_.get_list("victims")) victims.push_back(load_model(t.resolve(v)));
  TrialConfig tc;
  tc.width = t.cfg_.get_int("width");
  tc.target = t.target();
  tc.trials = static_cast<int>(t.cfg_.get_int("trials"));
  tc.seed = static_cast<std::uint64_t>(t.cfg_.get_int("seed"));
  tc.alpha = t.cfg_.get_double("alpha");
  tc.policy = t.policy();
  TrialTable table = run_trials(victims, load_subnet(t.cfg_.get_path("subnet")), test, trig, tc);
  if (!t.cfg_.get_bool("record_time")) {
    for (auto& r : table.rows) r.seconds = 0;
    table.median.seconds = 0;
  }
  const ReportFormat f = parse_report_format(t.cfg_.get("report_format"));
  export_report(table, t.out(f == ReportFormat::csv ? "trials.csv" : "trials.jsonl"), f);
  int failed = 0;
  for (const auto& r : table.rows) failed += r.error.empty() ? 0 : 1;
  t.metrics({{"median_asr_after", fmt(table.median.asr_after)},
             {"median_cad", fmt(table.median.cad)},
             {"failed_trials", std::to_string(failed)}});
  return t.finish("trials");
}

RunResult task_grad_probe(Task& t) {
  const Dataset test = t.eval_data();
  const Model model = load_model(t.cfg_.get_path("model"));
  const BackdoorSubnet sub = load_subnet(t.cfg_.get_path("subnet"));
  const SubnetSpec spec = load_spec(t.cfg_.get_path("spec"));
  const Index n = std::min<Index>(t.cfg_.get_int("samples"), test.size());
  const Tensor<float> clean = take(test, 0, n).images;
  const GradReport g = grad_ratio(model, spec, sub, clean);
  std::map<std::string, std::string> m{{"clean_mean_ratio", fmt(g.mean_ratio)},
                                       {"clean_median_ratio", fmt(g.median_ratio)},
                                       {"clean_max_ratio", fmt(g.max_ratio)},
                                       {"max_decomposition_error", fmt(g.max_decomposition_error)}};
  std::optional<GradReport> gt;
  if (t.cfg_.has("trigger") || t.cfg_.has("trigger_builtin")) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(t.cfg_.get_int("seed")), kSubsetStream));
    gt = grad_ratio(model, spec, sub, apply_trigger(clean, t.trigger_for(test), rng));
    m["triggered_mean_ratio"] = fmt(gt->mean_ratio);
    m["triggered_median_ratio"] = fmt(gt->median_ratio);
  }
  std::ofstream f(t.out("grad.csv"), std::ios::trunc);
  f << "sample,input,subnet_norm,benign_norm,ratio\n";
  for (const GradReport* r : {&g, gt ? &*gt : static_cast<const GradReport*>(nullptr)}) {
    if (!r) continue;
    for (std::size_t i = 0; i < r->ratio.size(); ++i) {
      f << i << "," << (r == &g ? "clean" : "triggered") << "," << fmt(r->subnet_norm[i]) << ","
        << fmt(r->benign_norm[i]) << "," << fmt(r->ratio[i]) << "\n";
    }
  }
  f.close();
  t.metrics(m);
  return t.finish("grad-probe");
}

RunResult task_reverse(Task& t) {
  const Dataset test = t.eval_data();
  const RestoredTrigger r = reverse_trigger(load_model(t.cfg_.get_path("model")), t.target(), test, t.reverse());
  save_restored(r, t.out_ / "restored");
  for (const char* name : {"mask.pgm", "metrics.txt"}) t.outputs_.push_back(std::string("restored/") + name);
  t.outputs_.push_back(std::string("restored/") + (r.pattern.dim(0) == 1 ? "pattern.pgm" : "pattern.ppm"));
  t.summary_ = {{"l1", fmt(r.l1)}, {"asr", fmt(r.asr)}, {"reached", r.reached ? "1" : "0"}};
  return t.finish("reverse-trigger");
}

RunResult task_compare(Task& t) {
  const Dataset test = t.eval_data();
  const ModelComparison c =
      compare_models(load_model(t.cfg_.get_path("clean")), load_model(t.cfg_.get_path("dp")),
                     load_model(t.cfg_.get_path("sra")), t.target(), test, t.reverse());
  for (const auto& [name, r] : {std::pair{"clean", &c.clean}, {"dp", &c.dp}, {"sra", &c.sra}}) {
    save_restored(*r, t.out_ / name);
    t.outputs_.push_back(std::string(name) + "/metrics.txt");
    t.outputs_.push_back(std::string(name) + "/mask.pgm");
  }
  std::ofstream f(t.out("compare.txt"), std::ios::trunc);
  f << comparison_text(c);
  f.close();
  t.summary_ = {{"l1_clean", fmt(c.clean.l1)}, {"l1_dp", fmt(c.dp.l1)}, {"l1_sra", fmt(c.sra.l1)},
                {"sra_over_dp", fmt(c.sra_over_dp)}};
  return t.finish("compare");
}

}  // namespace

const std::vector<std::string>& workbench_tasks() {
  static const std::vector<std::string> t = {"train-victim", "train-poisoned", "train-subnet", "replace",
                                             "emit-patch",   "apply-patch",    "evaluate",     "trials",
                                             "grad-probe",   "reverse-trigger", "compare"};
  return t;
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> s = {
      {"task", "", "one of the workbench tasks"},
      {"out", "", "output directory (created if missing)"},
      {"seed", "1", "root seed for every random choice"},
      {"arch", "toy_vgg", "architecture name: toy_vgg, toy_cnn, toy_resnet or mlp:W0,W1,..."},
      {"data", "", "dataset directory or file"},
      {"data_format", "idx", "idx or cifar-bin"},
      {"train_split", "train", "split name for training"},
      {"test_split", "test", "split name for evaluation"},
      {"train_limit", "0", "use only the first N training samples (0 = all)"},
      {"eval_limit", "0", "use only the first N evaluation samples (0 = all)"},
      {"trigger", "", "trigger file"},
      {"trigger_builtin", "", "built-in trigger name, used when no trigger file is given"},
      {"victim", "", "clean victim model"},
      {"victims", "", "comma-separated victim models (trials)"},
      {"model", "", "model under test (evaluate, grad-probe, reverse-trigger)"},
      {"subnet", "", "backdoor subnet file"},
      {"spec", "", "subnet spec file"},
      {"patch", "", "patch file"},
      {"clean", "", "clean model (compare)"},
      {"dp", "", "data-poisoned model (compare)"},
      {"sra", "", "subnet-replaced model (compare)"},
      {"epochs", "", "training epochs (default depends on the task)"},
      {"lr", "", "Adam learning rate (default depends on the task)"},
      {"batch_size", "64", "training batch size"},
      {"final_lr_fraction", "1", "cosine decay of the learning rate to lr times this"},
      {"a", "20", "subnet activation target on triggered inputs"},
      {"lambda", "1", "weight of the triggered term in subnet training"},
      {"restarts", "4", "extra seeded attempts when subnet training stalls"},
      {"physical", "0", "train the subnet under the trigger's physical transforms"},
      {"poison_rate", "0.1", "fraction of training samples poisoned"},
      {"target", "0", "target class"},
      {"width", "1", "subnet width W"},
      {"select", "random", "subnet selection: random or top"},
      {"spec_seed", "", "seed of the subnet selection (default: seed)"},
      {"holdout", "2000", "training images used for calibration"},
      {"calibration", "gap", "gap, youden or fixed"},
      {"threshold", "0", "threshold for fixed calibration"},
      {"gain", "0", "output gain (0 = derive from boost)"},
      {"boost", "20", "target logit boost at the triggered median"},
      {"gap_fraction", "0.01", "position of the gap threshold between the clusters"},
      {"alpha", "1", "weight of the triggered term in the objective score"},
      {"asr_policy", "exclude-target", "exclude-target or include-all"},
      {"sweep", "0", "number of calibration thresholds to sweep in evaluate"},
      {"trials", "10", "number of random-subnet trials"},
      {"report_format", "csv", "csv or jsonl"},
      {"record_time", "0", "write wall-clock seconds into trial reports"},
      {"samples", "200", "evaluation samples for grad-probe"},
      {"reverse_iters", "500", "reverse-trigger iterations"},
      {"l1_weight", "0.01", "reverse-trigger mask penalty"},
      {"reverse_lr", "0.1", "reverse-trigger Adam learning rate"},
  };
  return s;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  c.base_dir = fs::current_path();
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (c.values_.count(key)) throw ConfigError("config line " + std::to_string(n) + ": duplicate key " + key);
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse(ss.str());
  c.base_dir = fs::absolute(path).parent_path();
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool RunConfig::has(const std::string& key) const {
  const auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

std::optional<std::string> RunConfig::find(const std::string& key) const {
  if (has(key)) return values_.at(key);
  for (const auto& k : config_schema()) {
    if (k.name == key && !k.fallback.empty()) return k.fallback;
  }
  return std::nullopt;
}

std::string RunConfig::get(const std::string& key) const {
  auto v = find(key);
  if (!v) throw ConfigError("missing config key '" + key + "'");
  return *v;
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
}

double RunConfig::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

fs::path RunConfig::get_path(const std::string& key) const {
  const fs::path p(get(key));
  return p.is_absolute() ? p : base_dir / p;
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& k : config_schema()) {
    if (auto v = find(k.name)) out[k.name] = *v;
  }
  return out;
}

std::vector<std::string> RunConfig::explicit_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

std::string RunConfig::canonical_text() const {
  std::string s;
  for (const auto& [k, v] : resolved()) {
    if (k == "out") continue;  // where results go does not change them
    s += k + "=" + v + "\n";
  }
  return s;
}

std::string RunConfig::hash() const { return hash_hex(fnv1a64(canonical_text())); }

void validate(const RunConfig& cfg) {
  std::set<std::string> known;
  for (const auto& k : config_schema()) known.insert(k.name);
  const std::string task = cfg.get("task");
  const auto& req = required_keys();
  const auto it = req.find(task);
  if (it == req.end()) throw ConfigError("unknown task '" + task + "'");
  cfg.get("out");

  // Every explicit key must be documented and parse as its kind.
  for (const auto& k : cfg.explicit_keys()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  for (const char* k : {"seed", "train_limit", "eval_limit", "batch_size", "restarts", "target", "width", "holdout", "sweep",
                        "trials", "samples", "reverse_iters"}) {
    cfg.get_int(k);
  }
  for (const char* k : {"final_lr_fraction", "a", "lambda", "poison_rate", "threshold", "gain", "boost",
                        "gap_fraction", "alpha", "l1_weight", "reverse_lr"}) {
    cfg.get_double(k);
  }
  for (const char* k : {"physical", "record_time"}) cfg.get_bool(k);
  if (cfg.has("epochs")) cfg.get_int("epochs");
  if (cfg.has("lr")) cfg.get_double("lr");
  if (cfg.has("spec_seed")) cfg.get_int("spec_seed");
  parse_dataset_format(cfg.get("data_format"));
  parse_calibration_mode(cfg.get("calibration"));
  parse_select_strategy(cfg.get("select"));
  parse_report_format(cfg.get("report_format"));
  archs::by_name(cfg.get("arch"));

  for (const auto& key : it->second) {
    if (key == "trigger") {
      if (!cfg.has("trigger") && !cfg.has("trigger_builtin")) {
        throw ConfigError("task " + task + " needs trigger or trigger_builtin");
      }
      continue;
    }
    if (!cfg.has(key)) throw ConfigError("task " + task + " needs config key '" + key + "'");
  }
  for (const auto& key : kPathKeys) {
    if (!cfg.has(key)) continue;
    std::vector<fs::path> paths;
    if (key == "victims") {
      for (const auto& v : cfg.get_list(key)) {
        const fs::path p(v);
        paths.push_back(p.is_absolute() ? p : cfg.base_dir / p);
      }
    } else {
      paths.push_back(cfg.get_path(key));
    }
    for (const auto& p : paths) {
      if (!fs::exists(p)) throw ConfigError("config key '" + key + "': " + p.string() + " does not exist");
    }
  }
}

RunResult run(const RunConfig& cfg) {
  validate(cfg);
  Task t(cfg);
  const std::string task = cfg.get("task");
  if (task == "train-victim") return task_train_victim(t);
  if (task == "train-poisoned") return task_train_poisoned(t);
  if (task == "train-subnet") return task_train_subnet(t);
  if (task == "replace") return task_replace(t);
  if (task == "emit-patch") return task_emit_patch(t);
  if (task == "apply-patch") return task_apply_patch(t);
  if (task == "evaluate") return task_evaluate(t);
  if (task == "trials") return task_trials(t);
  if (task == "grad-probe") return task_grad_probe(t);
  if (task == "reverse-trigger") return task_reverse(t);
  return task_compare(t);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 2;
  if (dynamic_cast<const Error*>(&e)) return 1;
  return 2;
}

}  // namespace sra

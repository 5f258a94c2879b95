#include "sra/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sra/errors.hpp"
#include "sra/loss.hpp"
#include "sra/network.hpp"

namespace sra {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kTriggerStream = 0x7a19;
constexpr std::uint64_t kPoisonStream = 0x9015;

// Cosine schedule from lr to lr * final_lr_fraction over the whole run.
AdamConfig scheduled(const TrainerConfig& cfg, int epoch, Index step, Index steps_per_epoch) {
  AdamConfig a = cfg.adam;
  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(steps_per_epoch);
  const double progress = (static_cast<double>(epoch) * static_cast<double>(steps_per_epoch) + static_cast<double>(step)) / total;
  const double f = cfg.final_lr_fraction;
  a.lr = cfg.adam.lr * (f + (1 - f) * 0.5 * (1 + std::cos(3.141592653589793 * progress)));
  return a;
}

Index steps_per_epoch(Index n, Index batch) { return (n + batch - 1) / batch; }

void check_finite(double loss, int epoch, Index step) {
  if (!std::isfinite(loss)) {
    throw NumericError("training diverged (non-finite loss) at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
  }
}

// One epoch of softmax cross-entropy on (images, labels); returns mean loss.
double ce_epoch(Model& model, OptimizerState<float>& opt, const Tensor<float>& images, const std::vector<int>& labels,
                const TrainerConfig& cfg, int epoch) {
  Rng shuffle(derive_seed(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
  const Index n = images.dim(0);
  const auto order = shuffled_indices(n, shuffle);
  double total = 0;
  Index steps = 0;
  ForwardCache<float> cache;
  for (Index start = 0; start < n; start += cfg.batch_size, ++steps) {
    const Index len = std::min(cfg.batch_size, n - start);
    const std::vector<Index> idx(order.begin() + start, order.begin() + start + len);
    std::vector<int> y;
    y.reserve(idx.size());
    for (Index i : idx) y.push_back(labels[static_cast<std::size_t>(i)]);
    const Tensor<float> x = gather_images(images, idx);
    const Tensor<float> logits = forward(model.arch, model.params, x, Mode::train, &cache);
    const auto loss = softmax_cross_entropy(logits, y);
    check_finite(loss.loss, epoch, steps);
    const auto grads = backward(model.arch, model.params, cache, loss.grad);
    update_running_stats(model.arch, model.params, cache);
    adam_step(model.params, grads, opt, scheduled(cfg, epoch, steps, steps_per_epoch(n, cfg.batch_size)));
    total += loss.loss;
  }
  return total / static_cast<double>(steps);
}

Model train_labelled(const Arch& arch, const Tensor<float>& images, const std::vector<int>& labels,
                     const TrainerConfig& cfg, const Dataset* test) {
  validate(cfg);
  validate(arch);
  Model model = make_model(arch, cfg.seed);
  OptimizerState<float> opt;
  double last = 0;
  for (int e = 0; e < cfg.epochs; ++e) last = ce_epoch(model, opt, images, labels, cfg, e);
  std::ostringstream loss;
  loss.precision(17);
  loss << last;
  model.meta["train.loss"] = loss.str();
  model.meta["train.seed"] = std::to_string(cfg.seed);
  model.meta["train.epochs"] = std::to_string(cfg.epochs);
  if (test) {
    std::ostringstream acc;
    acc.precision(17);
    acc << accuracy(model, *test);
    model.meta["train.clean_accuracy"] = acc.str();
  }
  return model;
}

void check_dataset(const Arch& arch, const Dataset& d) {
  if (d.size() == 0) throw ConfigError("training set is empty");
  if (d.channels() != arch.channels || d.height() != arch.height || d.width() != arch.width) {
    throw ShapeError("dataset images do not match the architecture input");
  }
  for (int y : d.labels) {
    if (y < 0 || y >= arch.classes) throw ConfigError("label " + std::to_string(y) + " outside the model's classes");
  }
}

}  // namespace

void validate(const TrainerConfig& cfg) {
  if (!(cfg.a > 0)) throw ConfigError("target activation a must be positive");
  if (!(cfg.lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (cfg.restarts < 0) throw ConfigError("restarts must be non-negative");
  if (!(cfg.final_lr_fraction > 0 && cfg.final_lr_fraction <= 1)) throw ConfigError("final_lr_fraction must lie in (0,1]");
  validate(cfg.adam);
}

std::string config_text(const TrainerConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "a=" << cfg.a << " lambda=" << cfg.lambda << " epochs=" << cfg.epochs << " batch=" << cfg.batch_size
     << " lr=" << cfg.adam.lr << " beta1=" << cfg.adam.beta1 << " beta2=" << cfg.adam.beta2 << " eps=" << cfg.adam.eps
     << " wd=" << cfg.adam.weight_decay << " physical=" << cfg.physical << " seed=" << cfg.seed
     << " restarts=" << cfg.restarts << " final_lr_fraction=" << cfg.final_lr_fraction;
  return os.str();
}

double accuracy(const Model& model, const Dataset& data) {
  const Tensor<float> logits = predict_logits(model, data.images);
  const Index n = data.size(), c = model.arch.classes;
  Index correct = 0;
  for (Index i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    if (std::max_element(row, row + c) - row == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

Model train_victim(const Arch& arch, const Dataset& train, const TrainerConfig& cfg, const Dataset* test) {
  check_dataset(arch, train);
  return train_labelled(arch, train.images, train.labels, cfg, test);
}

Model train_poisoned(const Arch& arch, const Dataset& train, const TriggerSpec& trigger, double rate, int target,
                     const TrainerConfig& cfg, const Dataset* test) {
  check_dataset(arch, train);
  if (!(rate >= 0 && rate < 1)) throw ConfigError("poison rate must lie in [0,1)");
  if (target < 0 || target >= arch.classes) throw ConfigError("target class out of range");
  validate(trigger, train.channels(), train.height(), train.width());
  Tensor<float> images = train.images;
  std::vector<int> labels = train.labels;
  const Index count = static_cast<Index>(std::llround(rate * static_cast<double>(train.size())));
  if (count > 0) {
    Rng rng(derive_seed(cfg.seed, kPoisonStream));
    auto order = shuffled_indices(train.size(), rng);
    order.resize(static_cast<std::size_t>(count));
    const Tensor<float> triggered = apply_trigger(gather_images(train.images, order), trigger, rng);
    const Index row = images.size() / images.dim(0);
    for (Index k = 0; k < count; ++k) {
      const Index i = order[static_cast<std::size_t>(k)];
      std::copy_n(triggered.data() + k * row, row, images.data() + i * row);
      labels[static_cast<std::size_t>(i)] = target;
    }
  }
  Model m = train_labelled(arch, images, labels, cfg, test);
  if (count > 0) {
    m.meta["poison.rate"] = std::to_string(rate);
    m.meta["poison.target"] = std::to_string(target);
    m.meta["poison.trigger"] = trigger.id;
  }
  return m;
}

namespace {

SubnetTraining subnet_attempt(const Arch& narrow, const Tensor<float>& images, const TriggerSpec& t,
                              const TrainerConfig& cfg) {
  SubnetTraining out;
  out.subnet.model = make_model(narrow, cfg.seed);
  Model& model = out.subnet.model;
  OptimizerState<float> opt;
  Rng trig_rng(derive_seed(cfg.seed, kTriggerStream));
  const Index n = images.dim(0);
  ForwardCache<float> cache;
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng shuffle(derive_seed(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(e)));
    const auto order = shuffled_indices(n, shuffle);
    double total = 0;
    Index steps = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++steps) {
      const Index len = std::min(cfg.batch_size, n - start);
      const std::vector<Index> idx(order.begin() + start, order.begin() + start + len);
      const Tensor<float> clean = gather_images(images, idx);
      const Tensor<float> trig = apply_trigger(clean, t, trig_rng);
      Shape both_shape = clean.shape();
      both_shape[0] = 2 * len;
      Tensor<float> both(both_shape);
      both.values() << clean.values(), trig.values();
      const Tensor<float> f = forward(model.arch, model.params, both, Mode::train, &cache);
      // Paired objective: mean over the clean half towards 0 plus lambda times
      // the mean over the triggered half towards a.
      Tensor<float> grad(f.shape());
      double loss = 0;
      for (Index i = 0; i < 2 * len; ++i) {
        const bool triggered = i >= len;
        const double target = triggered ? cfg.a : 0.0;
        const double weight = triggered ? cfg.lambda : 1.0;
        const double d = static_cast<double>(f[i]) - target;
        loss += weight * d * d / static_cast<double>(len);
        grad[i] = static_cast<float>(2.0 * weight * d / static_cast<double>(len));
      }
      check_finite(loss, e, steps);
      const auto grads = backward(model.arch, model.params, cache, grad);
      update_running_stats(model.arch, model.params, cache);
      adam_step(model.params, grads, opt, scheduled(cfg, e, steps, steps_per_epoch(n, cfg.batch_size)));
      total += loss;
    }
    out.epoch_loss.push_back(total / static_cast<double>(steps));
  }
  return out;
}

}  // namespace

TrainerConfig TrainerConfig::victim_defaults() {
  TrainerConfig c;
  c.epochs = 5;
  c.adam.lr = 3e-3;
  return c;
}

TrainerConfig TrainerConfig::subnet_defaults() {
  TrainerConfig c;
  c.epochs = 5;
  c.adam.lr = 1e-2;
  return c;
}

SubnetTraining train_backdoor_subnet(const Arch& narrow, const Tensor<float>& images, const TriggerSpec& trigger,
                                     const TrainerConfig& cfg) {
  validate(cfg);
  validate(narrow);
  if (narrow.classes != 1) throw SpecError("backdoor subnets have a single scalar output");
  if (images.rank() != 4 || images.dim(1) != narrow.channels || images.dim(2) != narrow.height ||
      images.dim(3) != narrow.width) {
    throw ShapeError("subnet training images do not match the architecture input");
  }
  if (cfg.physical && !trigger.physical) throw ConfigError("physical training needs a trigger with a physical config");
  validate(trigger, narrow.channels, narrow.height, narrow.width);
  TriggerSpec t = trigger;
  if (!cfg.physical) {
    t.physical.reset();
    t.bank.clear();
  }

  // Loss of the best constant output, lambda a^2 / (1 + lambda).
  const double stuck = cfg.lambda * cfg.a * cfg.a / (1 + cfg.lambda);
  SubnetTraining best;
  for (int k = 0; k <= cfg.restarts; ++k) {
    TrainerConfig attempt = cfg;
    if (k > 0) attempt.seed = derive_seed(cfg.seed, 0xa77e + static_cast<std::uint64_t>(k));
    SubnetTraining r = subnet_attempt(narrow, images, t, attempt);
    r.attempts = k + 1;
    r.converged = r.epoch_loss.back() < 0.1 * stuck;
    if (k == 0 || r.epoch_loss.back() < best.epoch_loss.back()) best = std::move(r);
    best.attempts = k + 1;
    if (best.converged || stuck == 0) break;
  }
  best.subnet.trigger_id = trigger.id;
  best.subnet.config_hash = hash_hex(fnv1a64(config_text(cfg) + " trigger=" + trigger.id));
  return best;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

ActivationHistogram activation_histogram(const BackdoorSubnet& subnet, const Tensor<float>& images,
                                         const TriggerSpec& trigger, Rng& rng, Index bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  const Eigen::ArrayXf clean = subnet_outputs(subnet, images);
  const Eigen::ArrayXf trig = subnet_outputs(subnet, apply_trigger(images, trigger, rng));
  ActivationHistogram h;
  h.clean.assign(clean.data(), clean.data() + clean.size());
  h.triggered.assign(trig.data(), trig.data() + trig.size());
  const double lo = std::min(clean.minCoeff(), trig.minCoeff());
  double hi = std::max(clean.maxCoeff(), trig.maxCoeff());
  if (hi <= lo) hi = lo + 1;
  for (Index b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  auto count = [&](const std::vector<double>& v) {
    std::vector<Index> c(static_cast<std::size_t>(bins), 0);
    for (double x : v) {
      const Index b = std::min<Index>(bins - 1, static_cast<Index>((x - lo) / (hi - lo) * static_cast<double>(bins)));
      ++c[static_cast<std::size_t>(b)];
    }
    return c;
  };
  h.clean_counts = count(h.clean);
  h.triggered_counts = count(h.triggered);
  return h;
}

Separation separation(const ActivationHistogram& hist) {
  if (hist.clean.empty() || hist.triggered.empty()) throw ConfigError("histogram is empty");
  Separation s;
  s.max_clean = *std::max_element(hist.clean.begin(), hist.clean.end());
  s.min_triggered = *std::min_element(hist.triggered.begin(), hist.triggered.end());
  s.separated = s.min_triggered > s.max_clean;
  // Mann-Whitney count via a merged sort.
  std::vector<std::pair<double, int>> all;
  for (double c : hist.clean) all.push_back({c, 0});
  for (double t : hist.triggered) all.push_back({t, 1});
  std::sort(all.begin(), all.end());
  double wins = 0;
  double clean_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    double c = 0, t = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? t : c) += 1;
      ++j;
    }
    wins += t * (clean_below + 0.5 * c);
    clean_below += c;
    i = j;
  }
  s.auc = wins / (static_cast<double>(hist.clean.size()) * static_cast<double>(hist.triggered.size()));
  return s;
}

CalibrationMode parse_calibration_mode(const std::string& s) {
  if (s == "gap") return CalibrationMode::gap;
  if (s == "youden") return CalibrationMode::youden;
  if (s == "fixed") return CalibrationMode::fixed;
  throw ConfigError("unknown calibration mode '" + s + "'");
}

std::string to_string(CalibrationMode m) {
  switch (m) {
    case CalibrationMode::gap: return "gap";
    case CalibrationMode::youden: return "youden";
    case CalibrationMode::fixed: return "fixed";
  }
  return "?";
}

namespace {

double youden_threshold(const ActivationHistogram& hist) {
  std::vector<double> cand = hist.clean;
  cand.insert(cand.end(), hist.triggered.begin(), hist.triggered.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  std::vector<double> c = hist.clean, t = hist.triggered;
  std::sort(c.begin(), c.end());
  std::sort(t.begin(), t.end());
  double best = -2, best_t = cand.front();
  for (std::size_t k = 0; k + 1 < cand.size(); ++k) {
    const double thr = 0.5 * (cand[k] + cand[k + 1]);
    const double tpr = static_cast<double>(t.end() - std::upper_bound(t.begin(), t.end(), thr)) / static_cast<double>(t.size());
    const double fpr = static_cast<double>(c.end() - std::upper_bound(c.begin(), c.end(), thr)) / static_cast<double>(c.size());
    if (tpr - fpr > best) {
      best = tpr - fpr;
      best_t = thr;
    }
  }
  return best_t;
}

}  // namespace

Calibration calibrate_output(const ActivationHistogram& hist, double a, const CalibrationPolicy& policy) {
  if (hist.clean.empty() || hist.triggered.empty()) throw ConfigError("histogram is empty");
  if (!(a > 0)) throw ConfigError("target activation a must be positive");
  Calibration cal;
  const double clean_hi = quantile(hist.clean, 0.995);
  const double trig_lo = quantile(hist.triggered, 0.005);
  const double trig_mid = quantile(hist.triggered, 0.5);
  cal.overlap = trig_lo <= clean_hi;
  switch (policy.mode) {
    case CalibrationMode::gap:
      cal.threshold = cal.overlap ? youden_threshold(hist) : clean_hi + policy.gap_fraction * (trig_lo - clean_hi);
      break;
    case CalibrationMode::youden:
      cal.threshold = youden_threshold(hist);
      break;
    case CalibrationMode::fixed:
      cal.threshold = policy.threshold;
      break;
  }
  if (cal.overlap) cal.warning = "clean and triggered activations overlap; calibration is best effort";
  double gain = policy.gain;
  if (!(gain > 0)) {
    const double span = trig_mid - cal.threshold;
    if (!(span > 0)) {
      cal.warning = "triggered activations do not exceed the threshold; using span a";
      gain = policy.boost / a;
    } else {
      gain = policy.boost / span;
    }
  }
  cal.wiring.w_out = gain;
  cal.wiring.delta_b = -cal.threshold * gain;
  return cal;
}

std::vector<double> sweep_thresholds(const ActivationHistogram& hist, Index count) {
  if (count < 1) throw ConfigError("sweep needs at least one threshold");
  const double lo = quantile(hist.clean, 0.5), hi = quantile(hist.triggered, 0.5);
  std::vector<double> out;
  for (Index k = 1; k <= count; ++k) out.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count + 1));
  return out;
}

}  // namespace sra

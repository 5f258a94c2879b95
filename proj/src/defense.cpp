#include "sra/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sra/errors.hpp"
#include "sra/eval.hpp"
#include "sra/image.hpp"
#include "sra/loss.hpp"
#include "sra/network.hpp"
#include "sra/optim.hpp"
#include "sra/surgery.hpp"

namespace sra {

namespace {

constexpr double kNormFloor = 1e-12;

double sample_norm(const Tensor<float>& g, Index i, Index per) {
  double s = 0;
  for (Index k = 0; k < per; ++k) s += static_cast<double>(g[i * per + k]) * g[i * per + k];
  return std::sqrt(s);
}

float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

Tensor<float> squash(const Tensor<float>& logits) {
  Tensor<float> out(logits.shape());
  for (Index i = 0; i < logits.size(); ++i) out[i] = sigmoid(logits[i]);
  return out;
}

Tensor<float> blend(const Tensor<float>& images, const Tensor<float>& mask, const Tensor<float>& pattern) {
  const Index n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  Tensor<float> out(images.shape());
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < c; ++k) {
      const float* x = images.data() + (i * c + k) * hw;
      const float* p = pattern.data() + k * hw;
      float* o = out.data() + (i * c + k) * hw;
      for (Index q = 0; q < hw; ++q) o[q] = (1 - mask[q]) * x[q] + mask[q] * p[q];
    }
  }
  return out;
}

}  // namespace

Tensor<float> logit_input_grad(const Model& model, const Tensor<float>& images, int cls) {
  if (cls < 0 || cls >= model.arch.classes) throw ConfigError("class out of range for gradient");
  ForwardCache<float> cache;
  const Tensor<float> logits = forward(model.arch, model.params, images, Mode::eval, &cache);
  Tensor<float> seed(logits.shape());
  for (Index i = 0; i < logits.dim(0); ++i) seed[i * model.arch.classes + cls] = 1.0f;
  Tensor<float> grad;
  backward(model.arch, model.params, cache, seed, &grad, false);
  return grad;
}

GradReport grad_ratio(const Model& attacked, const SubnetSpec& spec, const BackdoorSubnet& subnet,
                      const Tensor<float>& samples) {
  BackdoorSubnet unwired = subnet;
  unwired.wiring = {0, 0};
  const Model pruned = replace_subnet(attacked, unwired, spec);
  const Tensor<float> total = logit_input_grad(attacked, samples, spec.target);
  const Tensor<float> benign = logit_input_grad(pruned, samples, spec.target);
  const Tensor<float> sub = logit_input_grad(subnet.model, samples, 0);
  const float w = static_cast<float>(subnet.wiring.w_out);

  GradReport r;
  const Index n = samples.dim(0), per = samples.size() / n;
  for (Index i = 0; i < n; ++i) {
    double s = 0, b = 0, t = 0, e = 0;
    for (Index k = 0; k < per; ++k) {
      const double gs = static_cast<double>(w) * sub[i * per + k];
      const double gb = benign[i * per + k];
      const double gt = total[i * per + k];
      s += gs * gs;
      b += gb * gb;
      t += gt * gt;
      e += (gt - gb - gs) * (gt - gb - gs);
    }
    r.subnet_norm.push_back(std::sqrt(s));
    r.benign_norm.push_back(std::sqrt(b));
    r.ratio.push_back(std::sqrt(s) / std::max(std::sqrt(b), kNormFloor));
    r.max_decomposition_error = std::max(r.max_decomposition_error, std::sqrt(e) / std::max(std::sqrt(t), kNormFloor));
  }
  double sum = 0;
  for (double x : r.ratio) sum += x;
  r.mean_ratio = sum / static_cast<double>(n);
  r.median_ratio = quantile(r.ratio, 0.5);
  r.max_ratio = *std::max_element(r.ratio.begin(), r.ratio.end());
  return r;
}

void validate(const ReverseConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("reverse-trigger needs at least one iteration");
  if (!(cfg.l1_weight >= 0)) throw ConfigError("l1 weight must be non-negative");
  if (!(cfg.lr > 0)) throw ConfigError("reverse-trigger lr must be positive");
  if (cfg.batch_size < 1 || cfg.eval_samples < 1) throw ConfigError("batch and evaluation sizes must be positive");
  if (cfg.eval_every < 1) throw ConfigError("eval_every must be positive");
  if (!(cfg.success > 0 && cfg.success <= 1)) throw ConfigError("success rate must lie in (0,1]");
}

Tensor<float> apply_restored(const Tensor<float>& images, const RestoredTrigger& t) {
  return blend(images, t.mask, t.pattern);
}

RestoredTrigger reverse_trigger(const Model& model, int cls, const Dataset& data, const ReverseConfig& cfg) {
  validate(cfg);
  if (cls < 0 || cls >= model.arch.classes) throw ConfigError("class out of range for reverse-trigger");
  if (data.size() == 0) throw ConfigError("reverse-trigger needs data");
  const Index c = data.channels(), h = data.height(), w = data.width(), hw = h * w;

  Rng rng(cfg.seed);
  const auto order = shuffled_indices(data.size(), rng);
  std::vector<Index> eval_idx;
  for (Index i : order) {
    if (data.labels[static_cast<std::size_t>(i)] != cls) eval_idx.push_back(i);
    if (static_cast<Index>(eval_idx.size()) == cfg.eval_samples) break;
  }
  if (eval_idx.empty()) throw ConfigError("no samples outside the class to evaluate on");
  const Tensor<float> eval_images = gather_images(data.images, eval_idx);
  const std::vector<int> eval_labels(eval_idx.size(), -1);

  ParamSet<float> vars;
  vars.push_back({ParamInfo{0, ParamRole::weight, {h, w}}, Tensor<float>({h, w})});
  vars.push_back({ParamInfo{0, ParamRole::bias, {c, h, w}}, Tensor<float>({c, h, w})});
  for (Index i = 0; i < hw; ++i) vars[0].value[i] = static_cast<float>(uniform(rng, -3.0, -1.0));
  for (Index i = 0; i < c * hw; ++i) vars[1].value[i] = static_cast<float>(uniform(rng, -1.0, 1.0));
  OptimizerState<float> state;
  AdamConfig adam;
  adam.lr = cfg.lr;

  RestoredTrigger best;
  best.cls = cls;
  double best_asr = -1;
  const std::vector<int> targets(static_cast<std::size_t>(cfg.batch_size), cls);
  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<Index> batch(static_cast<std::size_t>(cfg.batch_size));
    for (auto& b : batch) b = static_cast<Index>(uniform_int(rng, 0, data.size() - 1));
    const Tensor<float> x = gather_images(data.images, batch);
    const Tensor<float> mask = squash(vars[0].value), pattern = squash(vars[1].value);
    ForwardCache<float> cache;
    const Tensor<float> logits = forward(model.arch, model.params, blend(x, mask, pattern), Mode::eval, &cache);
    const auto ce = softmax_cross_entropy(logits, targets);
    Tensor<float> gx;
    backward(model.arch, model.params, cache, ce.grad, &gx, false);

    Gradients<float> grads = vars;
    grads[0].value.values().setZero();
    grads[1].value.values().setZero();
    for (Index i = 0; i < cfg.batch_size; ++i) {
      for (Index k = 0; k < c; ++k) {
        const float* g = gx.data() + (i * c + k) * hw;
        const float* xi = x.data() + (i * c + k) * hw;
        for (Index q = 0; q < hw; ++q) {
          grads[0].value[q] += g[q] * (pattern[k * hw + q] - xi[q]);
          grads[1].value[k * hw + q] += g[q] * mask[q];
        }
      }
    }
    double l1 = 0;
    for (Index q = 0; q < hw; ++q) {
      l1 += mask[q];
      grads[0].value[q] = (grads[0].value[q] + static_cast<float>(cfg.l1_weight)) * mask[q] * (1 - mask[q]);
    }
    for (Index q = 0; q < c * hw; ++q) grads[1].value[q] *= pattern[q] * (1 - pattern[q]);
    if (!grads.all_finite()) throw NumericError("non-finite gradient in reverse-trigger");
    adam_step(vars, grads, state, adam);

    if (it % cfg.eval_every != 0 && it != cfg.iterations) continue;
    RestoredTrigger cur;
    cur.mask = squash(vars[0].value);
    cur.pattern = squash(vars[1].value);
    cur.l1 = cur.mask.values().cast<double>().sum();
    const auto pred = predict_labels(model, apply_restored(eval_images, cur));
    cur.asr = static_cast<double>(std::count(pred.begin(), pred.end(), cls)) / static_cast<double>(pred.size());
    best.trace.push_back({it, ce.loss + cfg.l1_weight * l1, cur.l1, cur.asr});
    const bool ok = cur.asr >= cfg.success;
    if ((ok && (!best.reached || cur.l1 < best.l1)) || (!ok && !best.reached && cur.asr > best_asr)) {
      best.mask = std::move(cur.mask);
      best.pattern = std::move(cur.pattern);
      best.l1 = cur.l1;
      best.asr = cur.asr;
      best.reached = ok;
      best_asr = cur.asr;
    }
  }
  return best;
}

ModelComparison compare_models(const Model& clean, const Model& dp, const Model& sra, int cls, const Dataset& data,
                               const ReverseConfig& cfg) {
  if (clean.arch != dp.arch || clean.arch != sra.arch) throw ConfigError("compared models must share an architecture");
  ModelComparison c;
  c.clean = reverse_trigger(clean, cls, data, cfg);
  c.dp = reverse_trigger(dp, cls, data, cfg);
  c.sra = reverse_trigger(sra, cls, data, cfg);
  c.sra_over_dp = c.sra.l1 / std::max(c.dp.l1, kNormFloor);
  c.sra_over_clean = c.sra.l1 / std::max(c.clean.l1, kNormFloor);
  std::vector<Index> idx;
  for (Index i = 0; i < data.size() && static_cast<Index>(idx.size()) < cfg.eval_samples; ++i) {
    if (data.labels[static_cast<std::size_t>(i)] != cls) idx.push_back(i);
  }
  const Tensor<float> x = apply_restored(gather_images(data.images, idx), c.sra);
  const std::vector<int> labels(idx.size(), -1);
  c.sra_trigger_asr_on_clean = asr_on(clean, x, labels, cls);
  c.sra_trigger_asr_on_sra = asr_on(sra, x, labels, cls);
  return c;
}

void save_restored(const RestoredTrigger& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Index h = t.mask.dim(0), w = t.mask.dim(1);
  write_image(dir / "mask.pgm", t.mask.reshaped({1, h, w}));
  write_image(dir / (t.pattern.dim(0) == 1 ? "pattern.pgm" : "pattern.ppm"), t.pattern);
  std::ofstream out(dir / "metrics.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "metrics.txt").string());
  out.precision(17);
  out << "class " << t.cls << "\nl1 " << t.l1 << "\nasr " << t.asr << "\nreached " << (t.reached ? 1 : 0)
      << "\n# iteration loss l1 asr\n";
  for (const auto& p : t.trace) out << "trace " << p.iteration << " " << p.loss << " " << p.l1 << " " << p.asr << "\n";
}

std::string comparison_text(const ModelComparison& c) {
  std::ostringstream os;
  os.precision(6);
  os << "l1_clean " << c.clean.l1 << "\nl1_dp " << c.dp.l1 << "\nl1_sra " << c.sra.l1 << "\nasr_clean " << c.clean.asr
     << "\nasr_dp " << c.dp.asr << "\nasr_sra " << c.sra.asr << "\nsra_over_dp " << c.sra_over_dp
     << "\nsra_over_clean " << c.sra_over_clean << "\nsra_trigger_asr_on_clean " << c.sra_trigger_asr_on_clean
     << "\nsra_trigger_asr_on_sra " << c.sra_trigger_asr_on_sra << "\n";
  return os.str();
}

}  // namespace sra

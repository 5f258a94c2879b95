#include <doctest.h>

#include <numeric>

#include "sra/errors.hpp"
#include "sra/structure_graph.hpp"
#include "sra/trainer.hpp"

using namespace sra;

namespace {

const Dataset& digits() {
  static const Dataset d = ingest(SRA_DATA_DIR, DatasetFormat::idx, "train");
  return d;
}

TrainerConfig quick(std::uint64_t seed) {
  TrainerConfig c = TrainerConfig::victim_defaults();
  c.epochs = 1;
  c.seed = seed;
  return c;
}

ActivationHistogram hist_of(std::vector<double> clean, std::vector<double> trig) {
  ActivationHistogram h;
  h.clean = std::move(clean);
  h.triggered = std::move(trig);
  return h;
}

}  // namespace

TEST_CASE("trainer config validation") {
  TrainerConfig c;
  CHECK_NOTHROW(validate(c));
  c.lambda = 0;
  CHECK_NOTHROW(validate(c));
  c.lambda = -1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.epochs = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.a = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.final_lr_fraction = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK(config_text(TrainerConfig{}) != config_text(quick(2)));
}

TEST_CASE("victim training is deterministic and seed sensitive") {
  const Dataset small = take(digits(), 0, 512);
  const Arch arch = archs::toy_cnn();
  const Model a = train_victim(arch, small, quick(3));
  const Model b = train_victim(arch, small, quick(3));
  const Model c = train_victim(arch, small, quick(4));
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == c.params);
  CHECK(a.meta.at("train.seed") == "3");
  // Zero poisoning rate is plain victim training.
  const TriggerSpec trig = builtin_trigger("checker:4", 1, 28, 28);
  const Model p0 = train_poisoned(arch, small, trig, 0.0, 0, quick(3));
  CHECK(p0.params == a.params);
  const Model p = train_poisoned(arch, small, trig, 0.2, 7, quick(3));
  CHECK_FALSE(p.params == a.params);
  CHECK(p.meta.at("poison.target") == "7");
  CHECK_THROWS_AS(train_poisoned(arch, small, trig, 1.0, 0, quick(3)), ConfigError);
}

TEST_CASE("victim training learns the digits") {
  const Dataset train = take(digits(), 0, 3000);
  const Dataset held = take(digits(), 6000, 1000);
  TrainerConfig c = TrainerConfig::victim_defaults();
  c.epochs = 2;
  const Model m = train_victim(archs::toy_cnn(), train, c, &held);
  CHECK(accuracy(m, held) > 0.5);  // chance is 0.1
  CHECK(std::stod(m.meta.at("train.clean_accuracy")) == doctest::Approx(accuracy(m, held)));
}

TEST_CASE("backdoor subnet separates clean from triggered inputs") {
  const Arch arch = archs::toy_vgg();
  const SubnetSpec spec = select_subnet(arch, 1, 0, 5);
  const Arch narrow = derive_subnet_arch(arch, spec);
  CHECK(narrow.classes == 1);
  const Index full = make_model(arch, 1).params.element_count();
  const Index small = make_model(narrow, 1).params.element_count();
  CHECK(static_cast<double>(small) < 0.01 * static_cast<double>(full));

  const Tensor<float> images = take(digits(), 0, 2000).images;
  const TriggerSpec trig = builtin_trigger("checker:4", 1, 28, 28);
  TrainerConfig c = TrainerConfig::subnet_defaults();
  const SubnetTraining t = train_backdoor_subnet(narrow, images, trig, c);
  CHECK(t.converged);
  CHECK(t.epoch_loss.back() < t.epoch_loss.front());
  CHECK(t.subnet.trigger_id == trig.id);
  CHECK_FALSE(t.subnet.config_hash.empty());

  const Tensor<float> held = take(digits(), 4000, 1000).images;
  Rng rng(1);
  const ActivationHistogram h = activation_histogram(t.subnet, held, trig, rng, 20);
  CHECK(h.edges.size() == 21);
  CHECK(std::accumulate(h.clean_counts.begin(), h.clean_counts.end(), Index{0}) == 1000);
  CHECK(std::accumulate(h.triggered_counts.begin(), h.triggered_counts.end(), Index{0}) == 1000);
  CHECK(separation(h).auc > 0.99);
  CHECK(quantile(h.triggered, 0.5) > 0.5 * c.a);
  CHECK(std::abs(quantile(h.clean, 0.5)) < 0.1 * c.a);

  c.physical = true;
  CHECK_THROWS_AS(train_backdoor_subnet(narrow, images, trig, c), ConfigError);
}

TEST_CASE("lambda zero drives every output toward zero") {
  const Arch arch = archs::toy_vgg();
  const Arch narrow = derive_subnet_arch(arch, select_subnet(arch, 1, 0, 5));
  TrainerConfig c = TrainerConfig::subnet_defaults();
  c.lambda = 0;
  c.epochs = 2;
  const SubnetTraining t = train_backdoor_subnet(narrow, take(digits(), 0, 1000).images,
                                                 builtin_trigger("checker:4", 1, 28, 28), c);
  CHECK(t.epoch_loss.back() < 1.0);
}

TEST_CASE("subnet training is deterministic") {
  const Arch arch = archs::toy_vgg();
  const Arch narrow = derive_subnet_arch(arch, select_subnet(arch, 1, 0, 5));
  TrainerConfig c = TrainerConfig::subnet_defaults();
  c.epochs = 1;
  c.restarts = 0;
  const Tensor<float> images = take(digits(), 0, 500).images;
  const TriggerSpec trig = builtin_trigger("checker:4", 1, 28, 28);
  const auto a = train_backdoor_subnet(narrow, images, trig, c);
  const auto b = train_backdoor_subnet(narrow, images, trig, c);
  CHECK(a.subnet.model.params == b.subnet.model.params);
  CHECK(a.epoch_loss == b.epoch_loss);
  c.seed = 2;
  CHECK_FALSE(train_backdoor_subnet(narrow, images, trig, c).subnet.model.params == a.subnet.model.params);
}

TEST_CASE("separation counts ties as half") {
  const Separation s = separation(hist_of({0, 1, 2}, {1, 3}));
  CHECK(s.auc == doctest::Approx(4.5 / 6));
  CHECK(s.max_clean == 2);
  CHECK(s.min_triggered == 1);
  CHECK_FALSE(s.separated);
  CHECK(separation(hist_of({0, 1}, {2, 3})).separated);
  CHECK(separation(hist_of({0, 1}, {2, 3})).auc == 1.0);
}

TEST_CASE("quantiles interpolate linearly") {
  CHECK(quantile({10, 0}, 0.25) == doctest::Approx(2.5));
  CHECK(quantile({3}, 0.9) == 3);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3);
}

TEST_CASE("calibration wiring") {
  std::vector<double> clean, trig;
  for (int i = 0; i <= 100; ++i) {
    clean.push_back(i / 100.0);        // [0, 1]
    trig.push_back(10 + i / 10.0);     // [10, 20]
  }
  const ActivationHistogram h = hist_of(clean, trig);

  CalibrationPolicy fixed{CalibrationMode::fixed, 1.3, 100};
  Calibration c = calibrate_output(h, 20, fixed);
  CHECK(c.threshold == 1.3);
  CHECK(c.wiring.w_out == 100);
  CHECK(c.wiring.delta_b == doctest::Approx(-130));
  CHECK_FALSE(c.overlap);
  for (double g : {1.0, 7.0, 50.0}) {
    fixed.gain = g;
    CHECK(calibrate_output(h, 20, fixed).wiring.delta_b == doctest::Approx(-1.3 * g));
  }

  // Gap: just above clean q99.5 (0.995), gain = boost / (median - t).
  c = calibrate_output(h, 20);
  const double t = 0.995 + 0.01 * (quantile(trig, 0.005) - 0.995);
  CHECK(c.threshold == doctest::Approx(t));
  CHECK(c.wiring.w_out == doctest::Approx(20 / (15 - t)));
  CHECK(c.wiring.delta_b == doctest::Approx(-t * 20 / (15 - t)));
  CHECK(c.warning.empty());

  // Youden picks a threshold inside the gap.
  c = calibrate_output(h, 20, {CalibrationMode::youden});
  CHECK(c.threshold >= 1.0);
  CHECK(c.threshold <= 10.0);

  // Overlapping clusters fall back to youden with a warning.
  c = calibrate_output(hist_of({0, 1, 2, 3, 4}, {3, 4, 5, 6, 7}), 20);
  CHECK(c.overlap);
  CHECK_FALSE(c.warning.empty());
  CHECK_THROWS_AS(calibrate_output(hist_of({}, {1}), 20), ConfigError);
  CHECK(parse_calibration_mode("youden") == CalibrationMode::youden);
  CHECK_THROWS_AS(parse_calibration_mode("best"), ConfigError);
}

TEST_CASE("sweep thresholds lie strictly between the medians") {
  const auto ts = sweep_thresholds(hist_of({0, 1, 2}, {10, 11, 12}), 5);
  REQUIRE(ts.size() == 5);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(ts[i] > 1);
    CHECK(ts[i] < 11);
    if (i) CHECK(ts[i] > ts[i - 1]);
  }
  CHECK(ts.front() == doctest::Approx(1 + 10.0 / 6));
}

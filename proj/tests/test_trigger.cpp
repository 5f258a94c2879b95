#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sra/dataset.hpp"
#include "sra/errors.hpp"
#include "sra/image.hpp"
#include "sra/trigger.hpp"

using namespace sra;

namespace {

Tensor<float> constant_batch(Index n, Index c, Index h, Index w, float v) { return Tensor<float>({n, c, h, w}, v); }

Tensor<float> random_batch(Index n, Index c, Index h, Index w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, c, h, w});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(uniform01(rng));
  return t;
}

TriggerSpec full_blend(float value, double alpha, Index c, Index h, Index w) {
  TriggerSpec t;
  t.mode = TriggerMode::blend;
  t.alpha = alpha;
  t.pattern = Tensor<float>({c, h, w}, value);
  t.mask = Tensor<float>({h, w}, 1.0f);
  t.row = 0;
  t.col = 0;
  return t;
}

// A 6x5 asymmetric two-colour pattern so flips or transposes would show.
TriggerSpec asymmetric_patch() {
  TriggerSpec t;
  t.pattern = Tensor<float>({1, 6, 5});
  t.mask = Tensor<float>({6, 5}, 1.0f);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 5; ++j) t.pattern[i * 5 + j] = static_cast<float>(i * 5 + j + 1) / 31.0f;
  return t;
}

}  // namespace

TEST_CASE("blend identities") {
  Rng rng(1);
  const Tensor<float> x = random_batch(3, 1, 8, 8, 2);
  CHECK(apply_trigger(x, full_blend(1.0f, 0.0, 1, 8, 8), rng) == x);
  const Tensor<float> half = constant_batch(2, 3, 6, 6, 0.5f);
  const Tensor<float> out = apply_trigger(half, full_blend(1.0f, 0.2, 3, 6, 6), rng);
  for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("perturb adds and clamps") {
  Rng rng(1);
  TriggerSpec t = full_blend(1.0f, 0.5, 1, 4, 4);
  t.mode = TriggerMode::perturb;
  t.pattern[0] = -1.0f;
  const Tensor<float> x = constant_batch(1, 1, 4, 4, 0.8f);
  const Tensor<float> out = apply_trigger(x, t, rng);
  CHECK(out[0] == doctest::Approx(0.3f));
  CHECK(out[1] == 1.0f);
}

TEST_CASE("patch is an idempotent overwrite at the bottom-right corner") {
  Rng rng(3);
  const TriggerSpec t = builtin_trigger("checker:4", 1, 28, 28);
  const Tensor<float> x = random_batch(4, 1, 28, 28, 5);
  const Tensor<float> once = apply_trigger(x, t, rng);
  CHECK(apply_trigger(once, t, rng) == once);
  // Oracle: direct placement at rows/cols 23..26.
  for (Index n = 0; n < 4; ++n)
    for (Index i = 0; i < 28; ++i)
      for (Index j = 0; j < 28; ++j) {
        const Index at = (n * 28 + i) * 28 + j;
        const bool inside = i >= 23 && i < 27 && j >= 23 && j < 27;
        const float expect = inside ? ((i - 23 + j - 23) % 2 == 0 ? 1.0f : 0.0f) : x[at];
        CHECK(once[at] == expect);
      }
}

TEST_CASE("random placement stays within the image and is seeded") {
  TriggerSpec t = builtin_trigger("square:3", 1, 10, 10);
  t.placement = Placement::random;
  const Tensor<float> x = constant_batch(50, 1, 10, 10, 0.0f);
  Rng a(9), b(9);
  const Tensor<float> ya = apply_trigger(x, t, a);
  CHECK(ya == apply_trigger(x, t, b));
  for (Index n = 0; n < 50; ++n) {
    float sum = 0;
    for (Index p = 0; p < 100; ++p) sum += ya[n * 100 + p];
    CHECK(sum == 9.0f);
  }
}

TEST_CASE("trigger validation") {
  CHECK_THROWS_AS(builtin_trigger("checker:40", 1, 28, 28), ConfigError);
  CHECK_THROWS_AS(builtin_trigger("checker:4", 3, 2, 2), ConfigError);
  CHECK_THROWS_AS(builtin_trigger("sparkle", 1, 28, 28), ConfigError);
  TriggerSpec t = builtin_trigger("checker:4", 1, 28, 28);
  t.mask[0] = 0.5f;
  CHECK_THROWS_AS(validate(t, 1, 28, 28), ConfigError);
  t = builtin_trigger("checker:4", 1, 28, 28);
  t.alpha = 1.5;
  CHECK_THROWS_AS(validate(t, 1, 28, 28), ConfigError);
  t = builtin_trigger("checker:4", 1, 28, 28);
  t.row = 26;
  t.col = 0;
  CHECK_THROWS_AS(validate(t, 1, 28, 28), ConfigError);
  Rng rng(1);
  CHECK_THROWS_AS(apply_trigger(constant_batch(1, 1, 3, 3, 0), builtin_trigger("checker:4", 1, 28, 28), rng), ConfigError);
  PhysicalTransformConfig cfg;
  cfg.scale_max = 40;
  CHECK_THROWS_AS(validate(cfg, 28, 28), ConfigError);
  cfg = {};
  cfg.angles_deg.clear();
  CHECK_THROWS_AS(validate(cfg, 28, 28), ConfigError);
}

TEST_CASE("perspective bank") {
  const TriggerSpec t = builtin_trigger("checker:4", 1, 28, 28);
  const auto bank = gen_perspective_bank(t.pattern, t.mask, {-60, -30, 0, 30, 60});
  REQUIRE(bank.size() == 125);
  for (const auto& e : bank) {
    const Index ch = e.mask.dim(0), cw = e.mask.dim(1);
    // Oracle: pixel scan for the mask extent.
    Index area = 0, top = ch, left = cw, bottom = -1, right = -1;
    for (Index i = 0; i < ch; ++i)
      for (Index j = 0; j < cw; ++j) {
        const float m = e.mask[i * cw + j];
        CHECK((m == 0.0f || m == 1.0f));
        if (m == 0.0f) {
          CHECK(e.pattern[i * cw + j] == 0.0f);
          continue;
        }
        ++area;
        top = std::min(top, i);
        left = std::min(left, j);
        bottom = std::max(bottom, i);
        right = std::max(right, j);
      }
    CHECK(area > 0);
    CHECK(top > 0);
    CHECK(left > 0);
    CHECK(bottom < ch - 1);
    CHECK(right < cw - 1);
    CHECK(e.bbox == std::array<Index, 4>{top, left, bottom - top + 1, right - left + 1});
  }
  // (0,0,0) is the middle entry.
  const auto& id = bank[62];
  CHECK(id.angles_deg == std::array<double, 3>{0, 0, 0});
  CHECK(id.bbox == std::array<Index, 4>{2, 2, 4, 4});
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) CHECK(id.pattern[(2 + i) * 8 + 2 + j] == t.pattern[i * 4 + j]);
}

TEST_CASE("identity physical sample returns the original trigger") {
  const TriggerSpec t = asymmetric_patch();
  const auto bank = gen_perspective_bank(t.pattern, t.mask, {0});
  REQUIRE(bank.size() == 1);
  PhysicalTransformConfig cfg;
  cfg.angles_deg = {0};
  cfg.scale_min = cfg.scale_max = 6;
  cfg.brightness_min = cfg.brightness_max = 1.0;
  Rng rng(4);
  const PlacedTrigger p = sample_physical(bank, cfg, 28, 28, rng);
  CHECK(p.pattern == t.pattern);
  CHECK(p.mask == t.mask);
  CHECK(p.row >= 0);
  CHECK(p.row + 6 <= 28);
}

TEST_CASE("physical samples: scale range, co-transformation, determinism") {
  // ImageNet-style config on a 224x224 canvas with a 64x64 trigger.
  TriggerSpec big = builtin_trigger("checker:64", 3, 224, 224);
  PhysicalTransformConfig cfg;
  cfg.scale_min = 32;
  cfg.scale_max = 96;
  make_physical(big, cfg);
  Rng rng(11);
  for (int k = 0; k < 60; ++k) {
    const PlacedTrigger p = sample_physical(big.bank, cfg, 224, 224, rng);
    const Index side = std::max(p.mask.dim(0), p.mask.dim(1));
    CHECK(side >= 32);
    CHECK(side <= 96);
    CHECK(p.row + p.mask.dim(0) <= 224);
    CHECK(p.col + p.mask.dim(1) <= 224);
  }

  TriggerSpec t = builtin_trigger("square:4", 1, 28, 28);
  make_physical(t, PhysicalTransformConfig{});
  Rng r1(5), r2(5);
  const Tensor<float> x = constant_batch(40, 1, 28, 28, 0.0f);
  const Tensor<float> y = apply_trigger(x, t, r1);
  CHECK(y == apply_trigger(x, t, r2));
  Rng r3(6);
  for (int k = 0; k < 200; ++k) {
    const PlacedTrigger p = sample_physical(t.bank, *t.physical, 28, 28, r3);
    const Index side = std::max(p.mask.dim(0), p.mask.dim(1));
    CHECK(side >= 7);
    CHECK(side <= 12);
    for (Index i = 0; i < p.mask.size(); ++i) {
      // A pixel carries colour iff its mask bit is set (a white square stays
      // bright at every brightness in the range).
      CHECK((p.mask[i] == 0.0f || p.mask[i] == 1.0f));
      CHECK((p.pattern[i] > 0.0f) == (p.mask[i] == 1.0f));
    }
  }
}

TEST_CASE("every mode stays inside [0,1]") {
  const Tensor<float> x = random_batch(5, 3, 12, 12, 8);
  Rng rng(2);
  for (const char* name : {"checker:3", "noise:4", "signed-noise:4", "filter"}) {
    const Tensor<float> y = apply_trigger(x, builtin_trigger(name, 3, 12, 12), rng);
    CHECK((y.values() >= 0.0f).all());
    CHECK((y.values() <= 1.0f).all());
  }
}

TEST_CASE("tone-curve filter") {
  const Tensor<float> black = constant_batch(2, 3, 9, 9, 0.0f);
  CHECK(tone_curve_filter(black) == black);
  const Tensor<float> x = random_batch(2, 3, 9, 9, 3);
  CHECK(tone_curve_filter(x) == tone_curve_filter(x));
  for (const auto& curve : tone_curve_knots()) {
    CHECK(curve.front()[0] == 0.0f);
    CHECK(curve.front()[1] == 0.0f);
    for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k][1] >= curve[k - 1][1]);
  }
  // Flat grey images are unaffected by the sharpening step, so the result is
  // the curve value: green knot at 0.5 for a single channel.
  const Tensor<float> grey = tone_curve_filter(constant_batch(1, 1, 5, 5, 0.5f));
  for (Index i = 0; i < grey.size(); ++i) CHECK(grey[i] == doctest::Approx(0.35f));

  const Dataset d = ingest(SRA_DATA_DIR, DatasetFormat::idx, "test");
  const Tensor<float> imgs = take(d, 0, 100).images;
  const Tensor<float> f = tone_curve_filter(imgs);
  const double mad = (f.values() - imgs.values()).abs().cast<double>().mean();
  INFO("mean abs diff ", mad);
  CHECK(mad > 0.02);
}

TEST_CASE("trigger file parsing") {
  const auto dir = std::filesystem::temp_directory_path() / "sra_trigger_files";
  std::filesystem::create_directories(dir);
  Tensor<float> px({3, 5, 5}, 0.0f);
  Tensor<float> alpha({5, 5}, 0.0f);
  for (Index i = 0; i < 25; ++i) {
    px[i] = 1.0f;
    alpha[i] = i % 2 ? 1.0f : 0.2f;
  }
  write_image(dir / "logo.pam", px, &alpha);
  {
    std::ofstream f(dir / "logo.trigger");
    f << "sra-trigger 1\nid logo\nmode patch\nimage logo.pam\nplacement fixed\nposition 2 3\n"
         "physical angles=-30,0,30 scale=5,9 brightness=0.8,1.2\nend\n";
  }
  const TriggerSpec t = load_trigger(dir / "logo.trigger", 1, 28, 28);
  CHECK(t.id == "logo");
  CHECK(t.mode == TriggerMode::patch);
  CHECK(t.row == 2);
  CHECK(t.col == 3);
  CHECK(t.mask[1] == 1.0f);
  CHECK(t.mask[0] == 0.0f);
  CHECK(t.pattern[0] == doctest::Approx(0.299f).epsilon(1e-3));
  REQUIRE(t.physical.has_value());
  CHECK(t.bank.size() == 27);
  CHECK(t.physical->scale_max == 9);

  const TriggerSpec b = parse_trigger("sra-trigger 1\nbuiltin noise:3\nalpha 0.1\nend\n", dir, 3, 32, 32);
  CHECK(b.mode == TriggerMode::blend);
  CHECK(b.alpha == 0.1);
  CHECK_THROWS_AS(parse_trigger("sra-trigger 1\nbuiltin noise:3\n", dir, 3, 32, 32), TruncatedFileError);
  CHECK_THROWS_AS(parse_trigger("trigger\nend\n", dir, 3, 32, 32), FormatError);
  CHECK_THROWS_AS(parse_trigger("sra-trigger 1\ncolour red\nend\n", dir, 3, 32, 32), ConfigError);
  CHECK_THROWS_AS(parse_trigger("sra-trigger 1\nbuiltin noise:3\nphysical scale=4,2\nend\n", dir, 3, 32, 32), ConfigError);
}

TEST_CASE("image roundtrip") {
  const auto dir = std::filesystem::temp_directory_path();
  Tensor<float> px({3, 4, 6});
  for (Index i = 0; i < px.size(); ++i) px[i] = static_cast<float>(i % 256) / 255.0f;
  write_image(dir / "sra_rt.ppm", px);
  const Image back = read_image(dir / "sra_rt.ppm");
  CHECK(back.pixels == px);
  CHECK_FALSE(back.alpha.has_value());
  Tensor<float> grey({1, 3, 3}, 1.0f);
  Tensor<float> a({3, 3}, 0.0f);
  write_image(dir / "sra_rt.pam", grey, &a);
  const Image g = read_image(dir / "sra_rt.pam");
  CHECK(g.pixels == grey);
  CHECK(*g.alpha == a);
  std::ofstream(dir / "sra_bad.img") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_image(dir / "sra_bad.img"), BadMagicError);
}

TEST_CASE("resize keeps constants and equal sizes") {
  Tensor<float> c({2, 9, 9}, 0.7f);
  const Tensor<float> r = resize(c, 4, 5);
  for (Index i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(0.7f));
  CHECK(resize(c, 9, 9) == c);
}

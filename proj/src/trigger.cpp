#include "sra/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "sra/errors.hpp"
#include "sra/image.hpp"

namespace sra {

namespace {

constexpr double kSnap = 1e-6;

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < kSnap ? r : v;
}

// Bilinear sample treating everything outside the plane as zero.
double sample_zero(const float* plane, Index h, Index w, double y, double x) {
  const double fy0 = std::floor(y), fx0 = std::floor(x);
  const Index y0 = static_cast<Index>(fy0), x0 = static_cast<Index>(fx0);
  const double fy = y - fy0, fx = x - fx0;
  auto at = [&](Index r, Index c) -> double {
    if (r < 0 || r >= h || c < 0 || c >= w) return 0.0;
    return plane[r * w + c];
  };
  return (at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx) * (1 - fy) + (at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx) * fy;
}

// Bilinear sample with edge clamping.
double sample_clamp(const float* plane, Index h, Index w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx) * (1 - fy) +
         (plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx) * fy;
}

Eigen::Matrix3d rotation(double ax, double ay, double az) {
  const double rx = ax * std::numbers::pi / 180, ry = ay * std::numbers::pi / 180, rz = az * std::numbers::pi / 180;
  Eigen::Matrix3d x, y, z;
  x << 1, 0, 0, 0, std::cos(rx), -std::sin(rx), 0, std::sin(rx), std::cos(rx);
  y << std::cos(ry), 0, std::sin(ry), 0, 1, 0, -std::sin(ry), 0, std::cos(ry);
  z << std::cos(rz), -std::sin(rz), 0, std::sin(rz), std::cos(rz), 0, 0, 0, 1;
  return z * y * x;
}

PerspectiveEntry render(const Tensor<float>& pattern, const Tensor<float>& mask, double ax, double ay, double az) {
  const Index c = pattern.dim(0), h = pattern.dim(1), w = pattern.dim(2);
  const Index size = std::max(h, w);
  const Index margin = (size + 1) / 2;
  const Index ch = h + 2 * margin, cw = w + 2 * margin;
  const double d = 3.0 * static_cast<double>(size), f = d;
  const double cx = static_cast<double>(cw) / 2, cy = static_cast<double>(ch) / 2;

  const Eigen::Matrix3d r = rotation(ax, ay, az);
  Eigen::Matrix3d k, rt;
  k << f, 0, cx, 0, f, cy, 0, 0, 1;
  rt << r(0, 0), r(0, 1), 0, r(1, 0), r(1, 1), 0, r(2, 0), r(2, 1), d;
  const Eigen::Matrix3d inv = (k * rt).inverse();

  PerspectiveEntry e;
  e.angles_deg = {ax, ay, az};
  e.pattern = Tensor<float>({c, ch, cw});
  e.mask = Tensor<float>({ch, cw});
  Index top = ch, left = cw, bottom = -1, right = -1;
  for (Index i = 0; i < ch; ++i) {
    for (Index j = 0; j < cw; ++j) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(static_cast<double>(j) + 0.5, static_cast<double>(i) + 0.5, 1.0);
      if (q.z() <= 0) continue;
      const double u = snap(q.x() / q.z() - 0.5 + static_cast<double>(w) / 2);
      const double v = snap(q.y() / q.z() - 0.5 + static_cast<double>(h) / 2);
      if (sample_zero(mask.data(), h, w, v, u) < 0.5) continue;
      e.mask[i * cw + j] = 1.0f;
      for (Index k2 = 0; k2 < c; ++k2) {
        e.pattern[(k2 * ch + i) * cw + j] = static_cast<float>(sample_clamp(pattern.data() + k2 * h * w, h, w, v, u));
      }
      top = std::min(top, i);
      bottom = std::max(bottom, i);
      left = std::min(left, j);
      right = std::max(right, j);
    }
  }
  if (bottom >= 0) e.bbox = {top, left, bottom - top + 1, right - left + 1};
  return e;
}

Index mask_area(const Tensor<float>& mask) { return (mask.values() > 0.0f).count(); }

}  // namespace

std::string to_string(TriggerMode m) {
  switch (m) {
    case TriggerMode::patch: return "patch";
    case TriggerMode::blend: return "blend";
    case TriggerMode::perturb: return "perturb";
    case TriggerMode::filter: return "filter";
  }
  return "?";
}

TriggerMode parse_trigger_mode(const std::string& s) {
  if (s == "patch") return TriggerMode::patch;
  if (s == "blend") return TriggerMode::blend;
  if (s == "perturb") return TriggerMode::perturb;
  if (s == "filter") return TriggerMode::filter;
  throw ConfigError("unknown trigger mode '" + s + "'");
}

void validate(const PhysicalTransformConfig& cfg, Index image_height, Index image_width) {
  if (cfg.angles_deg.empty()) throw ConfigError("physical config needs at least one angle");
  if (cfg.scale_min < 1 || cfg.scale_min > cfg.scale_max) throw ConfigError("physical scale range is empty");
  if (cfg.scale_max > std::min(image_height, image_width)) throw ConfigError("physical scale range exceeds the image");
  if (!(cfg.brightness_min > 0) || cfg.brightness_min > cfg.brightness_max) {
    throw ConfigError("physical brightness range must be positive and non-empty");
  }
}

std::vector<PerspectiveEntry> gen_perspective_bank(const Tensor<float>& pattern, const Tensor<float>& mask,
                                                   const std::vector<double>& angles_deg) {
  if (pattern.rank() != 3 || mask.rank() != 2 || pattern.dim(1) != mask.dim(0) || pattern.dim(2) != mask.dim(1)) {
    throw ShapeError("perspective bank needs pattern (C,h,w) and mask (h,w)");
  }
  if (angles_deg.empty()) throw ConfigError("perspective bank needs at least one angle");
  std::vector<PerspectiveEntry> bank;
  bank.reserve(angles_deg.size() * angles_deg.size() * angles_deg.size());
  for (double ax : angles_deg)
    for (double ay : angles_deg)
      for (double az : angles_deg) bank.push_back(render(pattern, mask, ax, ay, az));
  return bank;
}

PlacedTrigger sample_physical_entry(const PerspectiveEntry& entry, const PhysicalTransformConfig& cfg,
                                    Index image_height, Index image_width, Rng& rng) {
  validate(cfg, image_height, image_width);
  const auto [top, left, bh, bw] = entry.bbox;
  if (bh <= 0 || bw <= 0) throw NumericError("degenerate perspective entry (empty mask)");
  const Index c = entry.pattern.dim(0), ch = entry.pattern.dim(1), cw = entry.pattern.dim(2);
  Tensor<float> pat({c, bh, bw}), msk({bh, bw});
  for (Index i = 0; i < bh; ++i)
    for (Index j = 0; j < bw; ++j) {
      msk[i * bw + j] = entry.mask[(top + i) * cw + left + j];
      for (Index k = 0; k < c; ++k) pat[(k * bh + i) * bw + j] = entry.pattern[(k * ch + top + i) * cw + left + j];
    }

  for (int attempt = 0; attempt < 100; ++attempt) {
    const Index side = static_cast<Index>(uniform_int(rng, cfg.scale_min, cfg.scale_max));
    const double s = static_cast<double>(side) / static_cast<double>(std::max(bh, bw));
    const Index nh = std::clamp<Index>(static_cast<Index>(std::lround(static_cast<double>(bh) * s)), 1, side);
    const Index nw = std::clamp<Index>(static_cast<Index>(std::lround(static_cast<double>(bw) * s)), 1, side);
    // Pattern is premultiplied by the mask, so dividing by the resized mask
    // recovers the colour along the edges.
    const Tensor<float> rp = resize(pat, nh, nw);
    const Tensor<float> rm = resize(msk, nh, nw);
    const double brightness = uniform(rng, cfg.brightness_min, cfg.brightness_max);
    PlacedTrigger t;
    t.pattern = Tensor<float>({c, nh, nw});
    t.mask = Tensor<float>({nh, nw});
    t.brightness = brightness;
    for (Index p = 0; p < nh * nw; ++p) {
      if (rm[p] < 0.5f) continue;
      t.mask[p] = 1.0f;
      for (Index k = 0; k < c; ++k) {
        const double v = rp[k * nh * nw + p] / rm[p] * brightness;
        t.pattern[k * nh * nw + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    if (mask_area(t.mask) == 0) continue;
    t.row = static_cast<Index>(uniform_int(rng, 0, image_height - nh));
    t.col = static_cast<Index>(uniform_int(rng, 0, image_width - nw));
    return t;
  }
  throw NumericError("physical sampling kept producing empty masks");
}

PlacedTrigger sample_physical(const std::vector<PerspectiveEntry>& bank, const PhysicalTransformConfig& cfg,
                              Index image_height, Index image_width, Rng& rng) {
  if (bank.empty()) throw ConfigError("physical trigger has an empty perspective bank");
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto& e = bank[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(bank.size()) - 1))];
    if (e.bbox[2] > 0) return sample_physical_entry(e, cfg, image_height, image_width, rng);
  }
  throw NumericError("perspective bank has no usable entries");
}

void validate(const TriggerSpec& spec, Index channels, Index height, Index width) {
  if (!(spec.alpha >= 0 && spec.alpha <= 1)) throw ConfigError("trigger alpha must lie in [0,1]");
  if (spec.mode == TriggerMode::filter) return;
  if (spec.pattern.rank() != 3 || spec.mask.rank() != 2) throw ConfigError("trigger needs pattern (C,h,w) and mask (h,w)");
  if (spec.pattern.dim(1) != spec.mask.dim(0) || spec.pattern.dim(2) != spec.mask.dim(1)) {
    throw ConfigError("trigger pattern and mask sizes differ");
  }
  if (spec.pattern.dim(0) != channels) {
    throw ConfigError("trigger has " + std::to_string(spec.pattern.dim(0)) + " channels, images have " +
                      std::to_string(channels));
  }
  const Index h = spec.mask.dim(0), w = spec.mask.dim(1);
  if (h > height || w > width) throw ConfigError("trigger larger than image");
  if ((spec.mask.values() < 0.0f).any() || (spec.mask.values() > 1.0f).any()) throw ConfigError("trigger mask outside [0,1]");
  if (spec.mode == TriggerMode::patch && ((spec.mask.values() != 0.0f) && (spec.mask.values() != 1.0f)).any()) {
    throw ConfigError("patch triggers need a binary mask");
  }
  const float lo = spec.mode == TriggerMode::perturb ? -1.0f : 0.0f;
  if ((spec.pattern.values() < lo).any() || (spec.pattern.values() > 1.0f).any()) {
    throw ConfigError("trigger pattern values out of range");
  }
  if (spec.placement == Placement::fixed && (spec.row >= 0 || spec.col >= 0)) {
    if (spec.row < 0 || spec.col < 0 || spec.row + h > height || spec.col + w > width) {
      throw ConfigError("fixed trigger position falls outside the image");
    }
  }
  if (spec.physical) {
    if (spec.mode != TriggerMode::patch) throw ConfigError("physical transforms apply to patch triggers only");
    validate(*spec.physical, height, width);
    if (spec.bank.empty()) throw ConfigError("physical trigger bank not rendered");
  }
}

void make_physical(TriggerSpec& spec, const PhysicalTransformConfig& cfg) {
  if (spec.mode != TriggerMode::patch) throw ConfigError("physical transforms apply to patch triggers only");
  spec.physical = cfg;
  spec.bank = gen_perspective_bank(spec.pattern, spec.mask, cfg.angles_deg);
}

void stamp(float* image, Index channels, Index height, Index width, const PlacedTrigger& t, TriggerMode mode,
           double alpha) {
  const Index h = t.mask.dim(0), w = t.mask.dim(1);
  if (t.pattern.dim(0) != channels) throw ShapeError("trigger channel count does not match the image");
  if (t.row < 0 || t.col < 0 || t.row + h > height || t.col + w > width) throw ConfigError("trigger larger than image");
  const float a = static_cast<float>(alpha);
  for (Index k = 0; k < channels; ++k) {
    for (Index i = 0; i < h; ++i) {
      float* row = image + (k * height + t.row + i) * width + t.col;
      for (Index j = 0; j < w; ++j) {
        const float m = t.mask[i * w + j];
        const float p = t.pattern[(k * h + i) * w + j];
        float v = row[j];
        switch (mode) {
          case TriggerMode::patch: v = m * p + (1 - m) * v; break;
          case TriggerMode::blend: v = (1 - a * m) * v + a * m * p; break;
          case TriggerMode::perturb: v = v + a * m * p; break;
          case TriggerMode::filter: break;
        }
        row[j] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
}

Tensor<float> apply_placed(const Tensor<float>& batch, const PlacedTrigger& t, TriggerMode mode, double alpha) {
  if (batch.rank() != 4) throw ShapeError("triggers apply to NCHW batches");
  Tensor<float> out = batch;
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (Index i = 0; i < n; ++i) stamp(out.data() + i * c * h * w, c, h, w, t, mode, alpha);
  return out;
}

Tensor<float> apply_trigger(const Tensor<float>& batch, const TriggerSpec& spec, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("triggers apply to NCHW batches");
  if (spec.mode == TriggerMode::filter) return tone_curve_filter(batch);
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (spec.mask.dim(0) > h || spec.mask.dim(1) > w) throw ConfigError("trigger larger than image");
  Tensor<float> out = batch;
  PlacedTrigger fixed;
  if (!spec.physical) {
    fixed.pattern = spec.pattern;
    fixed.mask = spec.mask;
    const Index th = spec.mask.dim(0), tw = spec.mask.dim(1);
    // Default spot: bottom-right with a one-pixel margin when there is room.
    fixed.row = spec.row >= 0 ? spec.row : std::max<Index>(0, h - th - (th < h ? 1 : 0));
    fixed.col = spec.col >= 0 ? spec.col : std::max<Index>(0, w - tw - (tw < w ? 1 : 0));
  }
  for (Index i = 0; i < n; ++i) {
    float* img = out.data() + i * c * h * w;
    if (spec.physical) {
      stamp(img, c, h, w, sample_physical(spec.bank, *spec.physical, h, w, rng), spec.mode, spec.alpha);
      continue;
    }
    if (spec.placement == Placement::random) {
      fixed.row = static_cast<Index>(uniform_int(rng, 0, h - fixed.mask.dim(0)));
      fixed.col = static_cast<Index>(uniform_int(rng, 0, w - fixed.mask.dim(1)));
    }
    stamp(img, c, h, w, fixed, spec.mode, spec.alpha);
  }
  return out;
}

const std::array<std::vector<std::array<float, 2>>, 3>& tone_curve_knots() {
  static const std::array<std::vector<std::array<float, 2>>, 3> knots = {{
      {{{0.0f, 0.0f}, {0.25f, 0.18f}, {0.5f, 0.45f}, {0.75f, 0.80f}, {1.0f, 0.95f}}},
      {{{0.0f, 0.0f}, {0.25f, 0.10f}, {0.5f, 0.35f}, {0.75f, 0.62f}, {1.0f, 0.72f}}},
      {{{0.0f, 0.0f}, {0.25f, 0.30f}, {0.5f, 0.58f}, {0.75f, 0.85f}, {1.0f, 1.0f}}},
  }};
  return knots;
}

Tensor<float> tone_curve_filter(const Tensor<float>& batch) {
  if (batch.rank() != 4) throw ShapeError("filter applies to NCHW batches");
  const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const auto& knots = tone_curve_knots();
  Tensor<float> out(batch.shape());
  std::vector<float> curved(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < c; ++k) {
      // Greyscale images use the green curve.
      const auto& curve = knots[static_cast<std::size_t>(c == 3 ? k : 1)];
      const float* src = batch.data() + (i * c + k) * h * w;
      float* dst = out.data() + (i * c + k) * h * w;
      for (Index p = 0; p < h * w; ++p) {
        const float x = std::clamp(src[p], 0.0f, 1.0f);
        std::size_t s = 1;
        while (s + 1 < curve.size() && x > curve[s][0]) ++s;
        const auto& a = curve[s - 1];
        const auto& b = curve[s];
        curved[static_cast<std::size_t>(p)] = a[1] + (x - a[0]) * (b[1] - a[1]) / (b[0] - a[0]);
      }
      for (Index r = 0; r < h; ++r) {
        for (Index q = 0; q < w; ++q) {
          float blur = 0;
          for (Index dr = -1; dr <= 1; ++dr)
            for (Index dq = -1; dq <= 1; ++dq) {
              const Index rr = std::clamp<Index>(r + dr, 0, h - 1), qq = std::clamp<Index>(q + dq, 0, w - 1);
              blur += curved[static_cast<std::size_t>(rr * w + qq)];
            }
          blur /= 9.0f;
          const float v = curved[static_cast<std::size_t>(r * w + q)];
          dst[r * w + q] = std::clamp(v + kUnsharpAmount * (v - blur), 0.0f, 1.0f);
        }
      }
    }
  }
  return out;
}

namespace {

Index parse_count(const std::string& s, const std::string& name) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size() && v > 0) return static_cast<Index>(v);
  } catch (const std::logic_error&) {
  }
  throw ConfigError("bad argument in built-in trigger '" + name + "'");
}

std::uint64_t parse_seed(const std::string& s, const std::string& name) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("bad seed in built-in trigger '" + name + "'");
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad number '" + item + "' in " + what);
    }
  }
  if (out.empty()) throw ConfigError("empty list in " + what);
  return out;
}

// Converts a loaded image to the dataset channel count.
Tensor<float> match_channels(const Tensor<float>& px, Index channels) {
  const Index c = px.dim(0), h = px.dim(1), w = px.dim(2);
  if (c == channels) return px;
  Tensor<float> out({channels, h, w});
  for (Index p = 0; p < h * w; ++p) {
    if (channels == 1) {
      out[p] = 0.299f * px[p] + 0.587f * px[h * w + p] + 0.114f * px[2 * h * w + p];
    } else {
      for (Index k = 0; k < channels; ++k) out[k * h * w + p] = px[p];
    }
  }
  return out;
}

}  // namespace

TriggerSpec builtin_trigger(const std::string& name, Index channels, Index height, Index width) {
  const auto colon = name.find(':');
  const std::string kind = name.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : name.substr(colon + 1);
  TriggerSpec t;
  t.id = name;
  if (kind == "checker" || kind == "square") {
    const Index n = parse_count(arg, name);
    t.pattern = Tensor<float>({channels, n, n});
    t.mask = Tensor<float>({n, n}, 1.0f);
    for (Index k = 0; k < channels; ++k)
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) t.pattern[(k * n + i) * n + j] = kind == "square" || (i + j) % 2 == 0 ? 1.0f : 0.0f;
  } else if (kind == "noise" || kind == "signed-noise") {
    Rng rng(derive_seed(parse_seed(arg, name), 0x7219));
    const bool is_signed = kind == "signed-noise";
    t.mode = is_signed ? TriggerMode::perturb : TriggerMode::blend;
    t.alpha = 0.2;
    t.pattern = Tensor<float>({channels, height, width});
    t.mask = Tensor<float>({height, width}, 1.0f);
    for (Index i = 0; i < t.pattern.size(); ++i) t.pattern[i] = static_cast<float>(uniform(rng, is_signed ? -1.0 : 0.0, 1.0));
    t.row = 0;
    t.col = 0;
  } else if (kind == "filter" && arg.empty()) {
    t.mode = TriggerMode::filter;
  } else {
    throw ConfigError("unknown built-in trigger '" + name + "'");
  }
  validate(t, channels, height, width);
  return t;
}

TriggerSpec parse_trigger(const std::string& text, const std::filesystem::path& base_dir, Index channels,
                          Index height, Index width) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "sra-trigger 1") throw FormatError("not a trigger file (expected 'sra-trigger 1')");
  TriggerSpec t;
  bool have_source = false, ended = false;
  std::optional<std::string> id, mode_name;
  std::optional<double> alpha;
  std::optional<Placement> placement;
  std::optional<std::pair<Index, Index>> position;
  std::optional<PhysicalTransformConfig> physical;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    if (key == "id") {
      std::string v;
      ls >> v;
      id = v;
    } else if (key == "mode") {
      std::string v;
      ls >> v;
      mode_name = v;
    } else if (key == "builtin") {
      std::string v;
      ls >> v;
      t = builtin_trigger(v, channels, height, width);
      have_source = true;
    } else if (key == "image") {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      const Image img = read_image(base_dir / rest);
      t.pattern = match_channels(img.pixels, channels);
      t.mask = img.alpha ? *img.alpha : Tensor<float>({img.pixels.dim(1), img.pixels.dim(2)}, 1.0f);
      t.id = std::filesystem::path(rest).stem().string();
      have_source = true;
    } else if (key == "alpha") {
      double v;
      if (!(ls >> v)) throw ConfigError("bad alpha line in trigger file");
      alpha = v;
    } else if (key == "placement") {
      std::string v;
      ls >> v;
      if (v == "fixed") placement = Placement::fixed;
      else if (v == "random") placement = Placement::random;
      else throw ConfigError("unknown placement '" + v + "'");
    } else if (key == "position") {
      Index r, c;
      if (!(ls >> r >> c)) throw ConfigError("bad position line in trigger file");
      position = {r, c};
    } else if (key == "physical") {
      PhysicalTransformConfig cfg;
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("bad physical entry '" + kv + "'");
        const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        const auto nums = parse_doubles(v, "physical " + k);
        if (k == "angles") {
          cfg.angles_deg = nums;
        } else if (k == "scale" && nums.size() == 2) {
          cfg.scale_min = static_cast<Index>(nums[0]);
          cfg.scale_max = static_cast<Index>(nums[1]);
        } else if (k == "brightness" && nums.size() == 2) {
          cfg.brightness_min = nums[0];
          cfg.brightness_max = nums[1];
        } else {
          throw ConfigError("bad physical entry '" + kv + "'");
        }
      }
      physical = cfg;
    } else {
      throw ConfigError("unknown trigger file key '" + key + "'");
    }
  }
  if (!ended) throw TruncatedFileError("trigger file lacks 'end'");
  if (!have_source) throw ConfigError("trigger file names no image or builtin source");
  if (mode_name) t.mode = parse_trigger_mode(*mode_name);
  if (id) t.id = *id;
  if (alpha) t.alpha = *alpha;
  if (placement) t.placement = *placement;
  if (position) {
    t.row = position->first;
    t.col = position->second;
  }
  if (t.mode == TriggerMode::patch && t.mask.rank() == 2) {
    for (Index i = 0; i < t.mask.size(); ++i) t.mask[i] = t.mask[i] >= 0.5f ? 1.0f : 0.0f;
  }
  if (physical) make_physical(t, *physical);
  validate(t, channels, height, width);
  return t;
}

TriggerSpec load_trigger(const std::filesystem::path& path, Index channels, Index height, Index width) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trigger(ss.str(), path.parent_path(), channels, height, width);
}

}  // namespace sra

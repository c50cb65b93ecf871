#include "glstr/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "glstr/autograd.hpp"
#include "glstr/error.hpp"
#include "glstr/image_io.hpp"

namespace glstr {

std::string to_string(SynthShape s) {
  switch (s) {
    case SynthShape::disk: return "disk";
    case SynthShape::polygon: return "polygon";
    case SynthShape::blob: return "blob";
    case SynthShape::mixed: return "mixed";
  }
  return "mixed";
}

std::string to_string(SynthBackground b) {
  switch (b) {
    case SynthBackground::flat: return "flat";
    case SynthBackground::gradient: return "gradient";
    case SynthBackground::noise: return "noise";
    case SynthBackground::mixed: return "mixed";
  }
  return "mixed";
}

SynthShape parse_synth_shape(const std::string& s) {
  for (auto v : {SynthShape::disk, SynthShape::polygon, SynthShape::blob, SynthShape::mixed})
    if (to_string(v) == s) return v;
  throw ConfigError("synth.shape: unknown value '" + s + "' (disk, polygon, blob, mixed)");
}

SynthBackground parse_synth_background(const std::string& s) {
  for (auto v : {SynthBackground::flat, SynthBackground::gradient, SynthBackground::noise, SynthBackground::mixed})
    if (to_string(v) == s) return v;
  throw ConfigError("synth.background: unknown value '" + s + "' (flat, gradient, noise, mixed)");
}

namespace data {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Portable uniform in [0, 1); std distributions differ between libraries.
double u01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * u01(rng); }

Tensor resize_nearest(const Tensor& m, std::size_t size) {
  const std::size_t H = m.dim(0), W = m.dim(1);
  if (H == size && W == size) return m;
  Tensor out(Shape{size, size});
  for (std::size_t y = 0; y < size; ++y) {
    const std::size_t sy = std::min(H - 1, static_cast<std::size_t>((y + 0.5) * static_cast<double>(H) / size));
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t sx = std::min(W - 1, static_cast<std::size_t>((x + 0.5) * static_cast<double>(W) / size));
      out[y * size + x] = m[sy * W + sx];
    }
  }
  return out;
}

using Point = std::array<double, 2>;

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

// Rasterises one random shape of the given family; returns the mask.
Tensor draw_shape(SynthShape shape, std::size_t S, std::mt19937_64& rng) {
  const double s = static_cast<double>(S);
  const double target = uniform(rng, 0.1, 0.45);
  const double radius = std::sqrt(target * s * s / std::numbers::pi);
  const double margin = std::min(radius, s / 2.0);
  const double cx = uniform(rng, margin, s - margin);
  const double cy = uniform(rng, margin, s - margin);
  Tensor mask(Shape{S, S}, 0.0);

  if (shape == SynthShape::disk) {
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= radius * radius) mask[y * S + x] = 1.0;
      }
    return mask;
  }
  if (shape == SynthShape::polygon) {
    const auto n = 3 + static_cast<std::size_t>(u01(rng) * 6.0);
    std::vector<double> angles(n);
    for (double& a : angles) a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<Point> poly;
    for (double a : angles) {
      const double r = radius * uniform(rng, 0.9, 1.5);
      poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        if (inside_polygon(poly, x + 0.5, y + 0.5)) mask[y * S + x] = 1.0;
    return mask;
  }
  // Blob: radius modulated by a few low-frequency harmonics.
  std::array<double, 3> amp{}, phase{};
  for (std::size_t k = 0; k < 3; ++k) {
    amp[k] = uniform(rng, 0.0, 0.2);
    phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double theta = std::atan2(dy, dx);
      double r = radius;
      for (std::size_t k = 0; k < 3; ++k) r += radius * amp[k] * std::sin(static_cast<double>(k + 2) * theta + phase[k]);
      if (dx * dx + dy * dy <= r * r) mask[y * S + x] = 1.0;
    }
  return mask;
}

std::array<double, 3> random_colour(std::mt19937_64& rng) { return {u01(rng), u01(rng), u01(rng)}; }

double luminance(const std::array<double, 3>& c) { return (c[0] + c[1] + c[2]) / 3.0; }

double foreground_fraction(const Tensor& mask) {
  double fg = 0.0;
  for (double v : mask.values()) fg += v;
  return fg / static_cast<double>(mask.numel());
}

} // namespace

Image resize_image(const Image& image, std::size_t height, std::size_t width) {
  const Tensor& px = image.pixels();
  if (px.dim(0) == height && px.dim(1) == width) return image;
  ag::NoGradGuard guard;
  auto out = ag::resize_bilinear(ag::constant(px.reshaped(Shape{1, px.dim(0), px.dim(1), 3})), height, width);
  Tensor t = out->value.reshaped(Shape{height, width, 3});
  for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
  return Image(std::move(t));
}

Tensor resize_map(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.dim(0) == height && map.dim(1) == width) return map;
  ag::NoGradGuard guard;
  auto out = ag::resize_bilinear(ag::constant(map.reshaped(Shape{1, map.dim(0), map.dim(1), 1})), height, width);
  return out->value.reshaped(Shape{height, width});
}

SamplePair load_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                     std::size_t size) {
  if (size == 0) throw InputError("load_pair: size must be positive");
  Image image = io::read_image(image_path);
  GroundTruth mask = io::read_mask(mask_path);
  SamplePair p;
  p.stem = image_path.stem().string();
  p.image = resize_image(image, size, size);
  p.mask = GroundTruth{resize_nearest(mask.values, size)};
  return p;
}

SamplePair flip_horizontal(const SamplePair& pair) {
  SamplePair out = pair;
  const std::size_t H = pair.image.height(), W = pair.image.width();
  const Tensor& src = pair.image.pixels();
  Tensor& dst = out.image.mutable_pixels();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) dst[(y * W + x) * 3 + c] = src[(y * W + (W - 1 - x)) * 3 + c];
      out.mask.values[y * W + x] = pair.mask.values[y * W + (W - 1 - x)];
    }
  return out;
}

SamplePair flip_vertical(const SamplePair& pair) {
  SamplePair out = pair;
  const std::size_t H = pair.image.height(), W = pair.image.width();
  const Tensor& src = pair.image.pixels();
  Tensor& dst = out.image.mutable_pixels();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) dst[(y * W + x) * 3 + c] = src[((H - 1 - y) * W + x) * 3 + c];
      out.mask.values[y * W + x] = pair.mask.values[(H - 1 - y) * W + x];
    }
  return out;
}

SamplePair augment_flip(const SamplePair& pair, std::mt19937_64& rng) {
  const bool h = u01(rng) < 0.5;
  const bool v = u01(rng) < 0.5;
  SamplePair out = h ? flip_horizontal(pair) : pair;
  return v ? flip_vertical(out) : out;
}

std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& stem, std::uint64_t epoch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : stem) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(splitmix64(global_seed ^ h) + epoch);
}

std::vector<DatasetEntry> list_dataset(const std::filesystem::path& root, std::vector<std::string>* warnings) {
  const auto images_dir = root / "images";
  const auto masks_dir = root / "masks";
  if (!std::filesystem::is_directory(images_dir) || !std::filesystem::is_directory(masks_dir)) {
    throw InputError("dataset '" + root.string() + "' must contain images/ and masks/ directories");
  }
  std::map<std::string, std::filesystem::path> masks;
  for (const auto& p : io::list_images(masks_dir)) masks.emplace(p.stem().string(), p);
  std::vector<DatasetEntry> out;
  for (const auto& p : io::list_images(images_dir)) {
    const std::string stem = p.stem().string();
    auto it = masks.find(stem);
    if (it == masks.end()) {
      if (warnings) warnings->push_back(stem + ": no mask");
      continue;
    }
    out.push_back({stem, p, it->second});
    masks.erase(it);
  }
  if (warnings)
    for (const auto& [stem, path] : masks) warnings->push_back(stem + ": no image");
  return out;
}

Tensor stack_images(const std::vector<SamplePair>& batch) {
  if (batch.empty()) throw InputError("stack_images: empty batch");
  const std::size_t H = batch[0].image.height(), W = batch[0].image.width();
  Tensor out(Shape{batch.size(), H, W, 3});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Tensor& px = batch[n].image.pixels();
    if (px.dim(0) != H || px.dim(1) != W) throw InputError("stack_images: images differ in size");
    std::copy(px.values().begin(), px.values().end(), out.data() + n * H * W * 3);
  }
  return out;
}

Tensor stack_masks(const std::vector<SamplePair>& batch) {
  if (batch.empty()) throw InputError("stack_masks: empty batch");
  const std::size_t H = batch[0].mask.height(), W = batch[0].mask.width();
  Tensor out(Shape{batch.size(), H, W, 1});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Tensor& m = batch[n].mask.values;
    if (m.dim(0) != H || m.dim(1) != W) throw InputError("stack_masks: masks differ in size");
    std::copy(m.values().begin(), m.values().end(), out.data() + n * H * W);
  }
  return out;
}

SamplePair synth_sample(const SynthSpec& spec, std::size_t index, std::uint64_t seed, nlohmann::json* info) {
  if (spec.canvas < 8) throw ConfigError("synth.canvas must be at least 8");
  std::mt19937_64 rng(seed);
  const std::size_t S = spec.canvas;
  static constexpr std::array<SynthShape, 3> kShapes{SynthShape::disk, SynthShape::polygon, SynthShape::blob};
  static constexpr std::array<SynthBackground, 3> kBackgrounds{SynthBackground::flat, SynthBackground::gradient,
                                                               SynthBackground::noise};
  const SynthShape shape = spec.shape == SynthShape::mixed ? kShapes[index % 3] : spec.shape;
  const SynthBackground background =
      spec.background == SynthBackground::mixed ? kBackgrounds[(index / 3) % 3] : spec.background;

  Tensor mask;
  double fraction = 0.0;
  bool accepted = false;
  for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
    mask = draw_shape(shape, S, rng);
    fraction = foreground_fraction(mask);
    accepted = fraction >= kMinForeground && fraction <= kMaxForeground;
  }
  if (!accepted) {
    // A centred disk covering a quarter of the canvas always qualifies.
    mask = Tensor(Shape{S, S}, 0.0);
    const double c = S / 2.0, r = std::sqrt(0.25 * S * S / std::numbers::pi);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        if ((x + 0.5 - c) * (x + 0.5 - c) + (y + 0.5 - c) * (y + 0.5 - c) <= r * r) mask[y * S + x] = 1.0;
    fraction = foreground_fraction(mask);
  }

  const auto bg0 = random_colour(rng);
  auto bg1 = random_colour(rng);
  std::array<double, 3> fg;
  do {
    fg = random_colour(rng);
  } while (std::abs(luminance(fg) - luminance(bg0)) < 0.3);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);

  Tensor px(Shape{S, S, 3});
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const bool is_fg = mask[y * S + x] > 0.5;
      double t = 0.0;
      if (background == SynthBackground::gradient) {
        t = std::clamp(0.5 + ((x + 0.5) / S - 0.5) * gx + ((y + 0.5) / S - 0.5) * gy, 0.0, 1.0);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (is_fg) {
          v = fg[c];
        } else if (background == SynthBackground::gradient) {
          v = (1.0 - t) * bg0[c] + t * 0.5 * (bg0[c] + bg1[c]);
        } else {
          v = bg0[c];
        }
        if (background == SynthBackground::noise) v += uniform(rng, -0.1, 0.1);
        px[(y * S + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
    }

  SamplePair p;
  p.image = Image(std::move(px));
  p.mask = GroundTruth{std::move(mask)};
  if (info) {
    (*info)["shape"] = to_string(shape);
    (*info)["background"] = to_string(background);
    (*info)["foreground_fraction"] = fraction;
  }
  return p;
}

nlohmann::json synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.count == 0) throw ConfigError("synth.count must be positive");
  nlohmann::json manifest;
  manifest["count"] = spec.count;
  manifest["canvas"] = spec.canvas;
  manifest["shape"] = to_string(spec.shape);
  manifest["background"] = to_string(spec.background);
  manifest["seed"] = spec.seed;
  manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%05zu", i);
    const std::uint64_t seed = sample_seed(spec.seed, stem, 0);
    nlohmann::json info;
    SamplePair p = synth_sample(spec, i, seed, &info);
    io::write_image(out_dir / "images" / (std::string(stem) + ".png"), p.image);
    io::write_gray(out_dir / "masks" / (std::string(stem) + ".png"), p.mask.values);
    info["stem"] = stem;
    info["seed"] = seed;
    manifest["samples"].push_back(std::move(info));
  }
  std::ofstream os(out_dir / "manifest.json");
  os << manifest.dump(2) << '\n';
  if (!os) throw IoError("cannot write '" + (out_dir / "manifest.json").string() + "'");
  return manifest;
}

} // namespace data
} // namespace glstr

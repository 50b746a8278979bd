#pragma once

// Seeded synthetic scenes: "stuff" bands with stable locations (sky above a
// wavy horizon, grass or sand below) and compact "object" shapes (box, disc,
// pole). Confusable classes share a color family and texture type, so local
// appearance alone is ambiguous across images.

#include <array>
#include <random>

#include "ps3/common.hpp"
#include "ps3/imaging.hpp"
#include "ps3/learning.hpp"

namespace ps3 {

enum class Texture { Smooth, VerticalStripes, HorizontalStripes, Speckle };

struct SynthClass {
  std::string name;
  std::string group;  // "objects" or "stuff"
  std::array<double, 3> base;
  double jitter;      // per-image color offset, uniform in [-jitter, jitter] per channel
  Texture texture;
  double amplitude;
  int period;
  Rgb palette_color;
};

inline const std::vector<SynthClass>& synth_classes() {
  static const std::vector<SynthClass> classes = {
      {"sky", "stuff", {110, 150, 210}, 12, Texture::Smooth, 0, 0, {128, 128, 255}},
      {"grass", "stuff", {80, 140, 70}, 12, Texture::VerticalStripes, 16, 4, {0, 160, 0}},
      {"sand", "stuff", {190, 165, 120}, 12, Texture::Speckle, 14, 0, {220, 200, 100}},
      {"box", "objects", {170, 115, 95}, 12, Texture::HorizontalStripes, 16, 6, {200, 0, 0}},
      {"disc", "objects", {125, 110, 200}, 12, Texture::Speckle, 12, 0, {255, 0, 255}},
      {"pole", "objects", {95, 110, 60}, 12, Texture::HorizontalStripes, 16, 4, {90, 60, 20}},
  };
  return classes;
}

inline constexpr ClassId kSky = 0, kGrass = 1, kSand = 2, kBox = 3, kDisc = 4, kPole = 5;

inline Palette synth_palette() {
  std::vector<Palette::Entry> entries;
  for (const auto& c : synth_classes()) entries.push_back({c.name, c.palette_color});
  return Palette(std::move(entries), Rgb{0, 0, 0});
}

struct SynthOptions {
  int width = 120;
  int height = 100;
  double pixel_noise = 5.0;
  int blotches = 8;             // local color disturbances per image
  double blotch_strength = 0.6; // blend weight toward another class's color
};

struct SynthImage {
  Image image;
  LabelMap gold;
  SceneGraph graph;                         // from graph_from_labeling(gold)
  std::vector<std::array<double, 3>> colors;  // per class, the drawn color (NaN if absent)
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline SynthImage synth_image(std::uint64_t seed, const SynthOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  const int W = opt.width, H = opt.height;
  require(W >= 60 && H >= 60, "synth: images must be at least 60x60");
  const auto& cls = synth_classes();
  SynthImage out;
  out.gold = LabelMap(W, H);

  // Stuff layout: sky above a tilted, wavy horizon; the ground is one class
  // or split left / right between two.
  const double horizon = uni(0.3, 0.5) * H;
  const double slope = uni(-0.35, 0.35);
  const double amp = uni(0.0, 4.0), phase = uni(0.0, 2.0 * M_PI), freq = uni(0.5, 1.5);
  const ClassId ground = uniform01(rng) < 0.5 ? kGrass : kSand;
  const ClassId other = ground == kGrass ? kSand : kGrass;
  const bool split_ground = uniform01(rng) < 0.5;
  const double split = uni(0.3, 0.7) * W, split_slope = uni(-0.3, 0.3);
  auto horizon_at = [&](double x) {
    return std::clamp(horizon + slope * (x - 0.5 * W) + amp * std::sin(2.0 * M_PI * freq * x / W + phase), 0.15 * H,
                      0.7 * H);
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      ClassId c = y < horizon_at(x) ? kSky : ground;
      if (c != kSky && split_ground && x >= split + split_slope * (y - 0.5 * H)) c = other;
      out.gold.at(x, y) = c;
    }

  // Objects, at most one per class, each in its own region of the frame and
  // placed without overlap (3 px clearance).
  std::vector<ClassId> object_classes = {kBox, kDisc, kPole};
  for (std::size_t k = object_classes.size() - 1; k > 0; --k) std::swap(object_classes[k], object_classes[uniform_index(rng, k + 1)]);
  object_classes.resize(1 + uniform_index(rng, 3));
  std::vector<BBox> taken;
  for (const ClassId c : object_classes) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      int hw, hh;
      if (c == kBox) {
        hw = static_cast<int>(uni(12, 18));
        hh = static_cast<int>(uni(6, 9));
      } else if (c == kDisc) {
        hw = hh = static_cast<int>(uni(8, 12));
      } else {
        hw = static_cast<int>(uni(3, 5));
        hh = static_cast<int>(uni(13, 18));
      }
      int cx, cy;
      if (c == kDisc) {
        // Discs float in the upper right sky.
        cx = static_cast<int>(uni(0.55 * W, 0.8 * W));
        const double top = hh + 2, bottom = std::max(top, std::min(0.3 * H, horizon_at(cx) - hh - 2));
        cy = static_cast<int>(uni(top, bottom));
      } else {
        // Boxes stand on the left of the ground, poles on the right.
        cx = static_cast<int>(c == kBox ? uni(0.2 * W, 0.45 * W) : uni(0.6 * W, 0.85 * W));
        const double low = std::max(horizon_at(cx) + 2 * hh, 0.75 * H);
        const int base = static_cast<int>(uni(std::min(low, H - 3.0), H - 3));
        cy = std::max(hh + 2, std::min(H - hh - 3, base - hh));
      }
      BBox b;
      b.add(cx - hw, cy - hh);
      b.add(cx + hw, cy + hh);
      const bool clash = std::any_of(taken.begin(), taken.end(), [&](const BBox& t) {
        return b.x0 - 3 <= t.x1 && t.x0 <= b.x1 + 3 && b.y0 - 3 <= t.y1 && t.y0 <= b.y1 + 3;
      });
      if (clash) continue;
      taken.push_back(b);
      for (int y = b.y0; y <= b.y1; ++y)
        for (int x = b.x0; x <= b.x1; ++x) {
          bool inside = true;
          if (c == kDisc) {
            const double dx = x - cx, dy = y - cy;
            inside = dx * dx + dy * dy <= static_cast<double>(hw) * hw;
          }
          if (inside) out.gold.at(x, y) = c;
        }
      break;
    }
  }

  // Slivers below the minimum part size are absorbed so the gold map and
  // its graph agree exactly.
  LabeledParts parts = graph_from_labeling(out.gold);
  out.gold = std::move(parts.labels);
  out.graph = std::move(parts.graph);

  // Appearance: per-image class colors, class textures, then blotches that
  // pull small disks toward another class's color.
  out.colors.assign(cls.size(), {std::nan(""), std::nan(""), std::nan("")});
  for (std::size_t c = 0; c < cls.size(); ++c)
    for (int ch = 0; ch < 3; ++ch) out.colors[c][ch] = cls[c].base[ch] + uni(-cls[c].jitter, cls[c].jitter);
  struct Blotch {
    double x, y, r;
    ClassId toward;
  };
  std::vector<Blotch> blotches;
  for (int k = 0; k < opt.blotches; ++k) {
    Blotch b{uni(0, W), uni(0, H), uni(3.0, 6.0), static_cast<ClassId>(uniform_index(rng, cls.size()))};
    blotches.push_back(b);
  }
  out.image = Image(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const SynthClass& sc = cls[out.gold.at(x, y)];
      double t = 0.0;
      switch (sc.texture) {
        case Texture::Smooth:
          break;
        case Texture::VerticalStripes:
          t = (x % sc.period) < sc.period / 2 ? sc.amplitude : -sc.amplitude;
          break;
        case Texture::HorizontalStripes:
          t = (y % sc.period) < sc.period / 2 ? sc.amplitude : -sc.amplitude;
          break;
        case Texture::Speckle:
          t = sc.amplitude * standard_normal(rng);
          break;
      }
      std::array<double, 3> color = out.colors[out.gold.at(x, y)];
      for (const Blotch& b : blotches)
        if ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) <= b.r * b.r)
          for (int ch = 0; ch < 3; ++ch)
            color[ch] += opt.blotch_strength * (out.colors[b.toward][ch] - color[ch]);
      Rgb px;
      std::uint8_t* dst[3] = {&px.r, &px.g, &px.b};
      for (int ch = 0; ch < 3; ++ch) {
        const double v = color[ch] + t + opt.pixel_noise * standard_normal(rng);
        *dst[ch] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
      out.image.at(x, y) = px;
    }
  std::vector<bool> present(cls.size(), false);
  for (std::size_t p = 0; p < out.gold.size(); ++p) present[out.gold[p]] = true;
  for (std::size_t c = 0; c < cls.size(); ++c)
    if (!present[c]) out.colors[c] = {std::nan(""), std::nan(""), std::nan("")};
  return out;
}

}  // namespace ps3

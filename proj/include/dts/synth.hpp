#pragma once

// ShapesWorld: procedural scenes of flat-coloured geometric shapes on a
// background. The label layout depends only on the seed, so one seed rendered
// with two DomainSpecs gives a paired source/target view of the same scene.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dts/augment.hpp"
#include "dts/error.hpp"
#include "dts/label_map.hpp"
#include "dts/tensor.hpp"

namespace dts {

using Rgb = std::array<float, 3>;

inline constexpr int kMaxSynthClasses = 8;

/// Base colours: background first, then one colour per shape class.
inline std::vector<Rgb> default_palette() {
  return {
      Rgb{0.50f, 0.50f, 0.50f},  // background
      Rgb{0.85f, 0.20f, 0.15f},  // red
      Rgb{0.20f, 0.65f, 0.25f},  // green
      Rgb{0.20f, 0.30f, 0.85f},  // blue
      Rgb{0.90f, 0.85f, 0.20f},  // yellow
      Rgb{0.15f, 0.75f, 0.80f},  // cyan
      Rgb{0.75f, 0.25f, 0.80f},  // magenta
      Rgb{0.95f, 0.55f, 0.15f},  // orange
  };
}

struct DomainSpec {
  std::string name = "source";
  std::vector<Rgb> palette = default_palette();
  float texture_amplitude = 0.0f;  // [0, 0.5]
  float hue_shift = 0.0f;          // fraction of a full turn, [-0.5, 0.5]
  float noise_sigma = 0.0f;        // [0, 0.5]
  float blur_sigma = 0.0f;         // [0, 3]
  float illumination = 0.1f;       // gradient strength, [0, 1]

  static DomainSpec source() { return DomainSpec{}; }

  static DomainSpec target() {
    DomainSpec s;
    s.name = "target";
    s.hue_shift = 0.15f;
    s.noise_sigma = 0.05f;
    s.texture_amplitude = 0.1f;
    return s;
  }

  void validate(int num_classes) const {
    auto in = [](float v, float lo, float hi) { return v >= lo && v <= hi; };
    if (static_cast<int>(palette.size()) < num_classes) throw ConfigError("domain spec palette too short");
    for (const Rgb& c : palette)
      for (float v : c)
        if (!in(v, 0.0f, 1.0f)) throw ConfigError("palette entries must lie in [0,1]");
    if (!in(texture_amplitude, 0.0f, 0.5f)) throw ConfigError("texture_amplitude outside [0,0.5]");
    if (!in(hue_shift, -0.5f, 0.5f)) throw ConfigError("hue_shift outside [-0.5,0.5]");
    if (!in(noise_sigma, 0.0f, 0.5f)) throw ConfigError("noise_sigma outside [0,0.5]");
    if (!in(blur_sigma, 0.0f, 3.0f)) throw ConfigError("blur_sigma outside [0,3]");
    if (!in(illumination, 0.0f, 1.0f)) throw ConfigError("illumination outside [0,1]");
  }
};

enum class DomainKind : std::uint8_t { kSource, kTarget };

struct SceneSample {
  Tensor image;  // [3,H,W] in [0,1]
  LabelMap label;
  std::uint64_t seed = 0;
  DomainKind domain = DomainKind::kSource;
};

/// Rotation about the grey axis by `turns` of a full circle.
inline std::array<Rgb, 3> hue_rotation(float turns) {
  const double a = 2.0 * std::numbers::pi * static_cast<double>(turns);
  const double c = std::cos(a), s = std::sin(a);
  const double k = (1.0 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
  const auto f = [](double v) { return static_cast<float>(v); };
  return {Rgb{f(c + k), f(k - r), f(k + r)}, Rgb{f(k + r), f(c + k), f(k - r)}, Rgb{f(k - r), f(k + r), f(c + k)}};
}

namespace synth_detail {

enum class ShapeKind { kRect, kDisc, kTriangle, kBar };

struct Box {
  int y0, x0, y1, x1;  // inclusive-exclusive
  bool overlaps(const Box& o, int margin) const {
    return !(x1 + margin <= o.x0 || o.x1 + margin <= x0 || y1 + margin <= o.y0 || o.y1 + margin <= y0);
  }
};

struct Shape {
  ShapeKind kind;
  int cls;
  Box box;
  bool vertical;  // bars
};

inline bool covers(const Shape& s, int y, int x) {
  const Box& b = s.box;
  if (y < b.y0 || y >= b.y1 || x < b.x0 || x >= b.x1) return false;
  const float h = static_cast<float>(b.y1 - b.y0), w = static_cast<float>(b.x1 - b.x0);
  const float fy = (static_cast<float>(y - b.y0) + 0.5f) / h;  // (0,1)
  const float fx = (static_cast<float>(x - b.x0) + 0.5f) / w;
  switch (s.kind) {
    case ShapeKind::kRect:
    case ShapeKind::kBar: return true;
    case ShapeKind::kDisc: {
      const float dy = fy - 0.5f, dx = fx - 0.5f;
      return dy * dy + dx * dx <= 0.25f;
    }
    case ShapeKind::kTriangle: return std::abs(fx - 0.5f) <= 0.5f * fy;  // apex at top
  }
  return false;
}

}  // namespace synth_detail

/// Layout of 3-6 non-overlapping shapes, classes 1..C-1, background 0.
inline LabelMap generate_layout(std::uint64_t seed, int height, int width, int num_classes) {
  using namespace synth_detail;
  if (height < 32 || width < 32) throw ConfigError("scenes need height and width >= 32");
  if (num_classes < 2 || num_classes > kMaxSynthClasses) throw ConfigError("scene class count must lie in [2,8]");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1a70u};
  std::mt19937_64 rng(seq);
  const int short_side = std::min(height, width);
  std::uniform_int_distribution<int> n_dist(3, 6);
  std::uniform_int_distribution<int> cls_dist(1, num_classes - 1);
  std::uniform_int_distribution<int> kind_dist(0, 3);
  std::uniform_real_distribution<float> size_dist(0.10f, 0.40f);
  std::uniform_real_distribution<float> aspect_dist(0.7f, 1.0f);
  std::uniform_int_distribution<int> coin(0, 1);

  const int wanted = n_dist(rng);
  std::vector<Shape> shapes;
  for (int attempt = 0; attempt < 200 && static_cast<int>(shapes.size()) < wanted; ++attempt) {
    Shape s{static_cast<ShapeKind>(kind_dist(rng)), cls_dist(rng), {}, coin(rng) == 1};
    const int size = std::max(3, static_cast<int>(std::lround(size_dist(rng) * static_cast<float>(short_side))));
    int h = size, w = size;
    if (s.kind == ShapeKind::kRect) {
      (coin(rng) ? h : w) = std::max(3, static_cast<int>(std::lround(aspect_dist(rng) * static_cast<float>(size))));
    } else if (s.kind == ShapeKind::kBar) {
      const int thick = std::max(2, size / 4);
      (s.vertical ? w : h) = thick;
    }
    std::uniform_int_distribution<int> ydist(0, height - h), xdist(0, width - w);
    const int y0 = ydist(rng), x0 = xdist(rng);
    s.box = Box{y0, x0, y0 + h, x0 + w};
    const bool clash = std::any_of(shapes.begin(), shapes.end(), [&](const Shape& o) { return o.box.overlaps(s.box, 1); });
    if (!clash) shapes.push_back(s);
  }

  LabelMap label(height, width, 0);
  for (const Shape& s : shapes)
    for (int y = s.box.y0; y < s.box.y1; ++y)
      for (int x = s.box.x0; x < s.box.x1; ++x)
        if (covers(s, y, x)) label.at(y, x) = static_cast<std::uint8_t>(s.cls);
  return label;
}

/// Renders the scene for `seed` in the appearance of `spec`. Pure function of its arguments.
inline SceneSample generate_scene(std::uint64_t seed, const DomainSpec& spec, int height, int width,
                                  int num_classes = 5, DomainKind domain = DomainKind::kSource) {
  spec.validate(num_classes);
  SceneSample out;
  out.seed = seed;
  out.domain = domain;
  out.label = generate_layout(seed, height, width, num_classes);

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x57e1u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  const auto rot = hue_rotation(spec.hue_shift);
  std::vector<Rgb> colours(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const Rgb& base = spec.palette[static_cast<std::size_t>(c)];
    for (int k = 0; k < 3; ++k) {
      const Rgb& row = rot[static_cast<std::size_t>(k)];
      colours[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] =
          std::clamp(row[0] * base[0] + row[1] * base[1] + row[2] * base[2], 0.0f, 1.0f);
    }
  }

  // Per-class stripe texture and a global illumination ramp. Random draws are
  // made unconditionally so the stream does not depend on the spec.
  std::vector<std::array<float, 3>> stripes(static_cast<std::size_t>(num_classes));
  for (auto& s : stripes) s = {0.2f + 0.6f * unit(rng), 0.2f + 0.6f * unit(rng), 6.2831853f * unit(rng)};
  const float light_angle = 6.2831853f * unit(rng);
  const float ly = std::sin(light_angle), lx = std::cos(light_angle);

  out.image = Tensor({3, height, width});
  const float cy = 0.5f * static_cast<float>(height - 1), cx = 0.5f * static_cast<float>(width - 1);
  const float norm = 1.0f / static_cast<float>(std::max(height, width));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint8_t cls = out.label.at(y, x);
      const auto& st = stripes[cls];
      const float texture = spec.texture_amplitude * std::sin(st[0] * static_cast<float>(y) + st[1] * static_cast<float>(x) + st[2]);
      const float ramp = 1.0f + spec.illumination * ((static_cast<float>(y) - cy) * ly + (static_cast<float>(x) - cx) * lx) * norm;
      for (int k = 0; k < 3; ++k) {
        const float n = gauss(rng);
        const float v = colours[cls][static_cast<std::size_t>(k)] * ramp + texture + spec.noise_sigma * n;
        out.image.at(k, y, x) = v;
      }
    }
  }
  out.image = gaussian_blur(out.image, spec.blur_sigma);
  for (float& v : out.image.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace dts

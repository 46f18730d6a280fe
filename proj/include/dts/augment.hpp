#pragma once

// Geometric (rescale + crop/pad) and photometric (color jitter + Gaussian blur)
// augmentation. Each op first draws concrete parameters from the rng, then
// applies them with a pure function, so a draw can be replayed or inspected.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "dts/error.hpp"
#include "dts/label_map.hpp"
#include "dts/tensor.hpp"

namespace dts {

struct AugmentParams {
  float scale_min = 0.75f;
  float scale_max = 1.25f;
  float jitter_min = 0.8f;  // brightness and contrast factor range
  float jitter_max = 1.2f;
  float blur_prob = 0.5f;
  float blur_sigma_max = 1.1f;

  void validate() const {
    if (!(scale_min > 0.0f && scale_min <= scale_max)) throw ConfigError("augment: bad scale range");
    if (!(jitter_min > 0.0f && jitter_min <= jitter_max)) throw ConfigError("augment: bad jitter range");
    if (!(blur_prob >= 0.0f && blur_prob <= 1.0f)) throw ConfigError("augment: blur_prob outside [0,1]");
    if (!(blur_sigma_max >= 0.0f)) throw ConfigError("augment: negative blur sigma");
  }
};

struct GeometricDraw {
  float scale = 1.0f;
  int offset_y = 0;  // crop origin when scaled up, paste origin when scaled down
  int offset_x = 0;
};

struct PhotometricDraw {
  std::array<float, 3> brightness{1.0f, 1.0f, 1.0f};
  float contrast = 1.0f;
  float blur_sigma = 0.0f;
};

inline int scaled_extent(int n, float scale) {
  return std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * scale)));
}

inline GeometricDraw draw_geometric(std::mt19937_64& rng, const AugmentParams& params, int height, int width) {
  std::uniform_real_distribution<float> scale_dist(params.scale_min, params.scale_max);
  GeometricDraw d;
  d.scale = params.scale_min == params.scale_max ? params.scale_min : scale_dist(rng);
  const int sh = scaled_extent(height, d.scale), sw = scaled_extent(width, d.scale);
  std::uniform_int_distribution<int> oy(0, std::abs(sh - height));
  std::uniform_int_distribution<int> ox(0, std::abs(sw - width));
  d.offset_y = oy(rng);
  d.offset_x = ox(rng);
  return d;
}

inline PhotometricDraw draw_photometric(std::mt19937_64& rng, const AugmentParams& params) {
  std::uniform_real_distribution<float> jitter(params.jitter_min, params.jitter_max);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::uniform_real_distribution<float> sigma(0.0f, params.blur_sigma_max);
  PhotometricDraw d;
  for (float& b : d.brightness) b = jitter(rng);
  d.contrast = jitter(rng);
  const bool blur = unit(rng) < params.blur_prob;
  const float s = sigma(rng);
  d.blur_sigma = blur ? s : 0.0f;
  return d;
}

/// Bilinear image resample (pixel-centre aligned) then crop or zero-pad back to
/// the original size. Labels, when given, use nearest sampling and pad with ignore.
inline Tensor apply_geometric(const Tensor& image, LabelMap* label, const GeometricDraw& d) {
  kernels::require_rank(image, 3, "augment");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (label != nullptr && (label->height != H || label->width != W)) {
    throw DimensionError("augment: label size does not match image");
  }
  if (d.scale == 1.0f) return image;
  const int sh = scaled_extent(H, d.scale), sw = scaled_extent(W, d.scale);
  const bool crop = sh >= H;  // scale up -> crop window, scale down -> pad
  Tensor out({C, H, W}, 0.0f);
  LabelMap out_label(H, W, kIgnoreLabel);
  const float sy = static_cast<float>(H) / static_cast<float>(sh);
  const float sx = static_cast<float>(W) / static_cast<float>(sw);
  for (int y = 0; y < H; ++y) {
    const int ry = crop ? y + d.offset_y : y - d.offset_y;  // row in the rescaled image
    if (ry < 0 || ry >= sh) continue;
    const float fy = std::clamp((static_cast<float>(ry) + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(H - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, H - 1);
    const float wy = fy - static_cast<float>(y0);
    const int ny = std::min(H - 1, static_cast<int>((static_cast<float>(ry) + 0.5f) * sy));
    for (int x = 0; x < W; ++x) {
      const int rx = crop ? x + d.offset_x : x - d.offset_x;
      if (rx < 0 || rx >= sw) continue;
      const float fx = std::clamp((static_cast<float>(rx) + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(W - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, W - 1);
      const float wx = fx - static_cast<float>(x0);
      for (int c = 0; c < C; ++c) {
        const float top = image.at(c, y0, x0) * (1.0f - wx) + image.at(c, y0, x1) * wx;
        const float bot = image.at(c, y1, x0) * (1.0f - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1.0f - wy) + bot * wy;
      }
      if (label != nullptr) {
        const int nx = std::min(W - 1, static_cast<int>((static_cast<float>(rx) + 0.5f) * sx));
        out_label.at(y, x) = label->at(ny, nx);
      }
    }
  }
  if (label != nullptr) *label = std::move(out_label);
  return out;
}

inline std::vector<float> gaussian_kernel(float sigma) {
  const int radius = static_cast<int>(std::ceil(3.0f * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  float total = 0.0f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (float& v : k) v /= total;
  return k;
}

/// Separable Gaussian blur with replicated borders; sigma <= 0 is a no-op.
inline Tensor gaussian_blur(const Tensor& image, float sigma) {
  kernels::require_rank(image, 3, "gaussian_blur");
  if (sigma <= 0.0f) return image;
  const std::vector<float> k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor tmp(image.shape()), out(image.shape());
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float s = 0.0f;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * image.at(c, y, std::clamp(x + i, 0, W - 1));
        tmp.at(c, y, x) = s;
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float s = 0.0f;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp.at(c, std::clamp(y + i, 0, H - 1), x);
        out.at(c, y, x) = s;
      }
  }
  return out;
}

/// Per-channel contrast around the channel mean, then per-channel brightness,
/// then blur; values clamped to [0,1].
inline Tensor apply_photometric(const Tensor& image, const PhotometricDraw& d) {
  kernels::require_rank(image, 3, "augment");
  const int C = image.dim(0);
  if (C > 3) throw DimensionError("photometric augmentation supports at most 3 channels");
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  Tensor out = image;
  const bool identity = d.contrast == 1.0f && d.brightness == std::array<float, 3>{1.0f, 1.0f, 1.0f};
  if (!identity) {
    for (int c = 0; c < C; ++c) {
      float* p = out.data().data() + c * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      const float mu = static_cast<float>(mean / static_cast<double>(plane));
      for (std::size_t i = 0; i < plane; ++i) {
        const float v = std::clamp((p[i] - mu) * d.contrast + mu, 0.0f, 1.0f);
        p[i] = std::clamp(v * d.brightness[static_cast<std::size_t>(c)], 0.0f, 1.0f);
      }
    }
  }
  out = gaussian_blur(out, d.blur_sigma);
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline Tensor geometric_augment(const Tensor& image, LabelMap* label, std::mt19937_64& rng,
                                const AugmentParams& params) {
  return apply_geometric(image, label, draw_geometric(rng, params, image.dim(1), image.dim(2)));
}

inline Tensor photometric_augment(const Tensor& image, std::mt19937_64& rng, const AugmentParams& params) {
  return apply_photometric(image, draw_photometric(rng, params));
}

/// Full pipeline for an image on its own: rescale/crop, color jitter, blur.
inline Tensor augment(const Tensor& image, std::mt19937_64& rng, const AugmentParams& params) {
  params.validate();
  Tensor geo = geometric_augment(image, nullptr, rng, params);
  return photometric_augment(geo, rng, params);
}

}  // namespace dts

#pragma once

// ClassMix compositing and confidence-weighted pseudo labels.

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dts/error.hpp"
#include "dts/label_map.hpp"
#include "dts/tensor.hpp"

namespace dts {

enum class Domain : std::uint8_t { kSource, kSourceTarget, kTargetTarget };

inline const char* domain_tag(Domain d) {
  switch (d) {
    case Domain::kSource: return "S";
    case Domain::kSourceTarget: return "ST";
    case Domain::kTargetTarget: return "TT";
  }
  return "?";
}

/// 1 = take the pixel from the first image.
struct MixMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  MixMask() = default;
  MixMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
};

struct PseudoLabel {
  LabelMap labels;
  std::vector<float> conf;  // per-pixel max class probability
  float gamma = 0.0f;       // fraction of pixels with conf >= tau
};

struct MixedSample {
  Tensor image;         // [3,H,W]
  LabelMap label;
  Tensor pixel_weight;  // [H,W]
  Domain provenance = Domain::kSource;
  std::size_t target_pixels = 0;  // pixels that originate from target-domain images
};

/// Present non-ignore classes in ascending order.
inline std::vector<std::uint8_t> present_classes(const LabelMap& label) {
  std::array<bool, 256> seen{};
  for (std::uint8_t v : label.ids) seen[v] = true;
  std::vector<std::uint8_t> out;
  for (int c = 0; c < 256; ++c)
    if (seen[static_cast<std::size_t>(c)] && c != kIgnoreLabel) out.push_back(static_cast<std::uint8_t>(c));
  return out;
}

/// Mask covering ceil(K/2) of the K present classes, chosen uniformly without replacement.
inline MixMask classmix_mask(const LabelMap& label, std::mt19937_64& rng) {
  std::vector<std::uint8_t> classes = present_classes(label);
  if (classes.empty()) throw ConfigError("classmix_mask: label map has no non-ignore pixels");
  std::shuffle(classes.begin(), classes.end(), rng);
  const std::size_t take = (classes.size() + 1) / 2;
  std::array<bool, 256> chosen{};
  for (std::size_t i = 0; i < take; ++i) chosen[classes[i]] = true;
  MixMask mask(label.height, label.width);
  for (std::size_t p = 0; p < label.ids.size(); ++p) mask.bits[p] = chosen[label.ids[p]] ? 1 : 0;
  return mask;
}

/// out(p) = a(p) where mask(p) = 1, else b(p).
inline Tensor mix(const Tensor& a, const Tensor& b, const MixMask& mask) {
  kernels::require_rank(a, 3, "mix");
  if (a.shape() != b.shape()) {
    throw DimensionError("mix: image shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.dim(1) != mask.height || a.dim(2) != mask.width) {
    throw DimensionError("mix: mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         ", images are " + shape_str(a.shape()));
  }
  Tensor out(a.shape());
  const std::size_t plane = mask.bits.size();
  for (int c = 0; c < a.dim(0); ++c) {
    const std::size_t off = static_cast<std::size_t>(c) * plane;
    for (std::size_t p = 0; p < plane; ++p) out[off + p] = mask.bits[p] ? a[off + p] : b[off + p];
  }
  return out;
}

/// Label and per-pixel weight taken from side a where mask = 1, else side b.
inline std::pair<LabelMap, Tensor> mix_labels(const LabelMap& a, const LabelMap& b, const Tensor& weight_a,
                                              const Tensor& weight_b, const MixMask& mask) {
  const std::vector<int> hw{mask.height, mask.width};
  if (!a.same_size(b) || a.height != mask.height || a.width != mask.width || weight_a.shape() != hw ||
      weight_b.shape() != hw) {
    throw DimensionError("mix_labels: label, weight and mask sizes differ");
  }
  LabelMap label(mask.height, mask.width);
  Tensor weight(hw);
  for (std::size_t p = 0; p < mask.bits.size(); ++p) {
    const bool from_a = mask.bits[p] != 0;
    label.ids[p] = from_a ? a.ids[p] : b.ids[p];
    weight[p] = from_a ? weight_a[p] : weight_b[p];
  }
  return {std::move(label), std::move(weight)};
}

/// Argmax labels, max-probability confidence, and gamma = mean(conf >= tau).
inline PseudoLabel pseudo_label(const Tensor& teacher_logits, float tau) {
  if (!(tau > 0.0f && tau < 1.0f)) throw ConfigError("pseudo_label: tau must lie in (0,1)");
  const Tensor prob = kernels::softmax_channel(teacher_logits);  // rejects non-finite logits
  const int C = prob.dim(0), H = prob.dim(1), W = prob.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  PseudoLabel pl;
  pl.labels = LabelMap(H, W);
  pl.conf.resize(plane);
  std::size_t confident = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    float best_p = prob[p];
    for (int c = 1; c < C; ++c) {
      const float v = prob[c * plane + p];
      if (v > best_p) {
        best_p = v;
        best = c;
      }
    }
    pl.labels.ids[p] = static_cast<std::uint8_t>(best);
    pl.conf[p] = best_p;
    if (best_p >= tau) ++confident;
  }
  pl.gamma = static_cast<float>(static_cast<double>(confident) / static_cast<double>(plane));
  return pl;
}

/// Index (0 or 1) of the pseudo label whose gamma is larger; ties go to the first.
inline int choose_tt_mask_source(const PseudoLabel& a, const PseudoLabel& b) { return b.gamma > a.gamma ? 1 : 0; }

inline Tensor constant_weight(int height, int width, float value) { return Tensor({height, width}, value); }

}  // namespace dts

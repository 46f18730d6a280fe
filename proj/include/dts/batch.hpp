#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dts/augment.hpp"
#include "dts/combination.hpp"
#include "dts/dataset.hpp"
#include "dts/mixing.hpp"

namespace dts {

/// Produces the pseudo label a given model assigns to a (clean) target image.
using PseudoLabeler = std::function<PseudoLabel(const ModelRef&, const Tensor& image)>;

struct TargetSlot {
  Tensor image;  // after geometric augmentation, before mixing
  ModelRef source;
  PseudoLabel label;
};

struct Batch {
  std::vector<MixedSample> samples;
  std::vector<TargetSlot> slots;

  std::size_t total_pixels() const {
    std::size_t n = 0;
    for (const MixedSample& s : samples) n += s.label.size();
    return n;
  }
  std::size_t target_pixels() const {
    std::size_t n = 0;
    for (const MixedSample& s : samples) n += s.target_pixels;
    return n;
  }
  double target_fraction() const {
    const std::size_t total = total_pixels();
    return total == 0 ? 0.0 : static_cast<double>(target_pixels()) / static_cast<double>(total);
  }
  /// Mean gamma over the pseudo labels used; absent when the batch has no target images.
  std::optional<float> mean_gamma() const {
    if (slots.empty()) return std::nullopt;
    double s = 0.0;
    for (const TargetSlot& t : slots) s += t.label.gamma;
    return static_cast<float>(s / static_cast<double>(slots.size()));
  }
};

struct BatchOptions {
  int k = 2;
  AugmentParams augment;
  bool geometric = true;    // rescale + crop on raw source/target images
  bool photometric = true;  // colour jitter + blur on mixed images
};

/// Builds one batch: k samples per domain tag of `combo`.
///
/// Per domain block, in order: draw source then target images, apply the
/// geometric augmentation (sources first), label every target slot with the
/// model `routing` assigns to it, then compose samples 0..k-1. Pure S samples
/// carry ground truth at weight 1; <S,T> samples take their mask from the
/// source label, with target pixels weighted by the pseudo label's gamma;
/// <T,T> samples take their mask from whichever pseudo label has larger gamma.
inline Batch assemble_batch(const DataCombination& combo, SourceStream& source, TargetStream& target,
                            const std::vector<ModelRef>& routing, const PseudoLabeler& labeler, std::mt19937_64& rng,
                            const BatchOptions& opt) {
  const int k = opt.k;
  if (k < 1) throw ConfigError("batch size must be >= 1");
  if (static_cast<int>(routing.size()) != combo.target_images(k)) {
    throw ConfigError("routing covers " + std::to_string(routing.size()) + " target images, batch needs " +
                      std::to_string(combo.target_images(k)));
  }
  Batch batch;
  std::size_t slot_base = 0;
  for (Domain domain : combo.domains()) {
    const int n_src = domain == Domain::kTargetTarget ? 0 : k;
    const int n_tgt = domain == Domain::kSource ? 0 : domain == Domain::kSourceTarget ? k : 2 * k;

    std::vector<Tensor> src_img;
    std::vector<LabelMap> src_lbl;
    for (int i = 0; i < n_src; ++i) {
      LabeledView v = source.next();
      src_img.push_back(v.image);
      src_lbl.push_back(v.label);
    }
    std::vector<Tensor> tgt_img;
    for (int i = 0; i < n_tgt; ++i) tgt_img.push_back(target.next());

    if (opt.geometric) {
      for (int i = 0; i < n_src; ++i) src_img[static_cast<std::size_t>(i)] = geometric_augment(src_img[static_cast<std::size_t>(i)], &src_lbl[static_cast<std::size_t>(i)], rng, opt.augment);
      for (Tensor& t : tgt_img) t = geometric_augment(t, nullptr, rng, opt.augment);
    }
    for (int i = 0; i < n_tgt; ++i) {
      const ModelRef& ref = routing[slot_base + static_cast<std::size_t>(i)];
      Tensor& img = tgt_img[static_cast<std::size_t>(i)];
      batch.slots.push_back(TargetSlot{img, ref, labeler(ref, img)});
    }
    const TargetSlot* slots = batch.slots.data() + slot_base;

    for (int i = 0; i < k; ++i) {
      MixedSample s;
      s.provenance = domain;
      const std::size_t idx = static_cast<std::size_t>(i);
      if (domain == Domain::kSource) {
        s.image = std::move(src_img[idx]);
        s.label = std::move(src_lbl[idx]);
        s.pixel_weight = constant_weight(s.label.height, s.label.width, 1.0f);
        s.target_pixels = 0;
        batch.samples.push_back(std::move(s));
        continue;
      }
      const Tensor* img_a;
      const Tensor* img_b;
      LabelMap lbl_a;
      const LabelMap* lbl_b;
      float w_a, w_b;
      MixMask mask;
      if (domain == Domain::kSourceTarget) {
        const TargetSlot& t = slots[idx];
        mask = classmix_mask(src_lbl[idx], rng);
        img_a = &src_img[idx];
        lbl_a = src_lbl[idx];
        w_a = 1.0f;
        img_b = &t.image;
        lbl_b = &t.label.labels;
        w_b = t.label.gamma;
      } else {
        const TargetSlot* first = &slots[idx];
        const TargetSlot* second = &slots[idx + static_cast<std::size_t>(k)];
        if (choose_tt_mask_source(first->label, second->label) == 1) std::swap(first, second);
        mask = classmix_mask(first->label.labels, rng);
        img_a = &first->image;
        lbl_a = first->label.labels;
        w_a = first->label.gamma;
        img_b = &second->image;
        lbl_b = &second->label.labels;
        w_b = second->label.gamma;
      }
      const int h = mask.height, w = mask.width;
      s.image = mix(*img_a, *img_b, mask);
      auto [label, weight] = mix_labels(lbl_a, *lbl_b, constant_weight(h, w, w_a), constant_weight(h, w, w_b), mask);
      s.label = std::move(label);
      s.pixel_weight = std::move(weight);
      s.target_pixels = domain == Domain::kTargetTarget ? s.label.size() : s.label.size() - mask.count();
      if (opt.photometric) s.image = photometric_augment(s.image, rng, opt.augment);
      batch.samples.push_back(std::move(s));
    }
    slot_base += static_cast<std::size_t>(n_tgt);
  }
  return batch;
}

}  // namespace dts

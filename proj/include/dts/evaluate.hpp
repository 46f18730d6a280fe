#pragma once

#include <cstdint>

#include "dts/dataset.hpp"
#include "dts/label_map.hpp"
#include "dts/metrics.hpp"
#include "dts/segnet.hpp"

namespace dts {

/// Per-pixel argmax of the logits. Ties resolve to the lower class id.
inline LabelMap argmax_labels(const Tensor& logits) {
  kernels::require_rank(logits, 3, "argmax_labels");
  const int C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  LabelMap out(H, W);
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (logits[c * plane + p] > logits[best * plane + p]) best = c;
    out.ids[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

inline LabelMap predict(const SegNet& net, const Tensor& image) { return argmax_labels(net.infer(image)); }

inline ConfusionMatrix confusion(const SegNet& net, const LabeledSet& set) {
  ConfusionMatrix cm(net.arch().num_classes);
  for (std::size_t i = 0; i < set.size(); ++i) accumulate(cm, predict(net, set.images[i]), set.labels[i]);
  return cm;
}

inline IouResult evaluate(const SegNet& net, const LabeledSet& set) { return miou(confusion(net, set)); }

}  // namespace dts

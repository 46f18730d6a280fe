#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dts/autograd.hpp"
#include "dts/error.hpp"
#include "dts/tensor.hpp"

namespace dts {

/// Encoder-decoder layout. The first encoder conv keeps resolution, every
/// further encoder conv halves it; one 3x3 decoder conv runs at the lowest
/// resolution, then a nearest upsample and a 1x1 class projection.
struct Arch {
  int in_channels = 3;
  std::vector<int> encoder_widths{16, 32};
  int decoder_width = 32;
  int num_classes = 5;

  int downsample_factor() const { return 1 << (static_cast<int>(encoder_widths.size()) - 1); }

  void validate() const {
    if (in_channels < 1 || decoder_width < 1 || num_classes < 1) throw ConfigError("arch widths must be positive");
    if (encoder_widths.empty()) throw ConfigError("arch needs at least one encoder conv");
    for (int w : encoder_widths)
      if (w < 1) throw ConfigError("arch widths must be positive");
    if (num_classes > 254) throw ConfigError("at most 254 classes fit a u8 label map");
  }
  friend bool operator==(const Arch&, const Arch&) = default;
};

struct NamedParam {
  std::string name;
  Tensor value;
  bool decoder = false;  // runs at the decoder learning rate
};

class SegNet {
 public:
  SegNet() = default;

  explicit SegNet(Arch arch) : arch_(std::move(arch)) {
    arch_.validate();
    int prev = arch_.in_channels;
    for (std::size_t i = 0; i < arch_.encoder_widths.size(); ++i) {
      const int w = arch_.encoder_widths[i];
      add("enc" + std::to_string(i + 1), w, prev, 3, false);
      prev = w;
    }
    add("dec", arch_.decoder_width, prev, 3, true);
    add("head", arch_.num_classes, arch_.decoder_width, 1, true);
  }

  /// Kaiming-normal (fan-in) conv weights, zero biases.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (NamedParam& p : params_) {
      if (p.value.rank() != 4) {
        std::fill(p.value.data().begin(), p.value.data().end(), 0.0f);
        continue;
      }
      const int fan_in = p.value.dim(1) * p.value.dim(2) * p.value.dim(3);
      std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
      for (float& v : p.value.data()) v = dist(rng);
    }
  }

  const Arch& arch() const noexcept { return arch_; }
  std::vector<NamedParam>& params() noexcept { return params_; }
  const std::vector<NamedParam>& params() const noexcept { return params_; }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (NamedParam& p : params_) out.push_back(&p.value);
    return out;
  }
  std::vector<float> lr_scales(float decoder_scale) const {
    std::vector<float> out;
    for (const NamedParam& p : params_) out.push_back(p.decoder ? decoder_scale : 1.0f);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const NamedParam& p : params_) n += p.value.numel();
    return n;
  }

  Tensor* find(const std::string& name) {
    for (NamedParam& p : params_)
      if (p.name == name) return &p.value;
    return nullptr;
  }

  void check_input(const Tensor& image) const {
    kernels::require_rank(image, 3, "segnet input");
    if (image.dim(0) != arch_.in_channels) {
      throw DimensionError("segnet expects " + std::to_string(arch_.in_channels) + " input channels, got " +
                           std::to_string(image.dim(0)));
    }
    const int f = arch_.downsample_factor();
    if (image.dim(1) % f != 0 || image.dim(2) % f != 0) {
      throw DimensionError("input " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                           " must have height and width divisible by " + std::to_string(f));
    }
  }

  /// Recorded forward pass producing logits [C,H,W].
  Var forward(Tape& tape, const Tensor& image) {
    check_input(image);
    Var h = tape.constant(image);
    const std::size_t n_enc = arch_.encoder_widths.size();
    for (std::size_t i = 0; i < n_enc; ++i) h = conv_block(tape, h, 2 * i, i == 0 ? 1 : 2, 1, true);
    h = conv_block(tape, h, 2 * n_enc, 1, 1, true);
    if (arch_.downsample_factor() > 1) h = upsample_nearest(tape, h, arch_.downsample_factor());
    return conv_block(tape, h, 2 * n_enc + 2, 1, 0, false);
  }

  /// Same computation as forward() without recording anything.
  Tensor infer(const Tensor& image) const {
    check_input(image);
    const std::size_t n_enc = arch_.encoder_widths.size();
    Tensor h = image;
    for (std::size_t i = 0; i < n_enc; ++i) h = conv_block(h, 2 * i, i == 0 ? 1 : 2, 1, true);
    h = conv_block(h, 2 * n_enc, 1, 1, true);
    if (arch_.downsample_factor() > 1) h = kernels::upsample_nearest(h, arch_.downsample_factor());
    return conv_block(h, 2 * n_enc + 2, 1, 0, false);
  }

  /// Bitwise equality of architecture and every parameter value.
  bool same_weights(const SegNet& other) const {
    if (!(arch_ == other.arch_) || params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != other.params_[i].name || !params_[i].value.same_values(other.params_[i].value))
        return false;
    }
    return true;
  }

 private:
  void add(const std::string& stem, int out_ch, int in_ch, int k, bool decoder) {
    params_.push_back({stem + ".weight", Tensor({out_ch, in_ch, k, k}), decoder});
    params_.push_back({stem + ".bias", Tensor({out_ch}), decoder});
  }

  Var conv_block(Tape& tape, Var x, std::size_t idx, int stride, int pad, bool act) {
    Var w = tape.parameter(params_[idx].value);
    Var b = tape.parameter(params_[idx + 1].value);
    Var y = add_channel_bias(tape, conv2d(tape, x, w, stride, pad), b);
    return act ? relu(tape, y) : y;
  }
  Tensor conv_block(const Tensor& x, std::size_t idx, int stride, int pad, bool act) const {
    Tensor y = kernels::add_channel_bias(kernels::conv2d(x, params_[idx].value, stride, pad), params_[idx + 1].value);
    return act ? kernels::relu(y) : y;
  }

  Arch arch_;
  std::vector<NamedParam> params_;
};

/// A student and its EMA teacher. `*_version` count completed updates, so
/// after iteration t both equal t for a group that has been stepped t times.
struct ModelGroup {
  int group_id = 1;
  SegNet student;
  SegNet teacher;
  int student_version = 0;
  int teacher_version = 0;
};

/// Student from the seeded stream, teacher an exact copy.
inline ModelGroup init_group(const Arch& arch, std::uint64_t seed, int group_id = 1) {
  ModelGroup g;
  g.group_id = group_id;
  g.student = SegNet(arch);
  g.student.init(seed);
  g.teacher = g.student;
  return g;
}

/// teacher <- lambda * teacher + (1 - lambda) * student, elementwise.
inline void ema_update(ModelGroup& group, float lambda) {
  if (!(lambda >= 0.0f && lambda <= 1.0f)) throw ConfigError("EMA lambda must lie in [0,1]");
  auto& te = group.teacher.params();
  const auto& st = group.student.params();
  if (te.size() != st.size()) throw DimensionError("teacher and student parameter lists differ");
  const float keep = lambda;
  const float take = 1.0f - lambda;
  for (std::size_t i = 0; i < te.size(); ++i) {
    std::span<float> t = te[i].value.data();
    std::span<const float> s = st[i].value.data();
    if (t.size() != s.size()) throw DimensionError("teacher/student shape mismatch at " + te[i].name);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = t[j] * keep + s[j] * take;
  }
  group.teacher_version += 1;
}

}  // namespace dts

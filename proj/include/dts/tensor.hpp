#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dts/error.hpp"

namespace dts {

inline std::string shape_str(std::span<const int> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float32 array with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, float fill = 0.0f) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(count(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // rank-3 [C,H,W] accessors
  float& at(int c, int y, int x) { return data_[index3(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index3(c, y, x)]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<float> grad() {
    ensure_grad();
    return *grad_;
  }
  std::span<const float> grad() const {
    if (!grad_) throw Error("tensor has no gradient buffer");
    return *grad_;
  }
  void ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0f);
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
  }
  void drop_grad() { grad_.reset(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  /// Same shape and bitwise-equal values; gradients are not compared.
  bool same_values(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  static std::size_t count(std::span<const int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

 private:
  void validate_shape() const {
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
  }
  std::size_t index3(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(x);
  }

  std::vector<int> shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<float>> grad_;
};

/// Raw forward/backward kernels. They never touch a tape; the autograd layer
/// and the inference path both call into them.
namespace kernels {

inline void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite input");
}

// C[M,N] += A[M,K] * B[K,N]; all row-major. Column blocking keeps a slab of B hot.
inline void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C) {
  constexpr int kBlock = 256;
  for (int n0 = 0; n0 < N; n0 += kBlock) {
    const int n1 = std::min(N, n0 + kBlock);
    for (int i = 0; i < M; ++i) {
      float* c = C + static_cast<std::size_t>(i) * N;
      const float* a = A + static_cast<std::size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const float av = a[k];
        const float* b = B + static_cast<std::size_t>(k) * N;
        for (int n = n0; n < n1; ++n) c[n] += av * b[n];
      }
    }
  }
}

// C[K,N] += A^T * B with A[M,K], B[M,N].
inline void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C) {
  for (int m = 0; m < M; ++m) {
    const float* a = A + static_cast<std::size_t>(m) * K;
    const float* b = B + static_cast<std::size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const float av = a[k];
      float* c = C + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

struct ConvGeometry {
  int in_channels, height, width;
  int out_channels, ksize, stride, padding;
  int out_height, out_width;

  int patch() const { return in_channels * ksize * ksize; }
  int pixels() const { return out_height * out_width; }
  bool is_pointwise() const { return ksize == 1 && stride == 1 && padding == 0; }
};

inline ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d padding must be >= 0");
  const int k = kernel.dim(2);
  if (kernel.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d kernel must be square with odd size, got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(0)) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(input.dim(0)) +
                         " channels, kernel expects " + std::to_string(kernel.dim(1)));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), k, stride, padding, 0, 0};
  const int span_h = g.height + 2 * padding - k;
  const int span_w = g.width + 2 * padding - k;
  if (span_h < 0 || span_w < 0) throw DimensionError("conv2d kernel larger than padded input");
  g.out_height = span_h / stride + 1;
  g.out_width = span_w / stride + 1;
  return g;
}

// col[patch, pixels]
inline void im2col(const ConvGeometry& g, const float* in, float* col) {
  const int k = g.ksize;
  for (int c = 0; c < g.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * g.pixels();
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          float* dst = row + static_cast<std::size_t>(oy) * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_width, 0.0f);
            continue;
          }
          const float* src = in + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_add(const ConvGeometry& g, const float* col, float* in) {
  const int k = g.ksize;
  for (int c = 0; c < g.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * g.pixels();
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const float* src = row + static_cast<std::size_t>(oy) * g.out_width;
          float* dst = in + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  Tensor out({g.out_channels, g.out_height, g.out_width});
  if (g.is_pointwise()) {
    gemm_nn(g.out_channels, g.pixels(), g.patch(), kernel.data().data(), input.data().data(), out.data().data());
    return out;
  }
  std::vector<float> col(static_cast<std::size_t>(g.patch()) * g.pixels());
  im2col(g, input.data().data(), col.data());
  gemm_nn(g.out_channels, g.pixels(), g.patch(), kernel.data().data(), col.data(), out.data().data());
  return out;
}

/// Accumulates d(input) and d(kernel) given d(output). Either target may be null.
inline void conv2d_backward(const Tensor& input, const Tensor& kernel, std::span<const float> grad_out, int stride,
                            int padding, float* grad_input, float* grad_kernel) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  const int P = g.patch();
  const int N = g.pixels();
  std::vector<float> col;
  const float* col_ptr = input.data().data();
  if (!g.is_pointwise()) {
    col.resize(static_cast<std::size_t>(P) * N);
    im2col(g, input.data().data(), col.data());
    col_ptr = col.data();
  }
  if (grad_kernel != nullptr) {
    // dK[O,P] += dOut[O,N] * col^T[N,P]
    std::vector<float> col_t(static_cast<std::size_t>(N) * P);
    for (int p = 0; p < P; ++p) {
      const float* src = col_ptr + static_cast<std::size_t>(p) * N;
      for (int n = 0; n < N; ++n) col_t[static_cast<std::size_t>(n) * P + p] = src[n];
    }
    gemm_nn(g.out_channels, P, N, grad_out.data(), col_t.data(), grad_kernel);
  }
  if (grad_input != nullptr) {
    if (g.is_pointwise()) {
      gemm_tn(g.out_channels, N, P, kernel.data().data(), grad_out.data(), grad_input);
    } else {
      std::vector<float> dcol(static_cast<std::size_t>(P) * N, 0.0f);
      gemm_tn(g.out_channels, N, P, kernel.data().data(), grad_out.data(), dcol.data());
      col2im_add(g, dcol.data(), grad_input);
    }
  }
}

inline Tensor add_channel_bias(const Tensor& input, const Tensor& bias) {
  require_rank(input, 3, "bias input");
  if (bias.rank() != 1 || bias.dim(0) != input.dim(0)) {
    throw DimensionError("bias shape " + shape_str(bias.shape()) + " does not match channels of " +
                         shape_str(input.shape()));
  }
  Tensor out = input;
  const std::size_t plane = static_cast<std::size_t>(input.dim(1)) * input.dim(2);
  for (int c = 0; c < input.dim(0); ++c) {
    float* p = out.data().data() + c * plane;
    const float b = bias[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
  return out;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

inline Tensor upsample_nearest(const Tensor& input, int factor) {
  require_rank(input, 3, "upsample_nearest");
  if (factor < 1) throw DimensionError("upsample factor must be >= 1");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  Tensor out({C, H * factor, W * factor});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H * factor; ++y)
      for (int x = 0; x < W * factor; ++x) out.at(c, y, x) = input.at(c, y / factor, x / factor);
  return out;
}

/// Per-pixel softmax over the channel axis, max-subtracted.
inline Tensor softmax_channel(const Tensor& logits) {
  require_rank(logits, 3, "softmax_channel");
  require_finite(logits, "softmax_channel");
  const int C = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  Tensor out(logits.shape());
  const float* in = logits.data().data();
  float* o = out.data().data();
  for (std::size_t p = 0; p < plane; ++p) {
    float mx = in[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, in[c * plane + p]);
    float total = 0.0f;
    for (int c = 0; c < C; ++c) {
      const float e = std::exp(in[c * plane + p] - mx);
      o[c * plane + p] = e;
      total += e;
    }
    const float inv = 1.0f / total;
    for (int c = 0; c < C; ++c) o[c * plane + p] *= inv;
  }
  return out;
}

}  // namespace kernels

using kernels::softmax_channel;

}  // namespace dts

#pragma once

// Real and binarized layer operations: dense, 1D convolution (temporal
// per-channel and across-channels), pooling, activations and batch-norm
// folding. Feature tensors are row-major [T, C, F] with the time axis
// outermost; a plain [T, C] input is treated as F = 1.
//
// Binary convolution pads with absent elements: taps outside the input are
// excluded from the popcount instead of being filled with -1, so padding
// never biases the +-1 dot product. The real path pads with zeros, which
// has the same effect.
//
// Threshold conventions: dense binary thresholds live in the popcount
// domain (+1 iff agreements >= b). Conv binary thresholds live in the
// signed dot domain (+1 iff sum of +-1 products over valid taps >= theta),
// so edge positions with fewer valid taps stay consistent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bnn/bitcore.hpp"
#include "bnn/errors.hpp"

namespace bnn {

struct IntTensor {
  Shape shape;
  std::vector<long long> data;

  IntTensor() = default;
  explicit IntTensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0) {}

  std::size_t size() const { return data.size(); }
  long long& operator[](std::size_t i) { return data[i]; }
  long long operator[](std::size_t i) const { return data[i]; }
};

enum class Precision { real, binary };

struct DenseLayer {
  Precision precision = Precision::real;
  std::size_t in = 0;
  std::size_t out = 0;
  RealTensor weights;               // [out, in], real path
  std::vector<float> biases;        // real path, length out
  BitTensor bin_weights;            // [out, in], binary path
  std::vector<long long> thresholds;  // popcount domain, length out
};

enum class ConvMode { temporal_per_channel, across_channels };

struct ConvLayer {
  Precision precision = Precision::real;
  ConvMode mode = ConvMode::across_channels;
  std::size_t filters = 0;
  std::size_t kernel_t = 0;
  std::size_t padding = 0;
  // temporal_per_channel: kernels [filters, kernel_t];
  // across_channels: kernels [filters, kernel_t, C, F].
  RealTensor kernels;
  std::vector<float> biases;
  BitTensor bin_kernels;              // same layout, packed
  std::vector<long long> thresholds;  // dot domain, length filters
};

struct BatchNormParams {
  std::vector<float> mean, variance, scale, shift;
  float epsilon = 1e-5f;
};

// ---------------------------------------------------------------------------
// Dense

inline RealTensor dense_real(const RealTensor& x, const DenseLayer& layer) {
  if (x.size() != layer.in)
    throw ShapeError("dense_real: input length != in");
  RealTensor out(Shape{layer.out});
  for (std::size_t k = 0; k < layer.out; ++k) {
    float acc = layer.biases.empty() ? 0.0f : layer.biases[k];
    const float* w = layer.weights.data.data() + k * layer.in;
    for (std::size_t j = 0; j < layer.in; ++j) acc += w[j] * x.data[j];
    out.data[k] = acc;
  }
  return out;
}

// Per-output agreement counts popcount(XNOR(w_k, x)).
inline IntTensor dense_binary_popcounts(const BitTensor& x, const DenseLayer& layer) {
  if (layer.precision != Precision::binary)
    throw RealWeightsInBinaryPath("dense_binary: layer holds real weights");
  if (x.size() != layer.in)
    throw ShapeError("dense_binary: input length != in");
  IntTensor pc(Shape{layer.out});
  for (std::size_t k = 0; k < layer.out; ++k)
    pc[k] = static_cast<long long>(xnor_popcount_span(
        layer.bin_weights.words(), k * layer.in, x.words(), 0, layer.in));
  return pc;
}

// Signed dot-domain scores 2*popcount - n; used for the output layer where
// integer class scores are wanted instead of a sign.
inline IntTensor dense_binary_scores(const BitTensor& x, const DenseLayer& layer) {
  IntTensor s = dense_binary_popcounts(x, layer);
  for (auto& v : s.data) v = 2 * v - static_cast<long long>(layer.in);
  return s;
}

inline BitTensor dense_binary(const BitTensor& x, const DenseLayer& layer) {
  IntTensor pc = dense_binary_popcounts(x, layer);
  BitTensor out(Shape{layer.out});
  for (std::size_t k = 0; k < layer.out; ++k)
    out.set(k, pc[k] >= layer.thresholds[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Convolution helpers

inline std::size_t conv_out_len(std::size_t T, std::size_t kernel_t, std::size_t padding) {
  if (T + 2 * padding < kernel_t)
    throw ShapeError("conv1d: kernel longer than padded input");
  return T + 2 * padding - kernel_t + 1;
}

namespace detail {

// [T], [T, C] and [T, C, F] all normalize to (T, C, F).
inline void tcf_dims(const Shape& s, std::size_t& T, std::size_t& C, std::size_t& F) {
  if (s.empty() || s.size() > 3) throw ShapeError("conv1d: input rank must be 1..3");
  T = s[0];
  C = s.size() >= 2 ? s[1] : 1;
  F = s.size() == 3 ? s[2] : 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Real convolution

inline RealTensor conv1d_real(const RealTensor& x, const ConvLayer& layer) {
  std::size_t T, C, F;
  detail::tcf_dims(x.shape, T, C, F);
  const std::size_t To = conv_out_len(T, layer.kernel_t, layer.padding);
  const long long p = static_cast<long long>(layer.padding);

  if (layer.mode == ConvMode::temporal_per_channel) {
    if (F != 1)
      throw ShapeError("conv1d temporal_per_channel: input must have a single feature map");
    RealTensor out(Shape{To, C, layer.filters});
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < layer.filters; ++f) {
          float acc = layer.biases.empty() ? 0.0f : layer.biases[f];
          const float* w = layer.kernels.data.data() + f * layer.kernel_t;
          for (std::size_t k = 0; k < layer.kernel_t; ++k) {
            const long long ti = static_cast<long long>(t + k) - p;
            if (ti < 0 || ti >= static_cast<long long>(T)) continue;
            acc += w[k] * x.data[static_cast<std::size_t>(ti) * C + c];
          }
          out.data[(t * C + c) * layer.filters + f] = acc;
        }
    return out;
  }

  // across_channels: contract C and F.
  const std::size_t row = C * F;
  RealTensor out(Shape{To, 1, layer.filters});
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t f = 0; f < layer.filters; ++f) {
      float acc = layer.biases.empty() ? 0.0f : layer.biases[f];
      const float* w = layer.kernels.data.data() + f * layer.kernel_t * row;
      for (std::size_t k = 0; k < layer.kernel_t; ++k) {
        const long long ti = static_cast<long long>(t + k) - p;
        if (ti < 0 || ti >= static_cast<long long>(T)) continue;
        const float* xr = x.data.data() + static_cast<std::size_t>(ti) * row;
        const float* wr = w + k * row;
        for (std::size_t j = 0; j < row; ++j) acc += wr[j] * xr[j];
      }
      out.data[t * layer.filters + f] = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Binary convolution: integer accumulations (dot domain, valid taps only)

inline IntTensor conv1d_binary_acc(const BitTensor& x, const ConvLayer& layer) {
  if (layer.precision != Precision::binary)
    throw RealWeightsInBinaryPath("conv1d_binary: layer holds real weights");
  std::size_t T, C, F;
  detail::tcf_dims(x.shape(), T, C, F);
  const std::size_t To = conv_out_len(T, layer.kernel_t, layer.padding);
  const long long p = static_cast<long long>(layer.padding);

  if (layer.mode == ConvMode::temporal_per_channel) {
    if (F != 1)
      throw ShapeError("conv1d temporal_per_channel: input must have a single feature map");
    // Repack channel-major so every window is a contiguous bit span.
    BitTensor cm(Shape{C, T});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c)
        cm.set(c * T + t, x.bit(t * C + c));

    IntTensor out(Shape{To, C, layer.filters});
    for (std::size_t t = 0; t < To; ++t) {
      const long long lo = std::max<long long>(0, static_cast<long long>(t) - p);
      const long long hi = std::min<long long>(static_cast<long long>(T),
                                               static_cast<long long>(t + layer.kernel_t) - p);
      const std::size_t n = static_cast<std::size_t>(hi - lo);
      const std::size_t koff = static_cast<std::size_t>(lo - (static_cast<long long>(t) - p));
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < layer.filters; ++f)
          out[(t * C + c) * layer.filters + f] = binary_dot_span(
              cm.words(), c * T + static_cast<std::size_t>(lo),
              layer.bin_kernels.words(), f * layer.kernel_t + koff, n);
    }
    return out;
  }

  const std::size_t row = C * F;
  IntTensor out(Shape{To, 1, layer.filters});
  for (std::size_t t = 0; t < To; ++t) {
    const long long lo = std::max<long long>(0, static_cast<long long>(t) - p);
    const long long hi = std::min<long long>(static_cast<long long>(T),
                                             static_cast<long long>(t + layer.kernel_t) - p);
    const std::size_t n = static_cast<std::size_t>(hi - lo) * row;
    const std::size_t koff = static_cast<std::size_t>(lo - (static_cast<long long>(t) - p)) * row;
    for (std::size_t f = 0; f < layer.filters; ++f)
      out[t * layer.filters + f] = binary_dot_span(
          x.words(), static_cast<std::size_t>(lo) * row,
          layer.bin_kernels.words(), f * layer.kernel_t * row + koff, n);
  }
  return out;
}

inline BitTensor threshold_acc(const IntTensor& acc, const std::vector<long long>& thresholds) {
  const std::size_t filters = thresholds.size();
  if (acc.size() % filters != 0)
    throw ShapeError("threshold_acc: accumulator size not a multiple of filter count");
  BitTensor out(acc.shape);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.set(i, acc[i] >= thresholds[i % filters]);
  return out;
}

inline BitTensor conv1d_binary(const BitTensor& x, const ConvLayer& layer) {
  return threshold_acc(conv1d_binary_acc(x, layer), layer.thresholds);
}

// ---------------------------------------------------------------------------
// Pooling along the time axis. Stride defaults to the window
// (non-overlapping); the trailing partial window is dropped.

inline std::size_t pool_out_len(std::size_t T, std::size_t window, std::size_t stride) {
  if (window < 1 || stride < 1) throw ShapeError("pool: window and stride must be >= 1");
  if (window > T) throw ShapeError("pool: window exceeds input length");
  return (T - window) / stride + 1;
}

namespace detail {

template <typename Tensor, typename Reduce>
Tensor pool_impl(const Tensor& x, const Shape& xs, std::size_t window, std::size_t stride,
                 Reduce reduce) {
  std::size_t T, C, F;
  tcf_dims(xs, T, C, F);
  const std::size_t To = pool_out_len(T, window, stride);
  const std::size_t row = C * F;
  Shape os = xs;
  os[0] = To;
  Tensor out(os);
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t j = 0; j < row; ++j)
      out.data[t * row + j] = reduce(x, t * stride, window, row, j);
  return out;
}

}  // namespace detail

inline RealTensor avg_pool(const RealTensor& x, std::size_t window, std::size_t stride = 0) {
  if (stride == 0) stride = window;
  return detail::pool_impl<RealTensor>(
      x, x.shape, window, stride,
      [](const RealTensor& in, std::size_t t0, std::size_t w, std::size_t row, std::size_t j) {
        float s = 0.0f;
        for (std::size_t k = 0; k < w; ++k) s += in.data[(t0 + k) * row + j];
        return s / static_cast<float>(w);
      });
}

inline RealTensor max_pool(const RealTensor& x, std::size_t window, std::size_t stride = 0) {
  if (stride == 0) stride = window;
  return detail::pool_impl<RealTensor>(
      x, x.shape, window, stride,
      [](const RealTensor& in, std::size_t t0, std::size_t w, std::size_t row, std::size_t j) {
        float m = in.data[t0 * row + j];
        for (std::size_t k = 1; k < w; ++k) m = std::max(m, in.data[(t0 + k) * row + j]);
        return m;
      });
}

// Sum pooling over integer pre-activations; the downstream sign threshold
// absorbs the positive 1/window factor of an average pool.
inline IntTensor sum_pool(const IntTensor& x, std::size_t window, std::size_t stride = 0) {
  if (stride == 0) stride = window;
  return detail::pool_impl<IntTensor>(
      x, x.shape, window, stride,
      [](const IntTensor& in, std::size_t t0, std::size_t w, std::size_t row, std::size_t j) {
        long long s = 0;
        for (std::size_t k = 0; k < w; ++k) s += in.data[(t0 + k) * row + j];
        return s;
      });
}

// Max pooling on +-1 data is a logical OR over the window.
inline BitTensor bit_max_pool(const BitTensor& x, std::size_t window, std::size_t stride = 0) {
  if (stride == 0) stride = window;
  std::size_t T, C, F;
  detail::tcf_dims(x.shape(), T, C, F);
  const std::size_t To = pool_out_len(T, window, stride);
  const std::size_t row = C * F;
  Shape os = x.shape();
  os[0] = To;
  BitTensor out(os);
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t j = 0; j < row; ++j) {
      bool any = false;
      for (std::size_t k = 0; k < window && !any; ++k)
        any = x.bit((t * stride + k) * row + j);
      out.set(t * row + j, any);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { none, relu, hardtanh, sign };

inline RealTensor activate(const RealTensor& x, Activation kind) {
  RealTensor out = x;
  switch (kind) {
    case Activation::relu:
      for (auto& v : out.data) v = std::max(v, 0.0f);
      break;
    case Activation::hardtanh:
      for (auto& v : out.data) v = std::clamp(v, -1.0f, 1.0f);
      break;
    case Activation::none:
      break;
    case Activation::sign:
      throw InvalidValue("activate: sign produces a BitTensor, use sign_activate");
  }
  return out;
}

inline BitTensor sign_activate(const RealTensor& x) { return pack(x); }

// ---------------------------------------------------------------------------
// Batch-norm folding. BN followed by sign over an integer pre-activation a
// collapses to a single integer comparison: a >= theta for positive BN
// scale, a <= theta for negative scale.

struct FoldedBatchNorm {
  std::vector<long long> thresholds;
  std::vector<bool> flipped;  // true where the BN scale is negative

  int apply(std::size_t k, long long a) const {
    const bool on = flipped[k] ? (a <= thresholds[k]) : (a >= thresholds[k]);
    return on ? +1 : -1;
  }
};

inline FoldedBatchNorm fold_batchnorm(const BatchNormParams& bn) {
  const std::size_t n = bn.scale.size();
  if (bn.mean.size() != n || bn.variance.size() != n || bn.shift.size() != n)
    throw ShapeError("fold_batchnorm: parameter vectors differ in length");
  FoldedBatchNorm folded;
  folded.thresholds.resize(n);
  folded.flipped.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (bn.scale[k] == 0.0f)
      throw DegenerateBN("fold_batchnorm: zero scale at channel " + std::to_string(k));
    const double sd = std::sqrt(static_cast<double>(bn.variance[k]) + bn.epsilon);
    const double theta = static_cast<double>(bn.mean[k]) -
                         static_cast<double>(bn.shift[k]) * sd / bn.scale[k];
    folded.flipped[k] = bn.scale[k] < 0.0f;
    folded.thresholds[k] = folded.flipped[k]
                               ? static_cast<long long>(std::floor(theta))
                               : static_cast<long long>(std::ceil(theta));
  }
  return folded;
}

}  // namespace bnn

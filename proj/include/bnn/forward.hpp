#pragma once

// Runtime model: descriptor plus per-layer parameters, and the packed
// inference path. Binary layers hold bit-packed weights and integer
// thresholds in the signed dot domain; a binary conv with sign activation
// that is immediately followed by an average pool defers its threshold
// until after the (integer sum) pool, with the threshold scaled by the
// window so the comparison stays exact.

#include <cmath>
#include <cstdint>
#include <vector>

#include "bnn/bitcore.hpp"
#include "bnn/errors.hpp"
#include "bnn/layers.hpp"
#include "bnn/netspec.hpp"

namespace bnn {

struct LayerWeights {
  // Real path (float32 / int8 descriptors both execute as float here).
  RealTensor weights;
  std::vector<float> biases;
  BatchNormParams bn;  // used when the descriptor has has_batchnorm
  // Binary path.
  BitTensor bin_weights;              // conv: [filters, kernel, C, F] or [filters, kernel]
  std::vector<long long> thresholds;  // dot domain, one per output unit/filter
};

struct Model {
  NetworkSpec spec;
  std::vector<LayerWeights> params;  // aligned with spec.layers; empty for pool/flatten

  bool layer_is_binary(std::size_t i) const {
    return spec.layers[i].precision == LayerPrecision::binary;
  }
};

struct Prediction {
  std::vector<float> scores;
  std::size_t label = 0;
};

namespace detail {

inline Activation to_activation(ActKind a) {
  switch (a) {
    case ActKind::none: return Activation::none;
    case ActKind::relu: return Activation::relu;
    case ActKind::hardtanh: return Activation::hardtanh;
    case ActKind::sign: return Activation::sign;
  }
  return Activation::none;
}

inline std::size_t argmax(const std::vector<float>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline void apply_bn_inplace(RealTensor& x, const BatchNormParams& bn) {
  const std::size_t ch = bn.scale.size();
  if (x.size() % ch != 0) throw ShapeError("batchnorm: channel count mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = i % ch;
    x.data[i] = bn.scale[k] * (x.data[i] - bn.mean[k]) /
                    std::sqrt(bn.variance[k] + bn.epsilon) +
                bn.shift[k];
  }
}

inline ConvLayer make_conv(const LayerDescriptor& d, const LayerWeights& w) {
  ConvLayer c;
  c.precision = d.precision == LayerPrecision::binary ? Precision::binary : Precision::real;
  c.mode = d.kind == LayerKind::conv_temporal ? ConvMode::temporal_per_channel
                                              : ConvMode::across_channels;
  c.filters = d.units;
  c.kernel_t = d.kernel;
  c.padding = d.padding;
  c.kernels = w.weights;
  c.biases = w.biases;
  c.bin_kernels = w.bin_weights;
  c.thresholds = w.thresholds;
  return c;
}

inline DenseLayer make_dense(const LayerDescriptor& d, const LayerWeights& w,
                             std::size_t fan_in) {
  DenseLayer l;
  l.precision = d.precision == LayerPrecision::binary ? Precision::binary : Precision::real;
  l.in = fan_in;
  l.out = d.units;
  l.weights = w.weights;
  l.biases = w.biases;
  l.bin_weights = w.bin_weights;
  // Dot-domain theta converts to the popcount domain of dense_binary:
  // dot >= theta  <=>  popcount >= ceil((theta + n) / 2).
  const auto ceil_div2 = [](long long t) { return t / 2 + (t % 2 != 0 && t > 0 ? 1 : 0); };
  l.thresholds.resize(w.thresholds.size());
  for (std::size_t k = 0; k < w.thresholds.size(); ++k)
    l.thresholds[k] = ceil_div2(w.thresholds[k] + static_cast<long long>(fan_in));
  return l;
}

}  // namespace detail

// Packed forward pass over one input sample.
inline Prediction forward(const Model& model, const RealTensor& input) {
  enum class St { real, bits, ints };
  St st = St::real;
  RealTensor r = input;
  BitTensor bits;
  IntTensor ints;
  std::vector<long long> pending;  // per-filter dot thresholds of a deferred sign

  const auto to_bits = [&]() {
    if (st == St::real) {
      bits = pack(r);
      st = St::bits;
    } else if (st == St::ints) {
      throw ShapeError("forward: integer accumulations reached a bit-only layer");
    }
  };
  const auto to_real = [&]() {
    if (st == St::bits) {
      r = unpack(bits);
      st = St::real;
    } else if (st == St::ints) {
      r = RealTensor(ints.shape);
      for (std::size_t i = 0; i < ints.size(); ++i)
        r.data[i] = static_cast<float>(ints[i]);
      st = St::real;
    }
  };

  const auto& layers = model.spec.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDescriptor& d = layers[i];
    const bool binary = d.precision == LayerPrecision::binary;
    switch (d.kind) {
      case LayerKind::conv_temporal:
      case LayerKind::conv_spatial: {
        const ConvLayer conv = detail::make_conv(d, model.params[i]);
        if (!binary) {
          to_real();
          r = conv1d_real(r, conv);
          if (d.has_batchnorm) detail::apply_bn_inplace(r, model.params[i].bn);
          if (d.activation == ActKind::sign) {
            bits = sign_activate(r);
            st = St::bits;
          } else {
            r = activate(r, detail::to_activation(d.activation));
          }
          break;
        }
        to_bits();
        ints = conv1d_binary_acc(bits, conv);
        st = St::ints;
        if (d.activation == ActKind::sign) {
          const bool defer = i + 1 < layers.size() &&
                             layers[i + 1].kind == LayerKind::avg_pool;
          if (defer) {
            pending = conv.thresholds;
          } else {
            bits = threshold_acc(ints, conv.thresholds);
            st = St::bits;
          }
        }
        break;
      }
      case LayerKind::conv2d:
      case LayerKind::depthwise_conv:
      case LayerKind::pointwise_conv:
        throw ConfigError("forward: 2D convolutions are descriptor-only");
      case LayerKind::avg_pool: {
        const std::size_t stride = d.stride == 0 ? d.kernel : d.stride;
        if (st == St::ints) {
          ints = sum_pool(ints, d.kernel, stride);
          if (!pending.empty()) {
            // threshold absorbs the positive 1/window factor
            std::vector<long long> scaled = pending;
            for (auto& t : scaled) t *= static_cast<long long>(d.kernel);
            bits = threshold_acc(ints, scaled);
            st = St::bits;
            pending.clear();
          }
        } else if (st == St::bits) {
          // average of +-1 values then sign == majority vote, sign(0) = +1
          IntTensor acc(bits.shape());
          for (std::size_t j = 0; j < bits.size(); ++j) acc[j] = bits.get(j);
          acc = sum_pool(acc, d.kernel, stride);
          BitTensor pooled(acc.shape);
          for (std::size_t j = 0; j < acc.size(); ++j) pooled.set(j, acc[j] >= 0);
          bits = pooled;
        } else {
          r = avg_pool(r, d.kernel, stride);
        }
        break;
      }
      case LayerKind::max_pool: {
        const std::size_t stride = d.stride == 0 ? d.kernel : d.stride;
        if (st == St::bits) bits = bit_max_pool(bits, d.kernel, stride);
        else if (st == St::ints) {
          throw ShapeError("forward: max pool over raw accumulations is unsupported");
        } else {
          r = max_pool(r, d.kernel, stride);
        }
        break;
      }
      case LayerKind::flatten: {
        // row-major data is already flat; only the shape changes
        if (st == St::real) {
          r.shape = {r.size()};
        } else if (st == St::ints) {
          ints.shape = {ints.size()};
        } else {
          BitTensor flat(Shape{bits.size()});
          flat.words() = bits.words();
          bits = flat;
        }
        break;
      }
      case LayerKind::dense:
      case LayerKind::softmax: {
        std::size_t fan_in;
        if (st == St::real) fan_in = r.size();
        else if (st == St::bits) fan_in = bits.size();
        else throw ShapeError("forward: dense over raw accumulations");
        const DenseLayer dl = detail::make_dense(d, model.params[i], fan_in);
        if (!binary) {
          to_real();
          r = dense_real(r, dl);
          if (d.has_batchnorm) detail::apply_bn_inplace(r, model.params[i].bn);
          if (d.kind == LayerKind::softmax) break;
          if (d.activation == ActKind::sign) {
            bits = sign_activate(r);
            st = St::bits;
          } else {
            r = activate(r, detail::to_activation(d.activation));
          }
          break;
        }
        to_bits();
        if (d.activation == ActKind::sign) {
          bits = dense_binary(bits, dl);
        } else {
          // integer class scores: dot minus threshold
          IntTensor sc = dense_binary_scores(bits, dl);
          for (std::size_t k = 0; k < sc.size(); ++k)
            sc[k] -= model.params[i].thresholds[k];
          ints = sc;
          st = St::ints;
        }
        break;
      }
    }
  }

  Prediction p;
  if (st == St::ints) {
    p.scores.resize(ints.size());
    for (std::size_t i = 0; i < ints.size(); ++i)
      p.scores[i] = static_cast<float>(ints[i]);
  } else if (st == St::real) {
    p.scores = r.data;
  } else {
    p.scores.resize(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i)
      p.scores[i] = static_cast<float>(bits.get(i));
  }
  p.label = detail::argmax(p.scores);
  return p;
}

}  // namespace bnn

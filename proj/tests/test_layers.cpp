#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "bnn/layers.hpp"

using namespace bnn;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(20240811);
  return r;
}

RealTensor random_real(const Shape& s) {
  RealTensor t(s);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  for (auto& v : t.data) v = u(rng());
  return t;
}

BitTensor random_bits(const Shape& s) {
  BitTensor b(s);
  for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng()() & 1);
  return b;
}

// Naive +-1 conv accumulation with absent-tap padding, the oracle for the
// packed binary conv. Returns the signed dot over valid taps only.
IntTensor naive_conv_binary(const BitTensor& x, const ConvLayer& layer) {
  std::size_t T = x.shape()[0];
  std::size_t C = x.shape().size() >= 2 ? x.shape()[1] : 1;
  std::size_t F = x.shape().size() == 3 ? x.shape()[2] : 1;
  const std::size_t To = conv_out_len(T, layer.kernel_t, layer.padding);
  const long long p = static_cast<long long>(layer.padding);
  if (layer.mode == ConvMode::temporal_per_channel) {
    IntTensor out(Shape{To, C, layer.filters});
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < layer.filters; ++f) {
          long long acc = 0;
          for (std::size_t k = 0; k < layer.kernel_t; ++k) {
            const long long ti = static_cast<long long>(t + k) - p;
            if (ti < 0 || ti >= static_cast<long long>(T)) continue;
            acc += x.get(static_cast<std::size_t>(ti) * C + c) *
                   layer.bin_kernels.get(f * layer.kernel_t + k);
          }
          out[(t * C + c) * layer.filters + f] = acc;
        }
    return out;
  }
  const std::size_t row = C * F;
  IntTensor out(Shape{To, 1, layer.filters});
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t f = 0; f < layer.filters; ++f) {
      long long acc = 0;
      for (std::size_t k = 0; k < layer.kernel_t; ++k) {
        const long long ti = static_cast<long long>(t + k) - p;
        if (ti < 0 || ti >= static_cast<long long>(T)) continue;
        for (std::size_t j = 0; j < row; ++j)
          acc += x.get(static_cast<std::size_t>(ti) * row + j) *
                 layer.bin_kernels.get((f * layer.kernel_t + k) * row + j);
      }
      out[t * layer.filters + f] = acc;
    }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense

TEST_CASE("dense_real hand cases") {
  DenseLayer id;
  id.in = id.out = 2;
  id.weights = RealTensor(Shape{2, 2}, {1, 0, 0, 1});
  id.biases = {0, 0};
  RealTensor y = dense_real(RealTensor(Shape{2}, {3, 4}), id);
  CHECK(y.data == std::vector<float>{3, 4});

  DenseLayer l;
  l.in = 2;
  l.out = 1;
  l.weights = RealTensor(Shape{1, 2}, {1, -1});
  l.biases = {0.5f};
  y = dense_real(RealTensor(Shape{2}, {2, 1}), l);
  CHECK(y.data[0] == 1.5f);
}

TEST_CASE("dense_real matches a naive loop on random layers") {
  DenseLayer l;
  l.in = 16;
  l.out = 8;
  l.weights = random_real(Shape{8, 16});
  l.biases.assign(8, 0.25f);
  const RealTensor x = random_real(Shape{16});
  const RealTensor y = dense_real(x, l);
  for (std::size_t k = 0; k < 8; ++k) {
    float acc = 0.25f;
    for (std::size_t j = 0; j < 16; ++j) acc += l.weights.data[k * 16 + j] * x.data[j];
    CHECK(y.data[k] == acc);
  }
}

TEST_CASE("dense_real rejects bad input length") {
  DenseLayer l;
  l.in = 4;
  l.out = 1;
  l.weights = RealTensor(Shape{1, 4});
  CHECK_THROWS_AS(dense_real(RealTensor(Shape{3}), l), ShapeError);
}

TEST_CASE("dense_binary threshold edge cases") {
  const std::size_t n = 16;
  BitTensor x = random_bits(Shape{n});
  DenseLayer l;
  l.precision = Precision::binary;
  l.in = n;
  l.out = 1;
  l.bin_weights = x;  // w == x: popcount n
  l.bin_weights = BitTensor(Shape{1, n});
  for (std::size_t i = 0; i < n; ++i) l.bin_weights.set(i, x.bit(i));
  l.thresholds = {static_cast<long long>(n)};
  CHECK(dense_binary(x, l).get(0) == +1);

  for (std::size_t i = 0; i < n; ++i) l.bin_weights.flip(i);  // w == NOT x
  l.thresholds = {1};
  CHECK(dense_binary(x, l).get(0) == -1);
}

TEST_CASE("dense_binary equals the float-emulation oracle on a random layer") {
  const std::size_t in = 256, out = 32;
  DenseLayer l;
  l.precision = Precision::binary;
  l.in = in;
  l.out = out;
  l.bin_weights = random_bits(Shape{out, in});
  l.thresholds.resize(out);
  for (auto& t : l.thresholds) t = static_cast<long long>(rng()() % (in + 1));
  const BitTensor x = random_bits(Shape{in});
  const BitTensor y = dense_binary(x, l);
  for (std::size_t k = 0; k < out; ++k) {
    float dot = 0.0f;
    for (std::size_t j = 0; j < in; ++j)
      dot += static_cast<float>(l.bin_weights.get(k * in + j)) * x.get(j);
    // popcount >= b  <=>  dot >= 2b - n
    const float thr = 2.0f * l.thresholds[k] - static_cast<float>(in);
    CHECK(y.get(k) == (dot >= thr ? +1 : -1));
  }
}

TEST_CASE("binary path refuses real weights") {
  DenseLayer l;
  l.in = 4;
  l.out = 1;
  CHECK_THROWS_AS(dense_binary(random_bits(Shape{4}), l), RealWeightsInBinaryPath);

  ConvLayer c;
  c.filters = 1;
  c.kernel_t = 1;
  CHECK_THROWS_AS(conv1d_binary_acc(random_bits(Shape{4}), c), RealWeightsInBinaryPath);
}

// ---------------------------------------------------------------------------
// Convolution

TEST_CASE("temporal conv reproduces the wide-signal shape row") {
  ConvLayer c;
  c.mode = ConvMode::temporal_per_channel;
  c.filters = 40;
  c.kernel_t = 30;
  c.padding = 15;
  c.kernels = random_real(Shape{40, 30});
  const RealTensor y = conv1d_real(random_real(Shape{960, 64}), c);
  CHECK(y.shape == Shape{961, 64, 40});
}

TEST_CASE("across-channels conv reproduces the multichannel shape row") {
  ConvLayer c;
  c.mode = ConvMode::across_channels;
  c.filters = 32;
  c.kernel_t = 13;
  c.kernels = random_real(Shape{32, 13, 12, 1});
  const RealTensor y = conv1d_real(random_real(Shape{750, 12}), c);
  CHECK(y.shape == Shape{738, 1, 32});
}

TEST_CASE("identity kernel leaves the signal unchanged") {
  ConvLayer c;
  c.mode = ConvMode::temporal_per_channel;
  c.filters = 1;
  c.kernel_t = 1;
  c.kernels = RealTensor(Shape{1, 1}, {1.0f});
  const RealTensor x = random_real(Shape{20, 3});
  const RealTensor y = conv1d_real(x, c);
  REQUIRE(y.shape == Shape{20, 3, 1});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("conv1d_real matches a naive zero-padded loop, both modes") {
  for (int mode = 0; mode < 2; ++mode) {
    ConvLayer c;
    c.mode = mode == 0 ? ConvMode::temporal_per_channel : ConvMode::across_channels;
    c.filters = 3;
    c.kernel_t = 5;
    c.padding = 2;
    const std::size_t T = 17, C = 4;
    c.kernels = mode == 0 ? random_real(Shape{3, 5}) : random_real(Shape{3, 5, C, 1});
    c.biases = {0.1f, -0.2f, 0.3f};
    const RealTensor x = random_real(Shape{T, C});
    const RealTensor y = conv1d_real(x, c);
    const std::size_t To = T + 2 * c.padding - c.kernel_t + 1;
    auto at = [&](long long ti, std::size_t ch) {
      return (ti < 0 || ti >= static_cast<long long>(T)) ? 0.0f : x.data[ti * C + ch];
    };
    if (mode == 0) {
      REQUIRE(y.shape == Shape{To, C, 3});
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t ch = 0; ch < C; ++ch)
          for (std::size_t f = 0; f < 3; ++f) {
            float acc = c.biases[f];
            for (std::size_t k = 0; k < 5; ++k)
              acc += c.kernels.data[f * 5 + k] * at(static_cast<long long>(t + k) - 2, ch);
            CHECK(y.data[(t * C + ch) * 3 + f] == Catch::Approx(acc).margin(1e-5));
          }
    } else {
      REQUIRE(y.shape == Shape{To, 1, 3});
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t f = 0; f < 3; ++f) {
          float acc = c.biases[f];
          for (std::size_t k = 0; k < 5; ++k)
            for (std::size_t ch = 0; ch < C; ++ch)
              acc += c.kernels.data[(f * 5 + k) * C + ch] *
                     at(static_cast<long long>(t + k) - 2, ch);
          CHECK(y.data[t * 3 + f] == Catch::Approx(acc).margin(1e-5));
        }
    }
  }
}

TEST_CASE("kernel longer than padded input is rejected") {
  CHECK_THROWS_AS(conv_out_len(4, 10, 2), ShapeError);
}

TEST_CASE("packed binary conv equals the naive masked-padding oracle") {
  for (int rep = 0; rep < 40; ++rep) {
    ConvLayer c;
    c.precision = Precision::binary;
    c.mode = rep % 2 ? ConvMode::across_channels : ConvMode::temporal_per_channel;
    c.filters = 1 + rng()() % 5;
    c.kernel_t = 1 + rng()() % 9;
    c.padding = rng()() % (c.kernel_t + 1);  // exercises edge masking
    const std::size_t T = c.kernel_t + rng()() % 30;
    const std::size_t C = 1 + rng()() % 6;
    c.bin_kernels = c.mode == ConvMode::temporal_per_channel
                        ? random_bits(Shape{c.filters, c.kernel_t})
                        : random_bits(Shape{c.filters, c.kernel_t, C, 1});
    const BitTensor x = random_bits(Shape{T, C});
    const IntTensor got = conv1d_binary_acc(x, c);
    const IntTensor want = naive_conv_binary(x, c);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("threshold_acc applies per-filter dot thresholds") {
  IntTensor acc(Shape{2, 1, 2});
  acc.data = {3, -1, 0, 5};
  BitTensor y = threshold_acc(acc, {1, 0});
  CHECK(y.get(0) == +1);  // 3 >= 1
  CHECK(y.get(1) == -1);  // -1 < 0
  CHECK(y.get(2) == -1);  // 0 < 1
  CHECK(y.get(3) == +1);  // 5 >= 0
  CHECK_THROWS_AS(threshold_acc(acc, {1, 2, 3}), ShapeError);
}

// ---------------------------------------------------------------------------
// Pooling

TEST_CASE("pool lengths match the published shape rows") {
  CHECK(pool_out_len(961, 30, 15) == 63);  // overlapping window
  CHECK(pool_out_len(738, 2, 2) == 369);
}

TEST_CASE("max_pool over a constant tensor is constant") {
  RealTensor x(Shape{12, 2});
  for (auto& v : x.data) v = 2.5f;
  const RealTensor y = max_pool(x, 3);
  REQUIRE(y.shape == Shape{4, 2});
  for (float v : y.data) CHECK(v == 2.5f);
}

TEST_CASE("avg_pool drops the trailing partial window") {
  RealTensor x(Shape{7}, {1, 2, 3, 4, 5, 6, 7});
  const RealTensor y = avg_pool(x, 3);
  REQUIRE(y.shape == Shape{2});
  CHECK(y.data[0] == 2.0f);
  CHECK(y.data[1] == 5.0f);
}

TEST_CASE("window larger than input throws") {
  CHECK_THROWS_AS(pool_out_len(3, 4, 4), ShapeError);
}

TEST_CASE("sum_pool then scaled threshold equals avg_pool then threshold") {
  // the sign threshold absorbs the positive 1/window factor
  IntTensor acc(Shape{9, 1, 1});
  for (std::size_t i = 0; i < 9; ++i)
    acc[i] = static_cast<long long>(rng()() % 21) - 10;
  const std::size_t w = 3;
  const IntTensor pooled = sum_pool(acc, w);
  const long long theta = 2;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const double mean = static_cast<double>(pooled[i]) / w;
    CHECK((pooled[i] >= theta * static_cast<long long>(w)) == (mean >= theta));
  }
}

TEST_CASE("bit_max_pool is logical OR over the window") {
  BitTensor x(Shape{8, 1});
  x.set(2, true);
  x.set(7, true);
  const BitTensor y = bit_max_pool(x, 2, 2);
  REQUIRE(y.size() == 4);
  CHECK(y.get(0) == -1);
  CHECK(y.get(1) == +1);
  CHECK(y.get(2) == -1);
  CHECK(y.get(3) == +1);
}

// ---------------------------------------------------------------------------
// Activations

TEST_CASE("activation hand cases") {
  CHECK(activate(RealTensor(Shape{2}, {-1, 2}), Activation::relu).data ==
        std::vector<float>{0, 2});
  CHECK(activate(RealTensor(Shape{3}, {-3, 0.5f, 3}), Activation::hardtanh).data ==
        std::vector<float>{-1, 0.5f, 1});
  CHECK_THROWS_AS(activate(RealTensor(Shape{1}), Activation::sign), InvalidValue);
}

TEST_CASE("sign activation equals pack") {
  const RealTensor t = random_real(Shape{200});
  CHECK(sign_activate(t) == pack(t));
}

// ---------------------------------------------------------------------------
// Batch-norm folding

namespace {

int bn_then_sign(const BatchNormParams& bn, std::size_t k, long long a) {
  const double sd = std::sqrt(static_cast<double>(bn.variance[k]) + bn.epsilon);
  const double y = bn.scale[k] * (static_cast<double>(a) - bn.mean[k]) / sd + bn.shift[k];
  return y >= 0.0 ? +1 : -1;
}

BatchNormParams random_bn(std::size_t n, bool allow_negative_scale) {
  BatchNormParams bn;
  std::uniform_real_distribution<float> m(-5.0f, 5.0f), v(0.01f, 4.0f),
      s(0.1f, 3.0f);
  for (std::size_t k = 0; k < n; ++k) {
    bn.mean.push_back(m(rng()));
    bn.variance.push_back(v(rng()));
    float sc = s(rng());
    if (allow_negative_scale && (rng()() & 1)) sc = -sc;
    bn.scale.push_back(sc);
    bn.shift.push_back(m(rng()));
  }
  return bn;
}

}  // namespace

TEST_CASE("identity batch norm folds to sign at zero") {
  BatchNormParams bn;
  bn.mean = {0};
  bn.variance = {1};
  bn.scale = {1};
  bn.shift = {0};
  bn.epsilon = 0.0f;
  const FoldedBatchNorm f = fold_batchnorm(bn);
  for (long long a = -5; a <= 5; ++a) CHECK(f.apply(0, a) == (a >= 0 ? +1 : -1));
}

TEST_CASE("folded decision equals BN-then-sign exhaustively, both scale signs") {
  for (int neg = 0; neg < 2; ++neg) {
    const std::size_t n = 64;
    const BatchNormParams bn = random_bn(n, neg == 1);
    const FoldedBatchNorm f = fold_batchnorm(bn);
    for (std::size_t k = 0; k < n; ++k)
      for (long long a = -static_cast<long long>(n); a <= static_cast<long long>(n); ++a)
        CHECK(f.apply(k, a) == bn_then_sign(bn, k, a));
  }
}

TEST_CASE("zero batch-norm scale is degenerate") {
  BatchNormParams bn;
  bn.mean = {0};
  bn.variance = {1};
  bn.scale = {0};
  bn.shift = {0};
  CHECK_THROWS_AS(fold_batchnorm(bn), DegenerateBN);
}

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "bnn/model_io.hpp"

using namespace bnn;

namespace {

Model random_model(const NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Model m;
  m.spec = spec;
  m.params.resize(spec.layers.size());
  const ParamCount pc = count_params(spec);
  const std::vector<Shape> shapes = infer_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDescriptor& d = spec.layers[i];
    if (!has_params(d.kind)) continue;
    LayerWeights& lw = m.params[i];
    if (d.precision == LayerPrecision::binary) {
      lw.bin_weights = BitTensor(Shape{pc.layers[i].weight_params});
      for (std::size_t j = 0; j < lw.bin_weights.size(); ++j)
        lw.bin_weights.set(j, rng() & 1);
      lw.thresholds.resize(d.units);
      for (auto& t : lw.thresholds) t = static_cast<long long>(rng() % 21) - 10;
    } else {
      lw.weights = RealTensor(Shape{pc.layers[i].weight_params});
      for (auto& v : lw.weights.data) v = u(rng);
      lw.biases.resize(d.units);
      for (auto& v : lw.biases) v = u(rng);
      if (d.has_batchnorm) {
        const std::size_t ch = shapes[i].back();
        lw.bn.mean.resize(ch);
        lw.bn.variance.resize(ch);
        lw.bn.scale.resize(ch);
        lw.bn.shift.resize(ch);
        for (auto& v : lw.bn.mean) v = u(rng);
        for (auto& v : lw.bn.variance) v = 0.5f + 0.5f * std::fabs(u(rng));
        for (auto& v : lw.bn.scale) v = 0.5f + std::fabs(u(rng));
        for (auto& v : lw.bn.shift) v = u(rng);
      }
    }
  }
  return m;
}

// A mixed-precision model small enough to execute: real conv with batch
// norm feeding a binary classifier.
NetworkSpec mixed_spec() {
  NetworkSpec s;
  s.name = "mixed";
  s.input_shape = {24, 2};
  s.layers = {
      {LayerKind::conv_spatial, 5, 0, 1, 3, LayerPrecision::float32, true,
       ActKind::hardtanh},
      {LayerKind::flatten},
      {LayerKind::dense, 0, 0, 1, 8, LayerPrecision::binary, false, ActKind::sign},
      {LayerKind::softmax, 0, 0, 1, 2, LayerPrecision::binary, false, ActKind::none},
  };
  return s;
}

// Rewrites the trailing checksum after a deliberate mutation so the
// mutation itself, not the checksum, is what the parser sees.
void refresh_checksum(std::vector<std::uint8_t>& buf) {
  const std::uint64_t h = detail::fnv1a(buf, buf.size() - 8);
  std::memcpy(buf.data() + buf.size() - 8, &h, 8);
}

}  // namespace

TEST_CASE("serialize/deserialize is a byte-exact round-trip") {
  const Model m = random_model(mixed_spec(), 31);
  const std::vector<std::uint8_t> buf = serialize_model(m);
  const Model back = deserialize_model(buf);
  CHECK(serialize_model(back) == buf);
  CHECK(back.spec == m.spec);
  CHECK(back.params[2].bin_weights == m.params[2].bin_weights);
  CHECK(back.params[2].thresholds == m.params[2].thresholds);
  CHECK(back.params[0].weights.data == m.params[0].weights.data);
  CHECK(back.params[0].bn.variance == m.params[0].bn.variance);
}

TEST_CASE("loaded models predict identically") {
  const Model m = random_model(mixed_spec(), 77);
  const Model back = deserialize_model(serialize_model(m));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int rep = 0; rep < 10; ++rep) {
    RealTensor x(Shape{24, 2});
    for (auto& v : x.data) v = u(rng);
    const Prediction a = forward(m, x);
    const Prediction b = forward(back, x);
    CHECK(a.label == b.label);
    CHECK(a.scores == b.scores);
  }
}

TEST_CASE("file round-trip") {
  const Model m = random_model(mixed_spec(), 13);
  const std::string path = "roundtrip_model.bnnm";
  save_model(path, m);
  const Model back = load_model(path);
  CHECK(serialize_model(back) == serialize_model(m));
  std::remove(path.c_str());
}

TEST_CASE("truncated files are corrupt") {
  std::vector<std::uint8_t> buf = serialize_model(random_model(mixed_spec(), 1));
  buf.resize(buf.size() - 9);
  CHECK_THROWS_AS(deserialize_model(buf), CorruptModel);
  CHECK_THROWS_AS(deserialize_model(std::vector<std::uint8_t>{}), CorruptModel);
}

TEST_CASE("bit rot fails the checksum") {
  std::vector<std::uint8_t> buf = serialize_model(random_model(mixed_spec(), 2));
  buf[buf.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(deserialize_model(buf), CorruptModel);
}

TEST_CASE("wrong magic is a format error") {
  std::vector<std::uint8_t> buf = serialize_model(random_model(mixed_spec(), 3));
  buf[0] = 'X';
  refresh_checksum(buf);
  CHECK_THROWS_AS(deserialize_model(buf), FormatError);
}

TEST_CASE("future versions are refused") {
  std::vector<std::uint8_t> buf = serialize_model(random_model(mixed_spec(), 4));
  buf[4] = 2;  // version field follows the magic
  refresh_checksum(buf);
  CHECK_THROWS_AS(deserialize_model(buf), UnsupportedVersion);
}

TEST_CASE("trailing bytes are a format error") {
  std::vector<std::uint8_t> buf = serialize_model(random_model(mixed_spec(), 5));
  buf.insert(buf.end() - 8, {0xde, 0xad});
  refresh_checksum(buf);
  CHECK_THROWS_AS(deserialize_model(buf), FormatError);
}

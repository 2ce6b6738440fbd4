#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "bnn/bitcore.hpp"

using namespace bnn;

namespace {

RealTensor random_pm(std::size_t n, std::mt19937_64& rng) {
  RealTensor t(Shape{n});
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Naive agreement count over unpacked elements — the oracle the packed
// word-level kernels are checked against.
std::size_t naive_agreements(const BitTensor& a, const BitTensor& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.get(i) == b.get(i) ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("pack follows the sign convention with sign(0) = +1") {
  RealTensor t(Shape{4}, {0.5f, -0.2f, 0.0f, -3.0f});
  BitTensor b = pack(t);
  CHECK(b.bit(0));
  CHECK_FALSE(b.bit(1));
  CHECK(b.bit(2));
  CHECK_FALSE(b.bit(3));
}

TEST_CASE("pack keeps pad bits of the last word zero") {
  RealTensor t(Shape{70});
  for (auto& v : t.data) v = 1.0f;
  BitTensor b = pack(t);
  REQUIRE(b.word_count() == 2);
  CHECK(b.words()[1] == ((Word{1} << 6) - 1));  // bits 64..69 set, rest zero
}

TEST_CASE("pack rejects non-finite entries") {
  RealTensor t(Shape{2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(pack(t), InvalidValue);
  t.data[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(pack(t), InvalidValue);
}

TEST_CASE("unpack maps bits to +-1 and handles the empty tensor") {
  BitTensor b(Shape{2});
  b.set(0, true);
  RealTensor r = unpack(b);
  CHECK(r.data[0] == 1.0f);
  CHECK(r.data[1] == -1.0f);

  BitTensor empty(Shape{0});
  CHECK(unpack(empty).size() == 0);
}

TEST_CASE("unpack(pack(t)) equals elementwise sign of t") {
  std::mt19937_64 rng(42);
  RealTensor t = random_pm(1000, rng);
  RealTensor r = unpack(pack(t));
  for (std::size_t i = 0; i < t.size(); ++i)
    CHECK(r.data[i] == static_cast<float>(sign_pm(t.data[i])));
}

TEST_CASE("pack(unpack(b)) is the identity on canonical tensors") {
  std::mt19937_64 rng(7);
  BitTensor b(Shape{513});
  for (std::size_t i = 0; i < b.size(); ++i) b.set(i, rng() & 1);
  CHECK(pack(unpack(b)) == b);
}

TEST_CASE("xnor_popcount identity and complement cases") {
  BitTensor a(Shape{64});
  for (std::size_t i = 0; i < 64; ++i) a.set(i, i % 3 == 0);
  CHECK(xnor_popcount(a, a) == 64);

  BitTensor na = a;
  for (std::size_t i = 0; i < 64; ++i) na.flip(i);
  CHECK(xnor_popcount(a, na) == 0);
}

TEST_CASE("xnor_popcount matches the naive loop oracle and is symmetric") {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng() % 1000;
    BitTensor a(Shape{n}), b(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
      a.set(i, rng() & 1);
      b.set(i, rng() & 1);
    }
    CHECK(xnor_popcount(a, b) == naive_agreements(a, b));
    CHECK(xnor_popcount(a, b) == xnor_popcount(b, a));
  }
}

TEST_CASE("xnor_popcount rejects mismatched shapes") {
  CHECK_THROWS_AS(xnor_popcount(BitTensor(Shape{3}), BitTensor(Shape{4})), ShapeError);
  // same element count, different shape
  CHECK_THROWS_AS(xnor_popcount(BitTensor(Shape{2, 3}), BitTensor(Shape{3, 2})),
                  ShapeError);
}

TEST_CASE("binary_dot hand cases") {
  BitTensor a(Shape{10});
  for (std::size_t i = 0; i < 10; ++i) a.set(i, i % 2 == 0);
  CHECK(binary_dot(a, a) == 10);

  // 5 agreements of 10 -> 0
  BitTensor b = a;
  for (std::size_t i = 0; i < 5; ++i) b.flip(i);
  CHECK(binary_dot(a, b) == 0);
}

TEST_CASE("binary_dot equals the exact float dot of unpacked operands") {
  std::mt19937_64 rng(1234);
  const std::size_t n = 257;
  BitTensor a(Shape{n}), b(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    a.set(i, rng() & 1);
    b.set(i, rng() & 1);
  }
  const RealTensor ua = unpack(a), ub = unpack(b);
  float dot = 0.0f;  // exact: +-1 sums stay far below 2^24
  for (std::size_t i = 0; i < n; ++i) dot += ua.data[i] * ub.data[i];
  CHECK(static_cast<float>(binary_dot(a, b)) == dot);
}

TEST_CASE("pad garbage past len never changes results after canonicalize") {
  std::mt19937_64 rng(5);
  BitTensor a(Shape{70}), b(Shape{70});
  for (std::size_t i = 0; i < 70; ++i) {
    a.set(i, rng() & 1);
    b.set(i, rng() & 1);
  }
  const std::size_t ref = xnor_popcount(a, b);
  BitTensor dirty = a;
  dirty.words().back() |= ~dirty.tail_mask();  // garbage in pad bits
  dirty.canonicalize();
  CHECK(dirty == a);
  CHECK(xnor_popcount(dirty, b) == ref);
}

TEST_CASE("span kernels agree with whole-tensor kernels on aligned spans") {
  std::mt19937_64 rng(77);
  const std::size_t n = 300;
  BitTensor a(Shape{n}), b(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    a.set(i, rng() & 1);
    b.set(i, rng() & 1);
  }
  CHECK(xnor_popcount_span(a.words(), 0, b.words(), 0, n) == xnor_popcount(a, b));
  CHECK(binary_dot_span(a.words(), 0, b.words(), 0, n) == binary_dot(a, b));
}

TEST_CASE("span kernels handle arbitrary unaligned offsets") {
  std::mt19937_64 rng(78);
  const std::size_t n = 521;
  BitTensor a(Shape{n}), b(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    a.set(i, rng() & 1);
    b.set(i, rng() & 1);
  }
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t len = 1 + rng() % 150;
    const std::size_t ao = rng() % (n - len);
    const std::size_t bo = rng() % (n - len);
    std::size_t naive = 0;
    for (std::size_t i = 0; i < len; ++i)
      naive += a.get(ao + i) == b.get(bo + i) ? 1 : 0;
    CHECK(xnor_popcount_span(a.words(), ao, b.words(), bo, len) == naive);
  }
}

TEST_CASE("read_word_at returns zero past the end of the word vector") {
  std::vector<Word> w = {~Word{0}};
  CHECK(read_word_at(w, 64) == 0);
  CHECK(read_word_at(w, 32) == (~Word{0} >> 32));
}

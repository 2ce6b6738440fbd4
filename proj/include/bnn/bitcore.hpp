#pragma once

// Packed {+1,-1} tensors and the word-level XNOR/popcount primitives the
// binary layers are built from. Bit value 1 encodes +1, bit 0 encodes -1.
// Element i lives at bit (i % 64) of word (i / 64), little-endian bit
// numbering. Pad bits past len are kept zero so equal tensors compare
// bit-identical.

#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "bnn/errors.hpp"

namespace bnn {

using Word = std::uint64_t;
inline constexpr std::size_t kWordBits = 64;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

struct RealTensor {
  Shape shape;
  std::vector<float> data;

  RealTensor() = default;
  explicit RealTensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}
  RealTensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("RealTensor: shape does not match data length");
  }

  std::size_t size() const { return data.size(); }
  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }
};

class BitTensor {
 public:
  BitTensor() : len_(0) {}

  explicit BitTensor(Shape shape)
      : shape_(std::move(shape)),
        len_(shape_numel(shape_)),
        words_((len_ + kWordBits - 1) / kWordBits, 0) {}

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return len_; }
  std::size_t word_count() const { return words_.size(); }
  const std::vector<Word>& words() const { return words_; }
  std::vector<Word>& words() { return words_; }

  bool bit(std::size_t i) const {
    return (words_[i / kWordBits] >> (i % kWordBits)) & 1u;
  }
  // +1 or -1 view of element i.
  int get(std::size_t i) const { return bit(i) ? +1 : -1; }

  void set(std::size_t i, bool one) {
    Word& w = words_[i / kWordBits];
    const Word mask = Word{1} << (i % kWordBits);
    w = one ? (w | mask) : (w & ~mask);
  }
  void set_sign(std::size_t i, int pm) { set(i, pm >= 0); }

  void flip(std::size_t i) { words_[i / kWordBits] ^= Word{1} << (i % kWordBits); }

  // Zeroes every bit past len in the last word.
  void canonicalize() {
    if (len_ % kWordBits != 0 && !words_.empty())
      words_.back() &= (Word{1} << (len_ % kWordBits)) - 1;
  }

  // Mask covering the valid bits of the last word.
  Word tail_mask() const {
    const std::size_t rem = len_ % kWordBits;
    return rem == 0 ? ~Word{0} : (Word{1} << rem) - 1;
  }

  friend bool operator==(const BitTensor& a, const BitTensor& b) {
    return a.shape_ == b.shape_ && a.words_ == b.words_;
  }

 private:
  Shape shape_;
  std::size_t len_;
  std::vector<Word> words_;
};

// sign with sign(0) = +1, the convention shared by pack, training and
// inference.
inline int sign_pm(float v) { return v >= 0.0f ? +1 : -1; }

inline BitTensor pack(const RealTensor& t) {
  BitTensor out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t.data[i]))
      throw InvalidValue("pack: non-finite entry at index " + std::to_string(i));
    if (t.data[i] >= 0.0f) out.set(i, true);
  }
  return out;
}

inline RealTensor unpack(const BitTensor& b) {
  RealTensor out(b.shape());
  for (std::size_t i = 0; i < b.size(); ++i)
    out.data[i] = b.bit(i) ? +1.0f : -1.0f;
  return out;
}

// Number of positions where a and b agree: popcount(NOT(a XOR b)) with the
// pad bits of the last word masked off.
inline std::size_t xnor_popcount(const BitTensor& a, const BitTensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("xnor_popcount: operand shapes differ");
  std::size_t agree = 0;
  const std::size_t nw = a.word_count();
  for (std::size_t w = 0; w < nw; ++w) {
    Word x = ~(a.words()[w] ^ b.words()[w]);
    if (w + 1 == nw) x &= a.tail_mask();
    agree += static_cast<std::size_t>(std::popcount(x));
  }
  return agree;
}

// Exact +-1 dot product: 2*matches - n.
inline long long binary_dot(const BitTensor& a, const BitTensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("binary_dot: operand shapes differ");
  return 2LL * static_cast<long long>(xnor_popcount(a, b)) -
         static_cast<long long>(a.size());
}

// Reads 64 bits of `words` starting at bit offset `off` (reads past the end
// of the vector are zero).
inline Word read_word_at(const std::vector<Word>& words, std::size_t off) {
  const std::size_t w = off / kWordBits;
  const std::size_t s = off % kWordBits;
  if (w >= words.size()) return 0;
  Word out = words[w] >> s;
  if (s != 0 && w + 1 < words.size()) out |= words[w + 1] << (kWordBits - s);
  return out;
}

// Agreement count between the bit spans a[a_off, a_off+n) and
// b[b_off, b_off+n). Conv kernels use this directly: a filter window is a
// contiguous run of input bits matched against a contiguous run of kernel
// bits, neither of which is word-aligned in general.
inline std::size_t xnor_popcount_span(const std::vector<Word>& a, std::size_t a_off,
                                      const std::vector<Word>& b, std::size_t b_off,
                                      std::size_t n) {
  std::size_t agree = 0;
  const std::size_t nw = (n + kWordBits - 1) / kWordBits;
  for (std::size_t w = 0; w < nw; ++w) {
    Word x = ~(read_word_at(a, a_off + w * kWordBits) ^
               read_word_at(b, b_off + w * kWordBits));
    if (w + 1 == nw) {
      const std::size_t rem = n % kWordBits;
      if (rem != 0) x &= (Word{1} << rem) - 1;
    }
    agree += static_cast<std::size_t>(std::popcount(x));
  }
  return agree;
}

inline long long binary_dot_span(const std::vector<Word>& a, std::size_t a_off,
                                 const std::vector<Word>& b, std::size_t b_off,
                                 std::size_t n) {
  return 2LL * static_cast<long long>(xnor_popcount_span(a, a_off, b, b_off, n)) -
         static_cast<long long>(n);
}

}  // namespace bnn

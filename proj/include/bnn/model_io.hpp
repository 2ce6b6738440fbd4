#pragma once

// Model file format, little-endian throughout:
//
//   magic "BNNM" | u32 version | u32 spec_len | spec text (netspec format)
//   per parameterized layer, in network order:
//     binary layer:  u64 weight_bits, packed words (bitcore order),
//                    u32 count, i64 thresholds (dot domain)
//     real layer:    u32 count, f32 weights, u32 count, f32 biases,
//                    [ u32 channels, f32 mean/variance/scale/shift, f32 eps ]
//   u64 FNV-1a checksum of all preceding bytes
//
// Blob sizes are rederived from the spec on load and must match exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/forward.hpp"
#include "bnn/netspec.hpp"

namespace bnn {

inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& buf, std::size_t n) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= buf[i];
    h *= 1099511628211ull;
  }
  return h;
}

struct ByteWriter {
  std::vector<std::uint8_t> buf;
  template <typename T>
  void put(T v) {
    std::uint8_t tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.insert(buf.end(), tmp, tmp + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
  template <typename T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw CorruptModel("model file truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_bytes(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw CorruptModel("model file truncated");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Model& model) {
  detail::ByteWriter w;
  w.put_bytes("BNNM", 4);
  w.put<std::uint32_t>(kModelVersion);

  std::ostringstream spec_os;
  write_spec_text(spec_os, model.spec);
  const std::string spec_text = spec_os.str();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec_text.size()));
  w.put_bytes(spec_text.data(), spec_text.size());

  const ParamCount pc = count_params(model.spec);
  const std::vector<Shape> shapes = infer_shapes(model.spec);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerDescriptor& d = model.spec.layers[i];
    if (!has_params(d.kind)) continue;
    const LayerWeights& lw = model.params[i];
    if (d.precision == LayerPrecision::binary) {
      if (lw.bin_weights.size() != pc.layers[i].weight_params)
        throw FormatError("serialize: binary weight count mismatch at layer " +
                          std::to_string(i));
      w.put<std::uint64_t>(lw.bin_weights.size());
      for (Word word : lw.bin_weights.words()) w.put<std::uint64_t>(word);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(lw.thresholds.size()));
      for (long long t : lw.thresholds) w.put<std::int64_t>(t);
    } else {
      if (lw.weights.size() != pc.layers[i].weight_params)
        throw FormatError("serialize: weight count mismatch at layer " +
                          std::to_string(i));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(lw.weights.size()));
      for (float v : lw.weights.data) w.put<float>(v);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(lw.biases.size()));
      for (float v : lw.biases) w.put<float>(v);
      if (d.has_batchnorm) {
        const std::uint32_t ch = static_cast<std::uint32_t>(shapes[i].back());
        if (lw.bn.scale.size() != ch)
          throw FormatError("serialize: batchnorm channel mismatch at layer " +
                            std::to_string(i));
        w.put<std::uint32_t>(ch);
        for (float v : lw.bn.mean) w.put<float>(v);
        for (float v : lw.bn.variance) w.put<float>(v);
        for (float v : lw.bn.scale) w.put<float>(v);
        for (float v : lw.bn.shift) w.put<float>(v);
        w.put<float>(lw.bn.epsilon);
      }
    }
  }
  w.put<std::uint64_t>(detail::fnv1a(w.buf, w.buf.size()));
  return w.buf;
}

inline Model deserialize_model(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 8 + 8) throw CorruptModel("model file truncated");
  std::uint64_t expect;
  std::memcpy(&expect, buf.data() + buf.size() - 8, 8);
  if (detail::fnv1a(buf, buf.size() - 8) != expect)
    throw CorruptModel("model file checksum mismatch");

  detail::ByteReader r{buf};
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "BNNM", 4) != 0) throw FormatError("not a model file");
  const std::uint32_t version = r.get<std::uint32_t>();
  if (version != kModelVersion)
    throw UnsupportedVersion("model file version " + std::to_string(version));

  const std::uint32_t spec_len = r.get<std::uint32_t>();
  std::string spec_text(spec_len, '\0');
  r.get_bytes(spec_text.data(), spec_len);
  std::istringstream spec_is(spec_text);

  Model model;
  model.spec = read_spec_text(spec_is);
  model.params.resize(model.spec.layers.size());

  const ParamCount pc = count_params(model.spec);
  const std::vector<Shape> shapes = infer_shapes(model.spec);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerDescriptor& d = model.spec.layers[i];
    if (!has_params(d.kind)) continue;
    LayerWeights& lw = model.params[i];
    if (d.precision == LayerPrecision::binary) {
      const std::uint64_t nbits = r.get<std::uint64_t>();
      if (nbits != pc.layers[i].weight_params)
        throw FormatError("binary weight count mismatch at layer " + std::to_string(i));
      lw.bin_weights = BitTensor(Shape{static_cast<std::size_t>(nbits)});
      for (auto& word : lw.bin_weights.words()) word = r.get<std::uint64_t>();
      lw.bin_weights.canonicalize();
      const std::uint32_t nt = r.get<std::uint32_t>();
      if (nt != d.units)
        throw FormatError("threshold count mismatch at layer " + std::to_string(i));
      lw.thresholds.resize(nt);
      for (auto& t : lw.thresholds) t = r.get<std::int64_t>();
    } else {
      const std::uint32_t nw = r.get<std::uint32_t>();
      if (nw != pc.layers[i].weight_params)
        throw FormatError("weight count mismatch at layer " + std::to_string(i));
      lw.weights = RealTensor(Shape{nw});
      for (auto& v : lw.weights.data) v = r.get<float>();
      const std::uint32_t nb = r.get<std::uint32_t>();
      if (nb != d.units)
        throw FormatError("bias count mismatch at layer " + std::to_string(i));
      lw.biases.resize(nb);
      for (auto& v : lw.biases) v = r.get<float>();
      if (d.has_batchnorm) {
        const std::uint32_t ch = r.get<std::uint32_t>();
        if (ch != shapes[i].back())
          throw FormatError("batchnorm channel mismatch at layer " + std::to_string(i));
        lw.bn.mean.resize(ch);
        lw.bn.variance.resize(ch);
        lw.bn.scale.resize(ch);
        lw.bn.shift.resize(ch);
        for (auto& v : lw.bn.mean) v = r.get<float>();
        for (auto& v : lw.bn.variance) v = r.get<float>();
        for (auto& v : lw.bn.scale) v = r.get<float>();
        for (auto& v : lw.bn.shift) v = r.get<float>();
        lw.bn.epsilon = r.get<float>();
      }
    }
  }
  if (r.pos != buf.size() - 8) throw FormatError("model file has trailing bytes");
  return model;
}

inline void save_model(const std::string& path, const Model& model) {
  const std::vector<std::uint8_t> buf = serialize_model(model);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open model file: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
  return deserialize_model(buf);
}

}  // namespace bnn

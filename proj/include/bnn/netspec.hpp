#pragma once

// Network architecture descriptors: shape inference, parameter counting,
// filter augmentation, the built-in models and the structured-text spec
// format. Descriptors are data only; execution lives in forward.hpp.

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/bitcore.hpp"
#include "bnn/errors.hpp"

namespace bnn {

enum class LayerKind {
  conv_temporal,
  conv_spatial,
  conv2d,
  depthwise_conv,
  pointwise_conv,
  avg_pool,
  max_pool,
  flatten,
  dense,
  softmax,  // dense projection to the class count followed by softmax
};

enum class LayerPrecision { float32, int8, binary };

enum class ActKind { none, relu, hardtanh, sign };

struct LayerDescriptor {
  LayerKind kind = LayerKind::dense;
  std::size_t kernel = 0;   // temporal extent / square 2D kernel / pool window
  std::size_t padding = 0;
  std::size_t stride = 1;
  std::size_t units = 0;    // conv filters or dense/softmax units
  LayerPrecision precision = LayerPrecision::float32;
  bool has_batchnorm = false;
  ActKind activation = ActKind::none;

  friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

struct NetworkSpec {
  std::string name;
  Shape input_shape;        // [T, C] for time signals, [H, W, C] for images
  bool image_input = false; // pooling covers both spatial dims when set
  std::size_t augmentation = 1;
  std::vector<LayerDescriptor> layers;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv_temporal: return "conv_temporal";
    case LayerKind::conv_spatial: return "conv_spatial";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::depthwise_conv: return "depthwise_conv";
    case LayerKind::pointwise_conv: return "pointwise_conv";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

inline bool is_conv(LayerKind k) {
  return k == LayerKind::conv_temporal || k == LayerKind::conv_spatial ||
         k == LayerKind::conv2d || k == LayerKind::depthwise_conv ||
         k == LayerKind::pointwise_conv;
}

inline bool has_params(LayerKind k) {
  return is_conv(k) || k == LayerKind::dense || k == LayerKind::softmax;
}

// ---------------------------------------------------------------------------
// Shape inference

inline std::size_t strided_out_len(std::size_t T, std::size_t k, std::size_t p,
                                   std::size_t s, std::size_t layer_index) {
  if (T + 2 * p < k)
    throw ShapeError("layer " + std::to_string(layer_index) +
                     ": kernel exceeds padded input");
  return (T + 2 * p - k) / s + 1;
}

inline std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  std::vector<Shape> out;
  out.reserve(spec.layers.size());
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDescriptor& L = spec.layers[i];
    const std::string at = "layer " + std::to_string(i);
    switch (L.kind) {
      case LayerKind::conv_temporal: {
        if (cur.size() != 2)
          throw ShapeError(at + ": conv_temporal expects a [T, C] input");
        cur = {strided_out_len(cur[0], L.kernel, L.padding, L.stride, i), cur[1], L.units};
        break;
      }
      case LayerKind::conv_spatial: {
        if (cur.size() != 2 && cur.size() != 3)
          throw ShapeError(at + ": conv_spatial expects a [T, C] or [T, C, F] input");
        cur = {strided_out_len(cur[0], L.kernel, L.padding, L.stride, i), 1, L.units};
        break;
      }
      case LayerKind::conv2d: {
        if (cur.size() != 3)
          throw ShapeError(at + ": conv2d expects an [H, W, C] input");
        cur = {strided_out_len(cur[0], L.kernel, L.padding, L.stride, i),
               strided_out_len(cur[1], L.kernel, L.padding, L.stride, i), L.units};
        break;
      }
      case LayerKind::depthwise_conv: {
        if (cur.size() != 3)
          throw ShapeError(at + ": depthwise_conv expects an [H, W, C] input");
        cur = {strided_out_len(cur[0], L.kernel, L.padding, L.stride, i),
               strided_out_len(cur[1], L.kernel, L.padding, L.stride, i), cur[2]};
        break;
      }
      case LayerKind::pointwise_conv: {
        if (cur.size() != 3)
          throw ShapeError(at + ": pointwise_conv expects an [H, W, C] input");
        cur = {cur[0], cur[1], L.units};
        break;
      }
      case LayerKind::avg_pool:
      case LayerKind::max_pool: {
        const std::size_t s = L.stride == 0 ? L.kernel : L.stride;
        if (cur.empty()) throw ShapeError(at + ": pool on a scalar input");
        Shape next = cur;
        next[0] = strided_out_len(cur[0], L.kernel, 0, s, i);
        if (spec.image_input) {
          if (cur.size() < 2) throw ShapeError(at + ": 2D pool expects [H, W, C]");
          next[1] = strided_out_len(cur[1], L.kernel, 0, s, i);
        }
        cur = next;
        break;
      }
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::dense:
      case LayerKind::softmax:
        if (cur.size() != 1)
          throw ShapeError(at + ": dense expects a flattened input");
        cur = {L.units};
        break;
    }
    out.push_back(cur);
  }
  return out;
}

inline std::string format_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter counting. weight_params carries the weights proper; aux_params
// carries biases/thresholds plus batch-norm parameters (four reals per
// channel), which stay real-valued regardless of weight precision.

struct LayerParams {
  std::size_t weight_params = 0;
  std::size_t aux_params = 0;
  bool classifier = false;  // at or after the first flatten
  std::size_t total() const { return weight_params + aux_params; }
};

struct ParamCount {
  std::vector<LayerParams> layers;
  std::size_t total_weights = 0;
  std::size_t total_aux = 0;
  std::size_t feature_weights = 0;
  std::size_t classifier_weights = 0;
  std::size_t total() const { return total_weights + total_aux; }
};

inline ParamCount count_params(const NetworkSpec& spec) {
  ParamCount pc;
  Shape cur = spec.input_shape;
  const std::vector<Shape> shapes = infer_shapes(spec);
  bool past_flatten = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDescriptor& L = spec.layers[i];
    LayerParams lp;
    switch (L.kind) {
      case LayerKind::conv_temporal:
        lp.weight_params = L.units * L.kernel;
        lp.aux_params = L.units;
        break;
      case LayerKind::conv_spatial: {
        const std::size_t depth = cur.size() == 3 ? cur[1] * cur[2] : cur[1];
        lp.weight_params = L.units * L.kernel * depth;
        lp.aux_params = L.units;
        break;
      }
      case LayerKind::conv2d:
        lp.weight_params = L.units * L.kernel * L.kernel * cur[2];
        break;
      case LayerKind::depthwise_conv:
        lp.weight_params = L.kernel * L.kernel * cur[2];
        break;
      case LayerKind::pointwise_conv:
        lp.weight_params = L.units * cur[2];
        break;
      case LayerKind::dense:
      case LayerKind::softmax:
        lp.weight_params = L.units * cur[0];
        lp.aux_params = L.units;
        break;
      case LayerKind::flatten:
        past_flatten = true;
        break;
      case LayerKind::avg_pool:
      case LayerKind::max_pool:
        break;
    }
    if (L.has_batchnorm) lp.aux_params += 4 * shapes[i].back();
    lp.classifier = past_flatten;
    pc.total_weights += lp.weight_params;
    pc.total_aux += lp.aux_params;
    (past_flatten ? pc.classifier_weights : pc.feature_weights) += lp.weight_params;
    pc.layers.push_back(lp);
    cur = shapes[i];
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Filter augmentation: every conv filter count is multiplied by k, and
// downstream shapes (flatten width, dense fan-in) follow via re-inference.

inline NetworkSpec augment(const NetworkSpec& spec, std::size_t k) {
  if (k < 1) throw CapacityError("augment: factor must be >= 1");
  NetworkSpec out = spec;
  out.augmentation = spec.augmentation * k;
  for (auto& L : out.layers) {
    if (is_conv(L.kind) && L.kind != LayerKind::depthwise_conv) {
      if (L.units > (std::size_t(-1) / 2) / k)
        throw CapacityError("augment: filter count overflow");
      L.units *= k;
    }
  }
  infer_shapes(out);  // fails loudly if any dimension became inconsistent
  return out;
}

// ---------------------------------------------------------------------------
// Built-in models

namespace detail {

inline LayerDescriptor conv_t(std::size_t f, std::size_t k, std::size_t p, ActKind a,
                              bool bn = false) {
  return {LayerKind::conv_temporal, k, p, 1, f, LayerPrecision::float32, bn, a};
}
inline LayerDescriptor conv_s(std::size_t f, std::size_t k, ActKind a, bool bn = false) {
  return {LayerKind::conv_spatial, k, 0, 1, f, LayerPrecision::float32, bn, a};
}
inline LayerDescriptor pool(LayerKind kind, std::size_t w, std::size_t s) {
  return {kind, w, 0, s, 0, LayerPrecision::float32, false, ActKind::none};
}
inline LayerDescriptor dense(std::size_t u, ActKind a, bool bn = false) {
  return {LayerKind::dense, 0, 0, 1, u, LayerPrecision::float32, bn, a};
}

}  // namespace detail

inline NetworkSpec builtin_eeg() {
  NetworkSpec s;
  s.name = "eeg_dose";
  s.input_shape = {960, 64};
  s.layers = {
      detail::conv_t(40, 30, 15, ActKind::relu),
      detail::conv_s(40, 1, ActKind::relu),
      detail::pool(LayerKind::avg_pool, 30, 15),
      {LayerKind::flatten},
      detail::dense(80, ActKind::relu),
      {LayerKind::softmax, 0, 0, 1, 2, LayerPrecision::float32, false, ActKind::none},
  };
  return s;
}

inline NetworkSpec builtin_ecg() {
  NetworkSpec s;
  s.name = "ecg_custom";
  s.input_shape = {750, 12};
  s.layers = {
      detail::conv_s(32, 13, ActKind::hardtanh, true),
      detail::pool(LayerKind::max_pool, 2, 2),
      detail::conv_s(32, 11, ActKind::hardtanh, true),
      detail::pool(LayerKind::max_pool, 2, 2),
      detail::conv_s(32, 9, ActKind::hardtanh, true),
      detail::conv_s(32, 7, ActKind::hardtanh, true),
      detail::conv_s(32, 5, ActKind::hardtanh, true),
      {LayerKind::flatten},
      detail::dense(75, ActKind::hardtanh, true),
      {LayerKind::softmax, 0, 0, 1, 2, LayerPrecision::float32, false, ActKind::none},
  };
  return s;
}

inline NetworkSpec builtin_mobilenet_v1(std::size_t binary_classifier_width = 0) {
  NetworkSpec s;
  s.name = binary_classifier_width ? "mobilenet_v1_binclf" : "mobilenet_v1_224";
  s.input_shape = {224, 224, 3};
  s.image_input = true;
  auto conv = [](std::size_t f, std::size_t stride) {
    return LayerDescriptor{LayerKind::conv2d, 3, 1, stride, f,
                           LayerPrecision::float32, true, ActKind::relu};
  };
  auto dw = [](std::size_t stride) {
    return LayerDescriptor{LayerKind::depthwise_conv, 3, 1, stride, 0,
                           LayerPrecision::float32, true, ActKind::relu};
  };
  auto pw = [](std::size_t f) {
    return LayerDescriptor{LayerKind::pointwise_conv, 1, 0, 1, f,
                           LayerPrecision::float32, true, ActKind::relu};
  };
  s.layers.push_back(conv(32, 2));
  const std::size_t pw_filters[] = {64, 128, 128, 256, 256, 512, 512,
                                    512, 512, 512, 512, 1024, 1024};
  const std::size_t dw_strides[] = {1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1};
  for (std::size_t b = 0; b < 13; ++b) {
    s.layers.push_back(dw(dw_strides[b]));
    s.layers.push_back(pw(pw_filters[b]));
  }
  s.layers.push_back(detail::pool(LayerKind::avg_pool, 7, 7));
  s.layers.push_back({LayerKind::flatten});
  if (binary_classifier_width) {
    s.layers.push_back({LayerKind::dense, 0, 0, 1, binary_classifier_width,
                        LayerPrecision::binary, false, ActKind::sign});
    s.layers.push_back({LayerKind::softmax, 0, 0, 1, 1000, LayerPrecision::binary,
                        false, ActKind::none});
  } else {
    s.layers.push_back({LayerKind::softmax, 0, 0, 1, 1000, LayerPrecision::float32,
                        false, ActKind::none});
  }
  return s;
}

// Hidden width 2812 puts the two-layer binary classifier at 5.69M binary
// weights, the derived default.
inline constexpr std::size_t kMobilenetBinClfWidth = 2812;

inline NetworkSpec builtin(const std::string& name) {
  if (name == "eeg_dose") return builtin_eeg();
  if (name == "ecg_custom") return builtin_ecg();
  if (name == "mobilenet_v1_224") return builtin_mobilenet_v1();
  if (name == "mobilenet_v1_binclf") return builtin_mobilenet_v1(kMobilenetBinClfWidth);
  throw UnknownModel("unknown built-in model: " + name);
}

// ---------------------------------------------------------------------------
// Precision strategies: rewrite descriptor precisions in place.

enum class Strategy { real, all_binary, binary_classifier };

inline NetworkSpec apply_strategy(const NetworkSpec& spec, Strategy st,
                                  bool binarize_first_layer = true) {
  NetworkSpec out = spec;
  bool past_flatten = false;
  bool first_param = true;
  for (auto& L : out.layers) {
    if (L.kind == LayerKind::flatten) past_flatten = true;
    if (!has_params(L.kind)) continue;
    bool binarize =
        st == Strategy::all_binary || (st == Strategy::binary_classifier && past_flatten);
    if (first_param && !binarize_first_layer) binarize = false;
    first_param = false;
    if (binarize) {
      L.precision = LayerPrecision::binary;
      L.activation = (L.kind == LayerKind::softmax || L.activation == ActKind::none)
                         ? ActKind::none
                         : ActKind::sign;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structured-text spec format

inline const char* precision_name(LayerPrecision p) {
  switch (p) {
    case LayerPrecision::float32: return "float32";
    case LayerPrecision::int8: return "int8";
    case LayerPrecision::binary: return "binary";
  }
  return "?";
}

inline const char* act_name(ActKind a) {
  switch (a) {
    case ActKind::none: return "none";
    case ActKind::relu: return "relu";
    case ActKind::hardtanh: return "hardtanh";
    case ActKind::sign: return "sign";
  }
  return "?";
}

inline void write_spec_text(std::ostream& os, const NetworkSpec& spec) {
  os << "bnnspec v1\n";
  os << "name " << spec.name << "\n";
  os << "input";
  for (std::size_t d : spec.input_shape) os << " " << d;
  os << "\n";
  os << "image_input " << (spec.image_input ? 1 : 0) << "\n";
  os << "augmentation " << spec.augmentation << "\n";
  for (const auto& L : spec.layers) {
    os << "layer kind=" << kind_name(L.kind) << " kernel=" << L.kernel
       << " pad=" << L.padding << " stride=" << L.stride << " units=" << L.units
       << " precision=" << precision_name(L.precision)
       << " bn=" << (L.has_batchnorm ? 1 : 0) << " act=" << act_name(L.activation)
       << "\n";
  }
  os << "end\n";
}

namespace detail {

inline LayerKind parse_kind(const std::string& s) {
  for (LayerKind k :
       {LayerKind::conv_temporal, LayerKind::conv_spatial, LayerKind::conv2d,
        LayerKind::depthwise_conv, LayerKind::pointwise_conv, LayerKind::avg_pool,
        LayerKind::max_pool, LayerKind::flatten, LayerKind::dense, LayerKind::softmax})
    if (s == kind_name(k)) return k;
  throw ParseError("unknown layer kind: " + s);
}

inline LayerPrecision parse_precision(const std::string& s) {
  if (s == "float32") return LayerPrecision::float32;
  if (s == "int8") return LayerPrecision::int8;
  if (s == "binary") return LayerPrecision::binary;
  throw ParseError("unknown precision: " + s);
}

inline ActKind parse_act(const std::string& s) {
  if (s == "none") return ActKind::none;
  if (s == "relu") return ActKind::relu;
  if (s == "hardtanh") return ActKind::hardtanh;
  if (s == "sign") return ActKind::sign;
  throw ParseError("unknown activation: " + s);
}

}  // namespace detail

inline NetworkSpec read_spec_text(std::istream& is) {
  NetworkSpec spec;
  std::string line;
  if (!std::getline(is, line) || line != "bnnspec v1")
    throw ParseError("spec text: missing 'bnnspec v1' header");
  bool ended = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    } else if (key == "name") {
      ls >> spec.name;
    } else if (key == "input") {
      std::size_t d;
      spec.input_shape.clear();
      while (ls >> d) spec.input_shape.push_back(d);
    } else if (key == "image_input") {
      int v = 0;
      ls >> v;
      spec.image_input = v != 0;
    } else if (key == "augmentation") {
      ls >> spec.augmentation;
    } else if (key == "layer") {
      LayerDescriptor L;
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("spec text: bad field " + kv);
        const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "kind") L.kind = detail::parse_kind(v);
        else if (k == "kernel") L.kernel = std::stoul(v);
        else if (k == "pad") L.padding = std::stoul(v);
        else if (k == "stride") L.stride = std::stoul(v);
        else if (k == "units") L.units = std::stoul(v);
        else if (k == "precision") L.precision = detail::parse_precision(v);
        else if (k == "bn") L.has_batchnorm = v != "0";
        else if (k == "act") L.activation = detail::parse_act(v);
        else throw ParseError("spec text: unknown field " + k);
      }
      spec.layers.push_back(L);
    } else {
      throw ParseError("spec text: unknown key " + key);
    }
  }
  if (!ended) throw ParseError("spec text: missing 'end'");
  return spec;
}

}  // namespace bnn

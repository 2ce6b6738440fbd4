#pragma once

// Desk-scale training: straight-through-estimator gradients for binary
// layers, Adam, k-fold cross-validation, CSV ingestion and synthetic
// datasets.
//
// Binary layers keep real-valued latent weights clipped to [-1, +1]; the
// forward pass uses their signs. The STE surrogate is the clipped
// identity: gradients pass where the latent weight lies in [-1, +1], and
// sign activations use a hardtanh surrogate scaled by sqrt(fan-in).
// Training runs a float emulation of the +-1 arithmetic, so accumulations
// are exact small integers; after training the learned real thresholds
// are snapped to integers, which makes the emulated forward and the
// packed XNOR/popcount path agree bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/bitcore.hpp"
#include "bnn/errors.hpp"
#include "bnn/forward.hpp"
#include "bnn/layers.hpp"
#include "bnn/netspec.hpp"

namespace bnn {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch = 16;
  double noise_sigma = 0.0;
  double keep_conv = 1.0;        // dropout keep probability in conv layers
  double keep_classifier = 1.0;  // and in the classifier
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  bool binarize_first_layer = true;
};

struct Dataset {
  std::vector<RealTensor> samples;  // each [T, C]
  std::vector<std::size_t> labels;
  std::size_t classes = 2;
  bool normalized = false;
  std::vector<float> channel_mean, channel_std;

  std::size_t size() const { return samples.size(); }
};

// ---------------------------------------------------------------------------
// Normalization

struct ChannelStats {
  std::vector<float> mean, stddev;
};

inline ChannelStats channel_stats(const Dataset& ds, const std::vector<std::size_t>& idx) {
  if (ds.samples.empty()) throw ConfigError("channel_stats: empty dataset");
  const std::size_t C = ds.samples[0].shape.size() >= 2 ? ds.samples[0].shape[1] : 1;
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  std::size_t per_ch = 0;
  for (std::size_t s : idx) {
    const RealTensor& x = ds.samples[s];
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum[i % C] += x.data[i];
      sq[i % C] += static_cast<double>(x.data[i]) * x.data[i];
    }
    per_ch += x.size() / C;
  }
  ChannelStats st;
  st.mean.resize(C);
  st.stddev.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double m = sum[c] / static_cast<double>(per_ch);
    const double var = sq[c] / static_cast<double>(per_ch) - m * m;
    st.mean[c] = static_cast<float>(m);
    st.stddev[c] = static_cast<float>(std::sqrt(std::max(var, 0.0)) + 1e-8);
  }
  return st;
}

inline Dataset apply_normalization(const Dataset& ds, const ChannelStats& st) {
  Dataset out = ds;
  const std::size_t C = st.mean.size();
  for (auto& x : out.samples)
    for (std::size_t i = 0; i < x.size(); ++i)
      x.data[i] = (x.data[i] - st.mean[i % C]) / st.stddev[i % C];
  out.normalized = true;
  out.channel_mean = st.mean;
  out.channel_std = st.stddev;
  return out;
}

// Per-channel normalization over the whole dataset (for split-aware
// normalization compute stats on the training indices and apply to both).
inline Dataset normalize_per_channel(const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return apply_normalization(ds, channel_stats(ds, all));
}

// ---------------------------------------------------------------------------
// Noise augmentation: fresh zero-mean Gaussian noise per call.

inline void augment_noise(std::vector<RealTensor>& batch, double sigma,
                          std::mt19937_64& rng) {
  if (sigma < 0) throw ConfigError("augment_noise: sigma must be >= 0");
  if (sigma == 0) return;
  std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma));
  for (auto& x : batch)
    for (auto& v : x.data) v += noise(rng);
}

// ---------------------------------------------------------------------------
// Synthetic datasets

enum class SyntheticTask { separable, xor_like, conv_pattern };

inline Dataset make_synthetic(SyntheticTask task, std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ConfigError("make_synthetic: need at least 10 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::uniform_int_distribution<int> coin(0, 1);

  Dataset ds;
  ds.classes = 2;

  if (task == SyntheticTask::separable || task == SyntheticTask::xor_like) {
    const std::size_t T = 16, C = 2, D = T * C;
    RealTensor p1(Shape{T, C}), p2(Shape{T, C});
    for (std::size_t i = 0; i < D; ++i) {
      p1.data[i] = coin(rng) ? 1.0f : -1.0f;
      p2.data[i] = coin(rng) ? 1.0f : -1.0f;
    }
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t label = s % 2;  // balanced within one sample
      RealTensor x(Shape{T, C});
      if (task == SyntheticTask::separable) {
        const float sgn = label ? 1.0f : -1.0f;
        for (std::size_t i = 0; i < D; ++i)
          x.data[i] = 0.8f * sgn * p1.data[i] + 0.5f * gauss(rng);
      } else {
        const int a = coin(rng);
        const int b = a ^ static_cast<int>(label);  // label = a XOR b
        for (std::size_t i = 0; i < D; ++i)
          x.data[i] = 0.7f * (a ? 1.0f : -1.0f) * p1.data[i] +
                      0.7f * (b ? 1.0f : -1.0f) * p2.data[i] + 0.3f * gauss(rng);
      }
      ds.samples.push_back(std::move(x));
      ds.labels.push_back(label);
    }
    return ds;
  }

  // conv_pattern: a class-dependent temporal motif at a random position
  const std::size_t T = 32, C = 1, M = 7;
  const float motif0[M] = {1.5f, 1.5f, 1.5f, -1.5f, -1.5f, -1.5f, 1.5f};
  const float motif1[M] = {-1.5f, 1.5f, -1.5f, 1.5f, -1.5f, 1.5f, -1.5f};
  std::uniform_int_distribution<std::size_t> pos(0, T - M);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t label = s % 2;
    RealTensor x(Shape{T, C});
    for (auto& v : x.data) v = 0.4f * gauss(rng);
    const std::size_t at = pos(rng);
    for (std::size_t k = 0; k < M; ++k)
      x.data[at + k] += label ? motif1[k] : motif0[k];
    ds.samples.push_back(std::move(x));
    ds.labels.push_back(label);
  }
  return ds;
}

// Small architectures for the synthetic tasks.
inline NetworkSpec synthetic_dense_spec() {
  NetworkSpec s;
  s.name = "synthetic_dense";
  s.input_shape = {16, 2};
  s.layers = {
      {LayerKind::flatten},
      {LayerKind::dense, 0, 0, 1, 16, LayerPrecision::float32, false, ActKind::hardtanh},
      {LayerKind::softmax, 0, 0, 1, 2, LayerPrecision::float32, false, ActKind::none},
  };
  return s;
}

inline NetworkSpec synthetic_conv_spec(std::size_t filters = 4) {
  NetworkSpec s;
  s.name = "synthetic_conv";
  s.input_shape = {32, 1};
  s.layers = {
      {LayerKind::conv_spatial, 7, 0, 1, filters, LayerPrecision::float32, false,
       ActKind::hardtanh},
      {LayerKind::max_pool, 2, 0, 2, 0, LayerPrecision::float32, false, ActKind::none},
      {LayerKind::flatten},
      {LayerKind::dense, 0, 0, 1, 16, LayerPrecision::float32, false, ActKind::hardtanh},
      {LayerKind::softmax, 0, 0, 1, 2, LayerPrecision::float32, false, ActKind::none},
  };
  return s;
}

// ---------------------------------------------------------------------------
// CSV ingestion. One sample per row: label, then T*C values time-major.

struct CsvLayout {
  std::size_t channels = 1;
};

inline Dataset load_csv_signals(const std::string& path, const CsvLayout& layout) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open CSV file: " + path);
  Dataset ds;
  std::string line;
  std::size_t lineno = 0, expected_cols = 0;
  std::size_t max_label = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<float> vals;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw ParseError("CSV line " + std::to_string(lineno) + ": bad value '" + cell + "'");
      }
    }
    if (vals.size() < 2)
      throw ParseError("CSV line " + std::to_string(lineno) + ": missing label or data");
    if (expected_cols == 0) {
      expected_cols = vals.size();
      if ((expected_cols - 1) % layout.channels != 0)
        throw ParseError("CSV line 1: " + std::to_string(expected_cols - 1) +
                         " values not divisible by " + std::to_string(layout.channels) +
                         " channels");
    } else if (vals.size() != expected_cols) {
      throw ParseError("CSV line " + std::to_string(lineno) + ": ragged row (" +
                       std::to_string(vals.size()) + " vs " +
                       std::to_string(expected_cols) + " columns)");
    }
    const float lf = vals[0];
    if (lf < 0 || lf != std::floor(lf))
      throw ParseError("CSV line " + std::to_string(lineno) + ": label must be a "
                       "non-negative integer");
    const std::size_t label = static_cast<std::size_t>(lf);
    max_label = std::max(max_label, label);
    const std::size_t T = (vals.size() - 1) / layout.channels;
    RealTensor x(Shape{T, layout.channels});
    std::copy(vals.begin() + 1, vals.end(), x.data.begin());
    ds.samples.push_back(std::move(x));
    ds.labels.push_back(label);
  }
  if (ds.samples.empty()) throw ParseError("CSV file has no samples: " + path);
  ds.classes = max_label + 1;
  return ds;
}

inline void save_csv_signals(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open CSV file for writing: " + path);
  os.precision(9);
  for (std::size_t s = 0; s < ds.size(); ++s) {
    os << ds.labels[s];
    for (float v : ds.samples[s].data) os << "," << v;
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Trainer

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> train_accuracy;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

class Trainer {
 public:
  Trainer(const NetworkSpec& spec, const TrainConfig& cfg) : spec_(spec), cfg_(cfg) {
    const std::vector<Shape> shapes = infer_shapes(spec);
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerDescriptor& d = spec.layers[i];
      if (d.has_batchnorm)
        throw ConfigError("trainer: batch-norm layers are not trainable here; "
                          "fold or drop batch norm first");
      TLayer L;
      L.d = d;
      L.in_shape = cur;
      L.out_shape = shapes[i];
      layers_.push_back(std::move(L));
      cur = shapes[i];
    }
    init_params();
  }

  TrainHistory fit(const Dataset& ds) {
    if (ds.size() == 0) throw ConfigError("fit: empty dataset");
    if (cfg_.batch == 0 || cfg_.batch > ds.size())
      throw ConfigError("fit: batch size must be in [1, n]");
    std::mt19937_64 rng(cfg_.seed);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);

    TrainHistory hist;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg_.batch) {
        const std::size_t bend = std::min(order.size(), start + cfg_.batch);
        zero_grads();
        for (std::size_t bi = start; bi < bend; ++bi) {
          RealTensor x = ds.samples[order[bi]];
          if (cfg_.noise_sigma > 0) {
            std::normal_distribution<float> noise(0.0f,
                                                  static_cast<float>(cfg_.noise_sigma));
            for (auto& v : x.data) v += noise(rng);
          }
          const auto [loss, pred] =
              forward_backward(x, ds.labels[order[bi]], /*train=*/true, rng);
          loss_sum += loss;
          correct += pred == ds.labels[order[bi]] ? 1 : 0;
        }
        // Cross-entropy over sane logits stays many orders of magnitude
        // below 1e12; beyond that the run is unrecoverable even before the
        // float path produces an inf or nan.
        if (!std::isfinite(loss_sum) || loss_sum > 1e12)
          throw TrainingDiverged("loss diverged", epoch);
        adam_step(bend - start);
      }
      hist.loss.push_back(loss_sum / static_cast<double>(ds.size()));
      hist.train_accuracy.push_back(static_cast<double>(correct) /
                                    static_cast<double>(ds.size()));
    }
    finalize();
    hist.final_accuracy = hist.train_accuracy.empty() ? 0.0 : hist.train_accuracy.back();
    for (std::size_t e = 0; e < hist.train_accuracy.size(); ++e)
      if (hist.train_accuracy[e] > hist.best_accuracy) {
        hist.best_accuracy = hist.train_accuracy[e];
        hist.best_epoch = e;
      }
    return hist;
  }

  // Float-emulated prediction (no dropout, no noise).
  Prediction predict(const RealTensor& x) const {
    RealTensor logits = run_forward(x, /*train=*/false, nullptr, nullptr);
    Prediction p;
    p.scores = logits.data;
    p.label = detail::argmax(p.scores);
    return p;
  }

  double evaluate(const Dataset& ds) const {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      correct += predict(ds.samples[i]).label == ds.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(ds.size());
  }

  // Parameter and gradient access (setup and gradient checking).
  const RealTensor& latent_weights(std::size_t layer) const { return layers_.at(layer).W; }
  const std::vector<float>& latent_bias(std::size_t layer) const {
    return layers_.at(layer).b;
  }
  void set_latent(std::size_t layer, RealTensor W, std::vector<float> b) {
    TLayer& L = layers_.at(layer);
    if (W.size() != L.W.size() || b.size() != L.b.size())
      throw ShapeError("set_latent: parameter size mismatch");
    L.W = std::move(W);
    L.b = std::move(b);
  }

  struct LayerGradients {
    std::vector<float> dW, db;
  };

  // Accumulated gradients of the loss at one sample (no dropout, no noise).
  std::vector<LayerGradients> compute_gradients(const RealTensor& x, std::size_t label) {
    zero_grads();
    std::mt19937_64 unused(0);
    forward_backward(x, label, /*train=*/false, unused);
    std::vector<LayerGradients> out;
    for (const auto& L : layers_) out.push_back({L.gW, L.gb});
    return out;
  }

  void zero_gradients() { zero_grads(); }
  void apply_step(std::size_t batch_n) { adam_step(batch_n); }

  // Packs binary layers and exports the runtime model. Call after fit()
  // (fit ends with finalize(), which snaps binary thresholds to integers).
  Model export_model() const {
    Model m;
    m.spec = spec_;
    m.params.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const TLayer& L = layers_[i];
      if (!has_params(L.d.kind)) continue;
      LayerWeights& lw = m.params[i];
      if (L.binary()) {
        lw.bin_weights = BitTensor(Shape{L.W.size()});
        for (std::size_t j = 0; j < L.W.size(); ++j)
          lw.bin_weights.set(j, L.W.data[j] >= 0.0f);
        lw.thresholds.resize(L.b.size());
        for (std::size_t j = 0; j < L.b.size(); ++j)
          lw.thresholds[j] = std::llround(L.b[j]);
      } else {
        lw.weights = L.W;
        lw.biases.assign(L.b.begin(), L.b.end());
      }
    }
    return m;
  }

 private:
  struct TLayer {
    LayerDescriptor d;
    Shape in_shape, out_shape;
    RealTensor W;
    std::vector<float> b;
    // gradients and Adam state
    std::vector<float> gW, gb, mW, vW, mb, vb;
    std::size_t fan_in = 0;

    bool binary() const { return d.precision == LayerPrecision::binary; }
  };

  struct Cache {
    RealTensor in;       // layer input as propagated (real or +-1 emulation)
    RealTensor in_bin;   // binarized input of a binary layer
    RealTensor pre;      // pre-activation (for deferred pooling: pooled sums)
    RealTensor out;
    std::vector<float> drop;  // inverted-dropout scale per element (empty: none)
    std::vector<std::size_t> argmax;  // max-pool routing
    bool consumed_pool = false;       // this conv absorbed the following avg_pool
    bool skipped = false;             // an avg_pool absorbed by the conv before it
  };

  NetworkSpec spec_;
  TrainConfig cfg_;
  std::vector<TLayer> layers_;
  std::size_t adam_t_ = 0;

  static std::size_t conv_row(const TLayer& L) {
    if (L.d.kind == LayerKind::conv_temporal) return 1;
    const Shape& s = L.in_shape;
    return s.size() == 3 ? s[1] * s[2] : s[1];
  }

  void init_params() {
    std::mt19937_64 rng(cfg_.seed ^ 0x5eedf00dULL);
    for (auto& L : layers_) {
      if (!has_params(L.d.kind)) continue;
      std::size_t fan_in = 0, nweights = 0, nout = L.d.units;
      switch (L.d.kind) {
        case LayerKind::conv_temporal:
          fan_in = L.d.kernel;
          nweights = L.d.units * L.d.kernel;
          break;
        case LayerKind::conv_spatial:
          fan_in = L.d.kernel * conv_row(L);
          nweights = L.d.units * fan_in;
          break;
        case LayerKind::dense:
        case LayerKind::softmax:
          fan_in = shape_numel(L.in_shape);
          nweights = L.d.units * fan_in;
          break;
        default:
          break;
      }
      L.fan_in = fan_in;
      const float r = std::sqrt(6.0f / static_cast<float>(fan_in + nout));
      std::uniform_real_distribution<float> init(-r, r);
      L.W = RealTensor(Shape{nweights});
      for (auto& w : L.W.data) w = init(rng);
      L.b.assign(nout, 0.0f);
      L.gW.assign(nweights, 0.0f);
      L.gb.assign(nout, 0.0f);
      L.mW.assign(nweights, 0.0f);
      L.vW.assign(nweights, 0.0f);
      L.mb.assign(nout, 0.0f);
      L.vb.assign(nout, 0.0f);
    }
  }

  void zero_grads() {
    for (auto& L : layers_) {
      std::fill(L.gW.begin(), L.gW.end(), 0.0f);
      std::fill(L.gb.begin(), L.gb.end(), 0.0f);
    }
  }

  void adam_step(std::size_t batch_n) {
    ++adam_t_;
    const double t = static_cast<double>(adam_t_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    const float scale = 1.0f / static_cast<float>(batch_n);
    for (auto& L : layers_) {
      auto update = [&](std::vector<float>& p, std::vector<float>& g,
                        std::vector<float>& m, std::vector<float>& v, bool clip) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = static_cast<double>(g[i]) * scale;
          m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
          v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi);
          const double mh = m[i] / bc1, vh = v[i] / bc2;
          p[i] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps));
          if (clip) p[i] = std::clamp(p[i], -1.0f, 1.0f);
        }
      };
      update(L.W.data, L.gW, L.mW, L.vW, L.binary());
      update(L.b, L.gb, L.mb, L.vb, false);
    }
  }

  // After training, binary thresholds are snapped to integers: sign layers
  // to ceil, score layers to round. The float forward then matches the
  // packed integer comparisons exactly.
  void finalize() {
    for (auto& L : layers_) {
      if (!L.binary()) continue;
      for (auto& t : L.b) {
        const double snapped = L.d.activation == ActKind::sign
                                   ? std::ceil(static_cast<double>(t))
                                   : std::round(static_cast<double>(t));
        t = static_cast<float>(snapped);
      }
    }
  }

  // Effective weights for the forward pass.
  RealTensor effective_weights(const TLayer& L) const {
    if (!L.binary()) return L.W;
    RealTensor w = L.W;
    for (auto& v : w.data) v = v >= 0.0f ? 1.0f : -1.0f;
    return w;
  }

  ConvLayer conv_view(const TLayer& L, const RealTensor& w) const {
    ConvLayer c;
    c.precision = Precision::real;
    c.mode = L.d.kind == LayerKind::conv_temporal ? ConvMode::temporal_per_channel
                                                  : ConvMode::across_channels;
    c.filters = L.d.units;
    c.kernel_t = L.d.kernel;
    c.padding = L.d.padding;
    c.kernels = w;
    if (!L.binary()) c.biases = L.b;
    return c;
  }

  static RealTensor real_sum_pool(const RealTensor& x, std::size_t window,
                                  std::size_t stride) {
    std::size_t T, C, F;
    detail_tcf(x.shape, T, C, F);
    const std::size_t To = pool_out_len(T, window, stride);
    const std::size_t row = C * F;
    Shape os = x.shape;
    os[0] = To;
    RealTensor out(os);
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t j = 0; j < row; ++j) {
        float s = 0.0f;
        for (std::size_t k = 0; k < window; ++k)
          s += x.data[(t * stride + k) * row + j];
        out.data[t * row + j] = s;
      }
    return out;
  }

  static void detail_tcf(const Shape& s, std::size_t& T, std::size_t& C, std::size_t& F) {
    T = s[0];
    C = s.size() >= 2 ? s[1] : 1;
    F = s.size() == 3 ? s[2] : 1;
  }

  // Forward through all layers, filling caches when `caches` is non-null.
  RealTensor run_forward(const RealTensor& input, bool train, std::mt19937_64* rng,
                         std::vector<Cache>* caches) const {
    RealTensor cur = input;
    bool skip_next = false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const TLayer& L = layers_[i];
      Cache cache;
      cache.in = cur;
      if (skip_next) {
        skip_next = false;
        cache.skipped = true;
        if (caches) caches->push_back(std::move(cache));
        continue;
      }
      switch (L.d.kind) {
        case LayerKind::conv_temporal:
        case LayerKind::conv_spatial: {
          RealTensor x = cur;
          if (L.binary()) {
            for (auto& v : x.data) v = v >= 0.0f ? 1.0f : -1.0f;
            cache.in_bin = x;
          }
          const RealTensor w = effective_weights(L);
          RealTensor acc = conv1d_real(x, conv_view(L, w));
          if (L.binary() && L.d.activation == ActKind::sign) {
            const bool defer = i + 1 < layers_.size() &&
                               layers_[i + 1].d.kind == LayerKind::avg_pool;
            std::size_t window = 1;
            if (defer) {
              const LayerDescriptor& pd = layers_[i + 1].d;
              window = pd.kernel;
              acc = real_sum_pool(acc, pd.kernel, pd.stride == 0 ? pd.kernel : pd.stride);
              cache.consumed_pool = true;
              skip_next = true;
            }
            RealTensor pre = acc;
            const float wf = static_cast<float>(window);
            for (std::size_t j = 0; j < pre.size(); ++j)
              pre.data[j] -= wf * L.b[j % L.d.units];
            cache.pre = pre;
            cur = pre;
            for (auto& v : cur.data) v = v >= 0.0f ? 1.0f : -1.0f;
          } else if (L.d.activation == ActKind::sign) {
            cache.pre = acc;
            cur = acc;
            for (auto& v : cur.data) v = v >= 0.0f ? 1.0f : -1.0f;
          } else {
            cache.pre = acc;
            cur = activate(acc, detail::to_activation(L.d.activation));
          }
          if (train && cfg_.keep_conv < 1.0) apply_dropout(cur, cfg_.keep_conv, *rng, cache);
          break;
        }
        case LayerKind::avg_pool: {
          cur = avg_pool(cur, L.d.kernel, L.d.stride == 0 ? L.d.kernel : L.d.stride);
          break;
        }
        case LayerKind::max_pool: {
          const std::size_t stride = L.d.stride == 0 ? L.d.kernel : L.d.stride;
          std::size_t T, C, F;
          detail_tcf(cur.shape, T, C, F);
          const std::size_t To = pool_out_len(T, L.d.kernel, stride);
          const std::size_t row = C * F;
          Shape os = cur.shape;
          os[0] = To;
          RealTensor out(os);
          cache.argmax.resize(To * row);
          for (std::size_t t = 0; t < To; ++t)
            for (std::size_t j = 0; j < row; ++j) {
              std::size_t best = (t * stride) * row + j;
              for (std::size_t k = 1; k < L.d.kernel; ++k) {
                const std::size_t idx = (t * stride + k) * row + j;
                if (cur.data[idx] > cur.data[best]) best = idx;
              }
              out.data[t * row + j] = cur.data[best];
              cache.argmax[t * row + j] = best;
            }
          cur = out;
          break;
        }
        case LayerKind::flatten:
          cur.shape = {cur.size()};
          break;
        case LayerKind::dense:
        case LayerKind::softmax: {
          RealTensor x = cur;
          x.shape = {x.size()};
          if (L.binary()) {
            for (auto& v : x.data) v = v >= 0.0f ? 1.0f : -1.0f;
            cache.in_bin = x;
          }
          const RealTensor w = effective_weights(L);
          RealTensor z(Shape{L.d.units});
          for (std::size_t k = 0; k < L.d.units; ++k) {
            float acc = L.binary() ? -L.b[k] : L.b[k];
            const float* wr = w.data.data() + k * L.fan_in;
            for (std::size_t j = 0; j < L.fan_in; ++j) acc += wr[j] * x.data[j];
            z.data[k] = acc;
          }
          cache.pre = z;
          if (L.d.kind == LayerKind::softmax || L.d.activation == ActKind::none) {
            cur = z;  // logits
          } else if (L.d.activation == ActKind::sign) {
            cur = z;
            for (auto& v : cur.data) v = v >= 0.0f ? 1.0f : -1.0f;
          } else {
            cur = activate(z, detail::to_activation(L.d.activation));
          }
          if (L.d.kind != LayerKind::softmax && train && cfg_.keep_classifier < 1.0)
            apply_dropout(cur, cfg_.keep_classifier, *rng, cache);
          break;
        }
        default:
          throw ConfigError("trainer: unsupported layer kind " +
                            std::string(kind_name(L.d.kind)));
      }
      cache.out = cur;
      if (caches) caches->push_back(std::move(cache));
    }
    return cur;
  }

  void apply_dropout(RealTensor& x, double keep, std::mt19937_64& rng, Cache& cache) const {
    std::bernoulli_distribution kept(keep);
    cache.drop.resize(x.size());
    const float inv = static_cast<float>(1.0 / keep);
    for (std::size_t i = 0; i < x.size(); ++i) {
      cache.drop[i] = kept(rng) ? inv : 0.0f;
      x.data[i] *= cache.drop[i];
    }
  }

  // Returns (loss, predicted label) and accumulates gradients.
  std::pair<double, std::size_t> forward_backward(const RealTensor& input,
                                                  std::size_t label, bool train,
                                                  std::mt19937_64& rng) {
    std::vector<Cache> caches;
    caches.reserve(layers_.size());
    RealTensor logits = run_forward(input, train, &rng, &caches);

    // softmax cross-entropy
    const std::size_t K = logits.size();
    double maxv = logits.data[0];
    for (float v : logits.data) maxv = std::max(maxv, static_cast<double>(v));
    double denom = 0.0;
    for (float v : logits.data) denom += std::exp(static_cast<double>(v) - maxv);
    const double logp =
        static_cast<double>(logits.data[label]) - maxv - std::log(denom);
    const double loss = -logp;
    std::size_t pred = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits.data[k] > logits.data[pred]) pred = k;

    RealTensor grad(Shape{K});
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(logits.data[k]) - maxv) / denom;
      grad.data[k] = static_cast<float>(p - (k == label ? 1.0 : 0.0));
    }

    // backward
    for (std::size_t ii = layers_.size(); ii-- > 0;) {
      TLayer& L = layers_[ii];
      Cache& cache = caches[ii];
      if (cache.skipped) continue;  // pool absorbed by the conv before it
      switch (L.d.kind) {
        case LayerKind::conv_temporal:
        case LayerKind::conv_spatial:
          grad = backward_conv(L, cache, grad);
          break;
        case LayerKind::avg_pool:
          grad = backward_avg_pool(L, cache, grad);
          break;
        case LayerKind::max_pool:
          grad = backward_max_pool(cache, grad);
          break;
        case LayerKind::flatten:
          grad.shape = cache.in.shape;
          break;
        case LayerKind::dense:
        case LayerKind::softmax:
          grad = backward_dense(L, cache, grad);
          break;
        default:
          break;
      }
    }
    return {loss, pred};
  }

  static void apply_drop_grad(const Cache& cache, RealTensor& g) {
    if (cache.drop.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= cache.drop[i];
  }

  RealTensor backward_dense(TLayer& L, Cache& cache, RealTensor g) {
    if (L.d.kind != LayerKind::softmax) apply_drop_grad(cache, g);
    // activation derivative
    if (L.d.kind != LayerKind::softmax && L.d.activation != ActKind::none) {
      if (L.d.activation == ActKind::sign) {
        const float s = std::sqrt(static_cast<float>(L.fan_in));
        for (std::size_t k = 0; k < g.size(); ++k)
          g.data[k] = std::fabs(cache.pre.data[k]) <= s ? g.data[k] / s : 0.0f;
      } else if (L.d.activation == ActKind::relu) {
        for (std::size_t k = 0; k < g.size(); ++k)
          if (cache.pre.data[k] <= 0.0f) g.data[k] = 0.0f;
      } else if (L.d.activation == ActKind::hardtanh) {
        for (std::size_t k = 0; k < g.size(); ++k)
          if (std::fabs(cache.pre.data[k]) > 1.0f) g.data[k] = 0.0f;
      }
    }
    const RealTensor& x = L.binary() ? cache.in_bin : cache.in;
    const RealTensor weff = effective_weights(L);
    RealTensor gx(Shape{L.fan_in});
    for (std::size_t k = 0; k < L.d.units; ++k) {
      const float gk = g.data[k];
      L.gb[k] += L.binary() ? -gk : gk;
      const float* wr = weff.data.data() + k * L.fan_in;
      float* gwr = L.gW.data() + k * L.fan_in;
      const float* xr = x.data.data();
      for (std::size_t j = 0; j < L.fan_in; ++j) {
        gwr[j] += gk * xr[j];  // masked below for binary layers
        gx.data[j] += gk * wr[j];
      }
    }
    mask_latent(L);
    if (L.binary()) ste_input_grad(cache, gx);
    gx.shape = cache.in.shape;
    return gx;
  }

  RealTensor backward_conv(TLayer& L, Cache& cache, RealTensor g) {
    apply_drop_grad(cache, g);
    const bool deferred = cache.consumed_pool;
    // activation derivative on the (possibly pooled) pre-activation
    if (L.d.activation == ActKind::sign) {
      const float s = std::sqrt(static_cast<float>(L.fan_in));
      for (std::size_t k = 0; k < g.size(); ++k)
        g.data[k] = std::fabs(cache.pre.data[k]) <= s ? g.data[k] / s : 0.0f;
    } else if (L.d.activation == ActKind::relu) {
      for (std::size_t k = 0; k < g.size(); ++k)
        if (cache.pre.data[k] <= 0.0f) g.data[k] = 0.0f;
    } else if (L.d.activation == ActKind::hardtanh) {
      for (std::size_t k = 0; k < g.size(); ++k)
        if (std::fabs(cache.pre.data[k]) > 1.0f) g.data[k] = 0.0f;
    }

    // bias / threshold gradient
    const std::size_t filters = L.d.units;
    float window = 1.0f;
    if (deferred) window = static_cast<float>(layers_[find_next(L)].d.kernel);
    for (std::size_t k = 0; k < g.size(); ++k)
      L.gb[k % filters] += (L.binary() ? -window : 1.0f) * g.data[k];

    // un-pool the gradient back to per-position accumulations
    RealTensor gacc;
    if (deferred) {
      const TLayer& P = layers_[find_next(L)];
      const std::size_t stride = P.d.stride == 0 ? P.d.kernel : P.d.stride;
      std::size_t T, C, F;
      // conv output length before pooling
      const RealTensor& xin = L.binary() ? cache.in_bin : cache.in;
      detail_tcf(xin.shape, T, C, F);
      const std::size_t To = conv_out_len(T, L.d.kernel, L.d.padding);
      Shape accshape = L.d.kind == LayerKind::conv_temporal
                           ? Shape{To, C, filters}
                           : Shape{To, 1, filters};
      gacc = RealTensor(accshape);
      const std::size_t row = shape_numel(accshape) / To;
      const std::size_t Tp = cache.pre.shape[0];
      for (std::size_t t = 0; t < Tp; ++t)
        for (std::size_t j = 0; j < row; ++j)
          for (std::size_t k = 0; k < P.d.kernel; ++k)
            gacc.data[(t * stride + k) * row + j] += g.data[t * row + j];
    } else {
      gacc = g;
      gacc.shape = cache.pre.shape;
    }

    // weight and input gradients
    const RealTensor& x = L.binary() ? cache.in_bin : cache.in;
    RealTensor gx(x.shape);
    std::size_t T, C, F;
    detail_tcf(x.shape, T, C, F);
    const long long p = static_cast<long long>(L.d.padding);
    const std::size_t To = gacc.shape[0];

    if (L.d.kind == LayerKind::conv_temporal) {
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t f = 0; f < filters; ++f) {
            const float gk = gacc.data[(t * C + c) * filters + f];
            if (gk == 0.0f) continue;
            for (std::size_t k = 0; k < L.d.kernel; ++k) {
              const long long ti = static_cast<long long>(t + k) - p;
              if (ti < 0 || ti >= static_cast<long long>(T)) continue;
              const std::size_t xi = static_cast<std::size_t>(ti) * C + c;
              L.gW[f * L.d.kernel + k] += gk * x.data[xi];
              gx.data[xi] += gk * effective_weight(L, f * L.d.kernel + k);
            }
          }
    } else {
      const std::size_t row = C * F;
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t f = 0; f < filters; ++f) {
          const float gk = gacc.data[t * filters + f];
          if (gk == 0.0f) continue;
          for (std::size_t k = 0; k < L.d.kernel; ++k) {
            const long long ti = static_cast<long long>(t + k) - p;
            if (ti < 0 || ti >= static_cast<long long>(T)) continue;
            const std::size_t xbase = static_cast<std::size_t>(ti) * row;
            const std::size_t wbase = (f * L.d.kernel + k) * row;
            for (std::size_t j = 0; j < row; ++j) {
              L.gW[wbase + j] += gk * x.data[xbase + j];
              gx.data[xbase + j] += gk * effective_weight(L, wbase + j);
            }
          }
        }
    }
    mask_latent(L);
    if (L.binary()) ste_input_grad(cache, gx);
    gx.shape = cache.in.shape;
    return gx;
  }

  RealTensor backward_avg_pool(const TLayer& L, const Cache& cache, const RealTensor& g) {
    const std::size_t stride = L.d.stride == 0 ? L.d.kernel : L.d.stride;
    RealTensor gx(cache.in.shape);
    std::size_t T, C, F;
    detail_tcf(cache.in.shape, T, C, F);
    const std::size_t row = C * F;
    const std::size_t To = pool_out_len(T, L.d.kernel, stride);
    const float inv = 1.0f / static_cast<float>(L.d.kernel);
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t j = 0; j < row; ++j)
        for (std::size_t k = 0; k < L.d.kernel; ++k)
          gx.data[(t * stride + k) * row + j] += g.data[t * row + j] * inv;
    return gx;
  }

  RealTensor backward_max_pool(const Cache& cache, const RealTensor& g) {
    RealTensor gx(cache.in.shape);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx.data[cache.argmax[i]] += g.data[i];
    return gx;
  }

  float effective_weight(const TLayer& L, std::size_t i) const {
    return L.binary() ? (L.W.data[i] >= 0.0f ? 1.0f : -1.0f) : L.W.data[i];
  }

  // Clipped-identity STE on latent weights: zero the just-accumulated
  // gradient where the latent weight sits outside [-1, 1]. Applied after
  // each layer backward; latent weights only move between batches, so
  // masking the running accumulator per call is equivalent.
  void mask_latent(TLayer& L) {
    if (!L.binary()) return;
    for (std::size_t i = 0; i < L.gW.size(); ++i)
      if (std::fabs(L.W.data[i]) > 1.0f) L.gW[i] = 0.0f;
  }

  // STE through the input binarization of a binary layer fed by real data.
  void ste_input_grad(const Cache& cache, RealTensor& gx) const {
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (std::fabs(cache.in.data[i]) > 1.0f) gx.data[i] = 0.0f;
  }

  std::size_t find_next(const TLayer& L) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (&layers_[i] == &L) return i + 1;
    throw ConfigError("trainer: layer not found");
  }
};

// ---------------------------------------------------------------------------
// High-level entry points

struct TrainResult {
  Model model;
  TrainHistory history;
};

inline TrainResult train(const NetworkSpec& spec, const Dataset& ds,
                         const TrainConfig& cfg, Strategy strategy) {
  NetworkSpec applied = apply_strategy(spec, strategy, cfg.binarize_first_layer);
  Trainer trainer(applied, cfg);
  TrainResult res;
  res.history = trainer.fit(ds);
  res.model = trainer.export_model();
  return res;
}

struct CrossValResult {
  std::vector<double> fold_accuracy;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<std::vector<std::size_t>> folds;  // validation index sets
};

inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds,
                                                        std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross_validate: need at least 2 folds");
  if (folds > n) throw ConfigError("cross_validate: more folds than samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(order[i]);
  return out;
}

inline CrossValResult cross_validate(const NetworkSpec& spec, const Dataset& ds,
                                     const TrainConfig& cfg, Strategy strategy) {
  CrossValResult res;
  res.folds = make_folds(ds.size(), cfg.folds, cfg.seed);
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < cfg.folds; ++g)
      if (g != f)
        train_idx.insert(train_idx.end(), res.folds[g].begin(), res.folds[g].end());
    if (res.folds[f].empty() || train_idx.size() < cfg.batch)
      throw ConfigError("cross_validate: fold smaller than batch");

    const ChannelStats st = channel_stats(ds, train_idx);
    const Dataset norm = apply_normalization(ds, st);

    Dataset train_ds, val_ds;
    train_ds.classes = val_ds.classes = ds.classes;
    for (std::size_t i : train_idx) {
      train_ds.samples.push_back(norm.samples[i]);
      train_ds.labels.push_back(norm.labels[i]);
    }
    for (std::size_t i : res.folds[f]) {
      val_ds.samples.push_back(norm.samples[i]);
      val_ds.labels.push_back(norm.labels[i]);
    }

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed * 1000003ull + f;  // fresh model per fold
    NetworkSpec applied = apply_strategy(spec, strategy, cfg.binarize_first_layer);
    Trainer trainer(applied, fold_cfg);
    trainer.fit(train_ds);
    res.fold_accuracy.push_back(trainer.evaluate(val_ds));
  }
  for (double a : res.fold_accuracy) res.mean += a;
  res.mean /= static_cast<double>(res.fold_accuracy.size());
  for (double a : res.fold_accuracy)
    res.stddev += (a - res.mean) * (a - res.mean);
  res.stddev = std::sqrt(res.stddev / static_cast<double>(res.fold_accuracy.size()));
  return res;
}

}  // namespace bnn

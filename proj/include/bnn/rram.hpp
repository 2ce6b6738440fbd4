#pragma once

// Behavioral simulation of binary weight storage in resistive memory:
// device states, differential 2T2R cells read through a precharge sense
// amplifier (optionally with in-sense XNOR), cycling-dependent bit-error
// curves and fault injection into packed weight tensors.
//
// The default BER tables are qualitative placeholders, not measured data:
// flat 1e-2 for 1T1R and 1e-4 for 2T2R across 1..1e7 cycles. They preserve
// the two-orders-of-magnitude gap between the configurations; replace them
// with a measured two-column table for quantitative work.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bnn/bitcore.hpp"
#include "bnn/errors.hpp"
#include "bnn/forward.hpp"

namespace bnn {

enum class CellMode { T1R1, T2R2 };

enum class Level { LRS, HRS };

struct DeviceState {
  Level level = Level::HRS;
  std::uint64_t cycles = 0;
};

// 2T2R convention: (LRS, HRS) stores +1, (HRS, LRS) stores -1.
// 1T1R uses the first device only: LRS stores +1.
struct SynapseCell {
  CellMode mode = CellMode::T2R2;
  DeviceState devices[2];
  int stored_weight = -1;
};

// Piecewise-linear bit-error-rate table over programming-cycle count,
// interpolated in log10(cycles). Queries outside the tabulated range throw.
class BerCurve {
 public:
  BerCurve() = default;
  explicit BerCurve(std::vector<std::pair<double, double>> points)
      : points_(std::move(points)) {
    for (const auto& [c, p] : points_)
      if (c <= 0.0 || p < 0.0 || p > 1.0)
        throw RangeError("BerCurve: cycles must be positive, probabilities in [0,1]");
    std::sort(points_.begin(), points_.end());
  }

  double at(double cycles) const {
    if (points_.empty()) throw RangeError("BerCurve: empty table");
    if (cycles < points_.front().first || cycles > points_.back().first)
      throw RangeError("BerCurve: " + std::to_string(cycles) +
                       " cycles outside tabulated range");
    auto hi = std::lower_bound(points_.begin(), points_.end(),
                               std::make_pair(cycles, -1.0));
    if (hi == points_.begin() || hi->first == cycles) return hi->second;
    auto lo = hi - 1;
    const double t = (std::log10(cycles) - std::log10(lo->first)) /
                     (std::log10(hi->first) - std::log10(lo->first));
    return lo->second + t * (hi->second - lo->second);
  }

  const std::vector<std::pair<double, double>>& points() const { return points_; }

 private:
  std::vector<std::pair<double, double>> points_;
};

inline BerCurve default_ber_curve(CellMode mode) {
  const double p = mode == CellMode::T1R1 ? 1e-2 : 1e-4;
  return BerCurve({{1.0, p}, {1e7, p}});
}

// Two-column plain text: cycles probability, one pair per line, '#' comments.
inline BerCurve read_ber_curve(std::istream& is) {
  std::vector<std::pair<double, double>> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    double c, p;
    if (ls >> c) {
      if (!(ls >> p))
        throw ParseError("BER table line " + std::to_string(lineno) +
                         ": expected 'cycles probability'");
      pts.emplace_back(c, p);
    }
  }
  if (pts.empty()) throw ParseError("BER table: no data rows");
  return BerCurve(std::move(pts));
}

struct FaultModel {
  CellMode mode = CellMode::T2R2;
  BerCurve ber_curve = default_ber_curve(CellMode::T2R2);
  std::uint64_t seed = 0;
};

inline FaultModel make_fault_model(CellMode mode, std::uint64_t seed) {
  return FaultModel{mode, default_ber_curve(mode), seed};
}

// ---------------------------------------------------------------------------
// Cell reads

inline int cell_value(const SynapseCell& cell) {
  if (cell.mode == CellMode::T1R1)
    return cell.devices[0].level == Level::LRS ? +1 : -1;
  return cell.devices[0].level == Level::LRS ? +1 : -1;
}

// Precharge-sense-amplifier read of a differential pair. Fault-free it
// compares the two resistances and yields the stored weight; under the
// fault model the read flips with probability ber(cycles).
inline int pcsa_read(const SynapseCell& cell, const FaultModel& fm,
                     std::mt19937_64& rng) {
  if (cell.mode != CellMode::T2R2)
    throw ModeError("pcsa_read: cell is not 2T2R");
  const int v = cell.devices[0].level == Level::LRS ? +1 : -1;
  const double p = fm.ber_curve.at(std::max<std::uint64_t>(1, cell.devices[0].cycles));
  return std::bernoulli_distribution(p)(rng) ? -v : v;
}

// PCSA augmented with in-sense XNOR against the input bit.
inline int pcsa_xnor_read(const SynapseCell& cell, int input_bit, const FaultModel& fm,
                          std::mt19937_64& rng) {
  if (cell.mode != CellMode::T2R2)
    throw ModeError("pcsa_xnor_read: cell is not 2T2R");
  if (input_bit != +1 && input_bit != -1)
    throw InvalidValue("pcsa_xnor_read: input bit must be +1 or -1");
  const int v = (cell.devices[0].level == Level::LRS ? +1 : -1) * input_bit;
  const double p = fm.ber_curve.at(std::max<std::uint64_t>(1, cell.devices[0].cycles));
  return std::bernoulli_distribution(p)(rng) ? -v : v;
}

// ---------------------------------------------------------------------------
// Synapse arrays

class SynapseArray {
 public:
  SynapseArray(Shape shape, CellMode mode)
      : shape_(std::move(shape)), mode_(mode), cells_(shape_numel(shape_)) {
    for (auto& c : cells_) c.mode = mode;
  }

  const Shape& shape() const { return shape_; }
  CellMode mode() const { return mode_; }
  std::size_t size() const { return cells_.size(); }
  const SynapseCell& cell(std::size_t i) const { return cells_[i]; }

  // Sets the device pair (or single device) of every cell per the
  // differential convention; every touched device's cycle counter
  // increments, including reprogramming with the same weight.
  void program(const BitTensor& weights) {
    if (weights.shape() != shape_)
      throw ShapeError("SynapseArray::program: weight shape mismatch");
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      SynapseCell& c = cells_[i];
      const int w = weights.get(i);
      c.stored_weight = w;
      c.devices[0].level = w > 0 ? Level::LRS : Level::HRS;
      c.devices[0].cycles++;
      if (mode_ == CellMode::T2R2) {
        c.devices[1].level = w > 0 ? Level::HRS : Level::LRS;
        c.devices[1].cycles++;
      }
    }
  }

  // Reads the whole array under the fault model; with a null model the
  // read is fault-free and returns exactly the programmed tensor.
  BitTensor read_all(const FaultModel* fm = nullptr) const {
    BitTensor out(shape_);
    if (fm == nullptr) {
      for (std::size_t i = 0; i < cells_.size(); ++i)
        out.set_sign(i, cell_value(cells_[i]));
      return out;
    }
    std::mt19937_64 rng(fm->seed);
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      const double p =
          fm->ber_curve.at(std::max<std::uint64_t>(1, cells_[i].devices[0].cycles));
      int v = cell_value(cells_[i]);
      if (std::bernoulli_distribution(p)(rng)) v = -v;
      out.set_sign(i, v);
    }
    return out;
  }

 private:
  Shape shape_;
  CellMode mode_;
  std::vector<SynapseCell> cells_;
};

// ---------------------------------------------------------------------------
// Fault injection into packed weights

// Each bit flips independently with p = ber_curve(cycles); deterministic
// for a given seed; the input tensor is left untouched.
inline BitTensor inject_faults(const BitTensor& weights, const FaultModel& fm,
                               std::uint64_t cycles) {
  const double p = fm.ber_curve.at(static_cast<double>(cycles));
  BitTensor out = weights;
  std::mt19937_64 rng(fm.seed);
  std::bernoulli_distribution flip(p);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (flip(rng)) out.flip(i);
  return out;
}

struct FaultyInferenceResult {
  std::vector<Prediction> outputs;
  std::vector<std::size_t> layer_flips;  // one entry per model layer
  std::size_t total_flips = 0;
};

// Program-time fault injection composed with packed inference: every
// binary layer's stored weights are corrupted once (per-layer derived
// seeds), then the forward pass runs unchanged over all inputs.
inline FaultyInferenceResult faulty_inference(const Model& model, const FaultModel& fm,
                                              std::uint64_t cycles,
                                              const std::vector<RealTensor>& inputs) {
  Model corrupted = model;
  FaultyInferenceResult res;
  res.layer_flips.assign(model.spec.layers.size(), 0);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (!model.layer_is_binary(i) || !has_params(model.spec.layers[i].kind)) continue;
    FaultModel layer_fm = fm;
    layer_fm.seed = fm.seed * 0x9e3779b97f4a7c15ull + i + 1;
    corrupted.params[i].bin_weights =
        inject_faults(model.params[i].bin_weights, layer_fm, cycles);
    std::size_t flips = 0;
    for (std::size_t w = 0; w < model.params[i].bin_weights.word_count(); ++w)
      flips += static_cast<std::size_t>(
          std::popcount(model.params[i].bin_weights.words()[w] ^
                        corrupted.params[i].bin_weights.words()[w]));
    res.layer_flips[i] = flips;
    res.total_flips += flips;
  }
  res.outputs.reserve(inputs.size());
  for (const auto& x : inputs) res.outputs.push_back(forward(corrupted, x));
  return res;
}

}  // namespace bnn

#pragma once

// Memory-footprint analysis of precision policies: per-layer byte
// accounting, savings against a baseline, and the equal-memory filter
// augmentation factor. Weights are counted at the policy bit-width of
// their group (feature extractor vs classifier, split at the first
// flatten); biases, thresholds and batch-norm parameters stay at 32 bits.
//
// Sizes are reported in MB = 2^20 bytes and KB = 10^3 bytes, the mix of
// conventions the reference figures use.

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/netspec.hpp"

namespace bnn {

struct PrecisionPolicy {
  unsigned feature_extractor_bits = 32;
  unsigned classifier_bits = 32;
  std::string name;
};

inline PrecisionPolicy policy_32bit() { return {32, 32, "32bit"}; }
inline PrecisionPolicy policy_8bit() { return {8, 8, "8bit"}; }
inline PrecisionPolicy policy_bin_classifier(unsigned fe_bits = 32) {
  return {fe_bits, 1, fe_bits == 32 ? "bin_classifier" : "bin_classifier_8bit_fe"};
}
inline PrecisionPolicy policy_all_binary() { return {1, 1, "all_binary"}; }

struct LayerMemory {
  std::string kind;
  std::size_t weight_params = 0;
  std::size_t aux_params = 0;
  unsigned bits = 32;
  std::size_t bytes = 0;
  bool classifier = false;
};

struct MemoryReport {
  std::string model;
  std::string policy;
  std::vector<LayerMemory> layers;
  std::size_t total_params = 0;
  std::size_t classifier_params = 0;
  std::size_t total_bits = 0;
  std::size_t total_bytes = 0;

  double megabytes() const { return static_cast<double>(total_bytes) / (1 << 20); }
  double kilobytes() const { return static_cast<double>(total_bytes) / 1000.0; }
};

inline void validate_policy(const PrecisionPolicy& p) {
  for (unsigned b : {p.feature_extractor_bits, p.classifier_bits})
    if (b != 32 && b != 8 && b != 1)
      throw ConfigError("precision policy bits must be 32, 8 or 1");
}

inline MemoryReport audit(const NetworkSpec& spec, const PrecisionPolicy& policy) {
  validate_policy(policy);
  const ParamCount pc = count_params(spec);
  MemoryReport rep;
  rep.model = spec.name;
  rep.policy = policy.name;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerParams& lp = pc.layers[i];
    LayerMemory lm;
    lm.kind = kind_name(spec.layers[i].kind);
    lm.weight_params = lp.weight_params;
    lm.aux_params = lp.aux_params;
    lm.classifier = lp.classifier;
    lm.bits = lp.classifier ? policy.classifier_bits : policy.feature_extractor_bits;
    const std::size_t weight_bits = lp.weight_params * lm.bits;
    const std::size_t aux_bits = lp.aux_params * 32;
    lm.bytes = (weight_bits + 7) / 8 + aux_bits / 8;
    rep.layers.push_back(lm);
    rep.total_params += lp.total();
    if (lp.classifier) rep.classifier_params += lp.total();
    rep.total_bits += weight_bits + aux_bits;
    rep.total_bytes += lm.bytes;
  }
  return rep;
}

// savings = 1 - size(policy)/size(baseline), as a percentage.
inline double savings_percent(const MemoryReport& policy_rep,
                              const MemoryReport& baseline_rep) {
  return 100.0 * (1.0 - static_cast<double>(policy_rep.total_bytes) /
                            static_cast<double>(baseline_rep.total_bytes));
}

inline std::vector<MemoryReport> compare_policies(
    const NetworkSpec& spec, const std::vector<PrecisionPolicy>& policies) {
  if (policies.empty()) throw ConfigError("compare_policies: need at least one policy");
  std::vector<MemoryReport> out;
  out.reserve(policies.size());
  for (const auto& p : policies) out.push_back(audit(spec, p));
  return out;
}

// Largest k such that the fully-binarized k-augmented network's bit count
// stays within the reference policy's bit count. Returns 0 when even k = 1
// does not fit.
inline std::size_t equal_memory_augmentation(const NetworkSpec& spec,
                                             const PrecisionPolicy& target_policy) {
  const std::size_t budget = audit(spec, target_policy).total_bits;
  std::size_t k = 0;
  for (;;) {
    NetworkSpec aug;
    try {
      aug = augment(spec, k + 1);
    } catch (const CapacityError&) {
      return k;
    }
    if (audit(aug, policy_all_binary()).total_bits > budget) return k;
    ++k;
  }
}

// ---------------------------------------------------------------------------
// Report formatting: aligned table and tab-separated machine form.

inline void write_report(std::ostream& os, const MemoryReport& rep, bool tsv = false) {
  const char* sep = tsv ? "\t" : "  ";
  os << "model" << sep << rep.model << "\n";
  os << "policy" << sep << rep.policy << "\n";
  for (std::size_t i = 0; i < rep.layers.size(); ++i) {
    const LayerMemory& lm = rep.layers[i];
    if (tsv) {
      os << i << sep << lm.kind << sep << lm.weight_params << sep << lm.aux_params
         << sep << lm.bits << sep << lm.bytes << "\n";
    } else {
      os << std::setw(3) << i << "  " << std::setw(15) << std::left << lm.kind
         << std::right << std::setw(10) << lm.weight_params << " w " << std::setw(8)
         << lm.aux_params << " aux " << std::setw(3) << lm.bits << "b " << std::setw(10)
         << lm.bytes << " B" << (lm.classifier ? "  [classifier]" : "") << "\n";
    }
  }
  os << "total_params" << sep << rep.total_params << "\n";
  os << "classifier_params" << sep << rep.classifier_params << "\n";
  os << "total_bytes" << sep << rep.total_bytes << "\n";
  os << std::fixed << std::setprecision(2);
  os << "size_mb" << sep << rep.megabytes() << "\n";
  os << "size_kb" << sep << rep.kilobytes() << "\n";
  os.unsetf(std::ios::fixed);
}

}  // namespace bnn

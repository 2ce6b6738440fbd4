#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "bnn/memaudit.hpp"

using namespace bnn;

// Hand-derived EEG byte counts used as oracles below (no batch norm, so
// aux = one bias/threshold per output unit, always 32-bit):
//   weights: conv 40*30=1200, conv 40*64*40=102400, dense 2520*80=201600,
//            softmax 80*2=160; aux 40+40+80+2=162.
//   32-bit: (305360 + 162) * 4            = 1222088 B
//   8-bit:  305360 + 162*4                = 306008 B
//   binary classifier over 32-bit FE:
//     103600*4 + 201600/8 + 160/8 + 162*4 = 440268 B
//   binary classifier over 8-bit FE:
//     103600   + 201600/8 + 160/8 + 162*4 = 129468 B

TEST_CASE("policy validation") {
  CHECK_THROWS_AS(audit(builtin_eeg(), PrecisionPolicy{16, 32, "bad"}), ConfigError);
  CHECK_THROWS_AS(audit(builtin_eeg(), PrecisionPolicy{32, 4, "bad"}), ConfigError);
}

TEST_CASE("wide-signal model byte accounting matches hand-derived totals") {
  const NetworkSpec eeg = builtin_eeg();
  CHECK(audit(eeg, policy_32bit()).total_bytes == 1222088);
  CHECK(audit(eeg, policy_8bit()).total_bytes == 306008);
  CHECK(audit(eeg, policy_bin_classifier()).total_bytes == 440268);
  CHECK(audit(eeg, policy_bin_classifier(8)).total_bytes == 129468);
}

TEST_CASE("size conventions: MB is binary, KB is decimal") {
  const MemoryReport r = audit(builtin_eeg(), policy_32bit());
  CHECK(r.megabytes() == Catch::Approx(1222088.0 / 1048576.0));
  CHECK(r.kilobytes() == Catch::Approx(1222.088));
}

TEST_CASE("per-layer rounding: bytes = ceil(weight bits / 8) plus aux") {
  NetworkSpec s;
  s.name = "odd";
  s.input_shape = {3, 1};
  s.layers = {{LayerKind::flatten},
              {LayerKind::dense, 0, 0, 1, 3, LayerPrecision::binary, false,
               ActKind::sign}};
  // 9 binary weights -> 2 bytes; 3 thresholds at 32-bit -> 12 bytes
  const MemoryReport r = audit(s, policy_all_binary());
  CHECK(r.layers[1].bytes == 2 + 12);
  CHECK(r.total_bytes == 14);
}

TEST_CASE("savings against itself is zero, and strictly positive when bits drop") {
  for (const char* name : {"eeg_dose", "ecg_custom", "mobilenet_v1_224"}) {
    const NetworkSpec spec = builtin(name);
    const MemoryReport base = audit(spec, policy_32bit());
    CHECK(savings_percent(base, base) == 0.0);
    CHECK(savings_percent(audit(spec, policy_8bit()), base) > 0.0);
    CHECK(savings_percent(audit(spec, policy_bin_classifier()), base) > 0.0);
  }
}

TEST_CASE("lowering any group's bit-width never increases the total") {
  const NetworkSpec spec = builtin_ecg();
  const unsigned widths[] = {32, 8, 1};
  for (unsigned fe : widths)
    for (unsigned cl : widths) {
      const std::size_t bytes = audit(spec, {fe, cl, "x"}).total_bytes;
      for (unsigned fe2 : widths)
        for (unsigned cl2 : widths)
          if (fe2 <= fe && cl2 <= cl)
            CHECK(audit(spec, {fe2, cl2, "y"}).total_bytes <= bytes);
    }
}

TEST_CASE("compare_policies rows equal individual audits, in order") {
  const std::vector<PrecisionPolicy> policies = {policy_32bit(), policy_8bit(),
                                                 policy_bin_classifier(),
                                                 policy_all_binary()};
  const auto rows = compare_policies(builtin_eeg(), policies);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].policy == policies[i].name);
    CHECK(rows[i].total_bytes == audit(builtin_eeg(), policies[i]).total_bytes);
  }
  CHECK_THROWS_AS(compare_policies(builtin_eeg(), {}), ConfigError);
}

TEST_CASE("equal-memory factor is the largest k whose binary bits fit the budget") {
  for (const auto& [name, policy] :
       std::vector<std::pair<std::string, PrecisionPolicy>>{
           {"eeg_dose", policy_32bit()},
           {"eeg_dose", policy_8bit()},
           {"ecg_custom", policy_32bit()},
           {"ecg_custom", policy_8bit()}}) {
    const NetworkSpec spec = builtin(name);
    const std::size_t k = equal_memory_augmentation(spec, policy);
    const std::size_t budget = audit(spec, policy).total_bits;
    REQUIRE(k >= 1);
    CHECK(audit(augment(spec, k), policy_all_binary()).total_bits <= budget);
    CHECK(audit(augment(spec, k + 1), policy_all_binary()).total_bits > budget);
  }
}

TEST_CASE("wide-signal 8-bit budget admits exactly 3x augmentation") {
  CHECK(equal_memory_augmentation(builtin_eeg(), policy_8bit()) == 3);
}

TEST_CASE("report export carries totals in both formats") {
  const MemoryReport r = audit(builtin_eeg(), policy_8bit());
  std::ostringstream aligned, tsv;
  write_report(aligned, r);
  write_report(tsv, r, /*tsv=*/true);
  CHECK(aligned.str().find("total_bytes") != std::string::npos);
  CHECK(aligned.str().find("306008") != std::string::npos);
  CHECK(tsv.str().find("total_bytes\t306008") != std::string::npos);
  CHECK(tsv.str().find("\t8bit") != std::string::npos);
}

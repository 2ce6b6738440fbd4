// Command-line front end: reproducible shape reports, memory audits,
// training runs, inference, and fault sweeps over the header-only library.
// Every run writes a manifest (command, seed, versions) beside its outputs;
// timestamps live only in the manifest so outputs stay byte-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bnn/memaudit.hpp"
#include "bnn/model_io.hpp"
#include "bnn/rram.hpp"
#include "bnn/train.hpp"

namespace {

constexpr const char* kVersion = "bnncli 1.0";

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string output = ".";
  std::string format = "aligned";

  bool tsv() const { return format == "tsv"; }
};

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

void write_manifest(const GlobalOpts& g, const std::string& command_line) {
  std::filesystem::create_directories(g.output);
  std::ofstream os(std::filesystem::path(g.output) / "manifest.txt");
  os << "command " << command_line << "\n";
  os << "seed " << g.seed << "\n";
  os << "tool " << kVersion << "\n";
  os << "spec_format bnnspec v1\n";
  os << "model_format bnnm v1\n";
  const std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  os << "timestamp " << buf << "\n";
}

// --model accepts a built-in name or a path to a spec text file.
bnn::NetworkSpec resolve_spec(const std::string& model) {
  if (std::filesystem::exists(model)) {
    std::ifstream is(model);
    return bnn::read_spec_text(is);
  }
  return bnn::builtin(model);
}

bnn::PrecisionPolicy resolve_policy(const std::string& name) {
  if (name == "32bit") return bnn::policy_32bit();
  if (name == "8bit") return bnn::policy_8bit();
  if (name == "bin_classifier") return bnn::policy_bin_classifier();
  if (name == "bin_classifier_8bit") return bnn::policy_bin_classifier(8);
  if (name == "all_binary") return bnn::policy_all_binary();
  throw bnn::ConfigError("unknown policy: " + name +
                         " (expected 32bit, 8bit, bin_classifier, "
                         "bin_classifier_8bit, or all_binary)");
}

bnn::SyntheticTask resolve_task(const std::string& name) {
  if (name == "separable") return bnn::SyntheticTask::separable;
  if (name == "xor_like") return bnn::SyntheticTask::xor_like;
  if (name == "conv_pattern") return bnn::SyntheticTask::conv_pattern;
  throw bnn::ConfigError("unknown task: " + name);
}

bnn::Strategy resolve_strategy(const std::string& name) {
  if (name == "real") return bnn::Strategy::real;
  if (name == "all_binary") return bnn::Strategy::all_binary;
  if (name == "binary_classifier") return bnn::Strategy::binary_classifier;
  throw bnn::ConfigError("unknown strategy: " + name);
}

// Dataset source shared by train / infer / fault-sweep: either a CSV file
// (label-first rows) or a seeded synthetic task.
struct DataOpts {
  std::string csv;
  std::size_t channels = 1;
  std::string task;
  std::size_t samples = 200;

  bnn::Dataset load(std::uint64_t seed) const {
    if (!csv.empty()) return bnn::load_csv_signals(csv, {channels});
    if (!task.empty()) return bnn::make_synthetic(resolve_task(task), samples, seed);
    throw bnn::ConfigError("need --data or --task");
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", csv, "CSV file, one sample per row: label, values");
    cmd->add_option("--channels", channels, "channel count of CSV rows");
    cmd->add_option("--task", task, "synthetic task: separable, xor_like, conv_pattern");
    cmd->add_option("--samples", samples, "synthetic sample count");
  }
};

bnn::NetworkSpec arch_for(const std::string& arch, const bnn::Dataset& ds,
                          std::size_t hidden, std::size_t filters) {
  const bnn::Shape& in = ds.samples.at(0).shape;
  const std::size_t T = in[0];
  const std::size_t C = in.size() > 1 ? in[1] : 1;
  bnn::NetworkSpec s;
  s.name = arch;
  s.input_shape = {T, C};
  using bnn::ActKind;
  using bnn::LayerKind;
  using bnn::LayerPrecision;
  if (arch == "conv") {
    s.layers.push_back({LayerKind::conv_spatial, 7, 3, 1, filters,
                        LayerPrecision::float32, false, ActKind::hardtanh});
    s.layers.push_back({LayerKind::max_pool, 2, 0, 2, 0});
  } else if (arch != "dense") {
    throw bnn::ConfigError("unknown arch: " + arch + " (expected dense or conv)");
  }
  s.layers.push_back({LayerKind::flatten});
  s.layers.push_back({LayerKind::dense, 0, 0, 1, hidden, LayerPrecision::float32,
                      false, ActKind::hardtanh});
  s.layers.push_back({LayerKind::softmax, 0, 0, 1, ds.classes,
                      LayerPrecision::float32, false, ActKind::none});
  return s;
}

// ---------------------------------------------------------------------------

int cmd_shapes(const GlobalOpts& g, const std::string& model) {
  const bnn::NetworkSpec spec = resolve_spec(model);
  const std::vector<bnn::Shape> shapes = bnn::infer_shapes(spec);
  std::ostream& os = std::cout;
  if (g.tsv()) {
    os << "layer\tkind\tunits\toutput\n";
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
      os << i << "\t" << bnn::kind_name(spec.layers[i].kind) << "\t"
         << spec.layers[i].units << "\t" << bnn::format_shape(shapes[i]) << "\n";
  } else {
    os << "model " << spec.name << " (input " << bnn::format_shape(spec.input_shape)
       << ")\n";
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
      os << std::setw(3) << i << "  " << std::setw(16) << std::left
         << bnn::kind_name(spec.layers[i].kind) << std::right << "  "
         << bnn::format_shape(shapes[i]) << "\n";
  }
  return 0;
}

int cmd_mem_report(const GlobalOpts& g, const std::string& model,
                   std::vector<std::string> policy_names, bool per_layer) {
  const bnn::NetworkSpec spec = resolve_spec(model);
  if (policy_names.empty())
    policy_names = {"32bit", "8bit", "bin_classifier", "bin_classifier_8bit"};
  std::vector<bnn::PrecisionPolicy> policies;
  for (const auto& n : policy_names) policies.push_back(resolve_policy(n));
  const std::vector<bnn::MemoryReport> reports = bnn::compare_policies(spec, policies);

  const bnn::MemoryReport base32 = bnn::audit(spec, bnn::policy_32bit());
  const bnn::MemoryReport base8 = bnn::audit(spec, bnn::policy_8bit());
  const char* sep = g.tsv() ? "\t" : "  ";
  std::cout << "model" << sep << spec.name << "\n";
  std::cout << (g.tsv() ? "policy\tbytes\tMB\tKB\tsave_vs_32bit\tsave_vs_8bit\n"
                        : "policy                   bytes        MB        KB   vs32bit    vs8bit\n");
  for (const auto& r : reports) {
    std::ostringstream mb, kb, s32, s8;
    mb << std::fixed << std::setprecision(3) << r.megabytes();
    kb << std::fixed << std::setprecision(1) << r.kilobytes();
    s32 << std::fixed << std::setprecision(1) << bnn::savings_percent(r, base32) << "%";
    s8 << std::fixed << std::setprecision(1) << bnn::savings_percent(r, base8) << "%";
    if (g.tsv())
      std::cout << r.policy << "\t" << r.total_bytes << "\t" << mb.str() << "\t"
                << kb.str() << "\t" << s32.str() << "\t" << s8.str() << "\n";
    else
      std::cout << std::setw(22) << std::left << r.policy << std::right
                << std::setw(12) << r.total_bytes << std::setw(10) << mb.str()
                << std::setw(10) << kb.str() << std::setw(10) << s32.str()
                << std::setw(10) << s8.str() << "\n";
  }
  if (per_layer)
    for (const auto& r : reports) {
      std::cout << "\n";
      bnn::write_report(std::cout, r, g.tsv());
    }
  return 0;
}

int cmd_train(const GlobalOpts& g, const DataOpts& data, const std::string& arch,
              const std::string& strategy, bnn::TrainConfig cfg, std::size_t hidden,
              std::size_t filters, std::string model_out) {
  cfg.seed = g.seed;
  bnn::Dataset ds = bnn::normalize_per_channel(data.load(g.seed));
  const bnn::NetworkSpec spec = arch_for(arch, ds, hidden, filters);
  const bnn::TrainResult res = bnn::train(spec, ds, cfg, resolve_strategy(strategy));

  if (model_out.empty())
    model_out = (std::filesystem::path(g.output) / "model.bnnm").string();
  std::filesystem::create_directories(std::filesystem::path(model_out).parent_path().empty()
                                          ? "."
                                          : std::filesystem::path(model_out).parent_path().string());
  bnn::save_model(model_out, res.model);

  const char* sep = g.tsv() ? "\t" : "  ";
  std::cout << "samples" << sep << ds.size() << "\n";
  std::cout << "epochs" << sep << res.history.loss.size() << "\n";
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "final_loss" << sep << res.history.loss.back() << "\n";
  std::cout << "final_accuracy" << sep << res.history.final_accuracy << "\n";
  std::cout << "best_accuracy" << sep << res.history.best_accuracy << "\n";
  std::cout << "best_epoch" << sep << res.history.best_epoch << "\n";
  std::cout << "model_file" << sep << model_out << "\n";
  return 0;
}

int cmd_infer(const GlobalOpts& g, const DataOpts& data, const std::string& model_file,
              bool normalize) {
  const bnn::Model model = bnn::load_model(model_file);
  bnn::Dataset ds = data.load(g.seed);
  if (normalize) ds = bnn::normalize_per_channel(ds);
  const char* sep = g.tsv() ? "\t" : "  ";
  std::size_t correct = 0;
  std::cout << (g.tsv() ? "sample\tlabel\tpredicted\tscores\n" : "");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bnn::Prediction p = bnn::forward(model, ds.samples[i]);
    correct += p.label == ds.labels[i] ? 1 : 0;
    std::cout << i << sep << ds.labels[i] << sep << p.label << sep;
    for (std::size_t k = 0; k < p.scores.size(); ++k)
      std::cout << (k ? "," : "") << p.scores[k];
    std::cout << "\n";
  }
  std::cout << "accuracy" << sep << std::fixed << std::setprecision(4)
            << (ds.size() ? static_cast<double>(correct) / ds.size() : 0.0) << "\n";
  return 0;
}

int cmd_fault_sweep(const GlobalOpts& g, const DataOpts& data,
                    const std::string& model_file, const std::string& mode_name,
                    std::vector<double> cycles, std::size_t reps,
                    const std::string& ber_file, bool normalize) {
  const bnn::Model model = bnn::load_model(model_file);
  bnn::Dataset ds = data.load(g.seed);
  if (normalize) ds = bnn::normalize_per_channel(ds);
  if (cycles.empty()) cycles = {1, 10, 100, 1e3, 1e4, 1e5, 1e6, 1e7};

  std::vector<bnn::CellMode> modes;
  if (mode_name == "1T1R" || mode_name == "both") modes.push_back(bnn::CellMode::T1R1);
  if (mode_name == "2T2R" || mode_name == "both") modes.push_back(bnn::CellMode::T2R2);
  if (modes.empty()) throw bnn::ConfigError("unknown mode: " + mode_name);

  const char* sep = g.tsv() ? "\t" : "  ";
  std::cout << "mode" << sep << "cycles" << sep << "ber" << sep << "mean_acc" << sep
            << "std_acc" << sep << "mean_flips\n";
  std::cout << std::fixed;
  for (bnn::CellMode mode : modes) {
    bnn::FaultModel fm = bnn::make_fault_model(mode, g.seed);
    if (!ber_file.empty()) {
      std::ifstream is(ber_file);
      if (!is) throw bnn::ParseError("cannot open BER table: " + ber_file);
      fm.ber_curve = bnn::read_ber_curve(is);
    }
    for (double c : cycles) {
      double sum = 0, sum2 = 0, flips = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        bnn::FaultModel rep_fm = fm;
        rep_fm.seed = g.seed * 1000003 + r;
        const bnn::FaultyInferenceResult res = bnn::faulty_inference(
            model, rep_fm, static_cast<std::uint64_t>(c), ds.samples);
        std::size_t ok = 0;
        for (std::size_t i = 0; i < ds.size(); ++i)
          ok += res.outputs[i].label == ds.labels[i] ? 1 : 0;
        const double acc = static_cast<double>(ok) / ds.size();
        sum += acc;
        sum2 += acc * acc;
        flips += static_cast<double>(res.total_flips);
      }
      const double mean = sum / reps;
      const double var = std::max(0.0, sum2 / reps - mean * mean);
      std::cout << (mode == bnn::CellMode::T1R1 ? "1T1R" : "2T2R") << sep
                << std::setprecision(0) << c << sep << std::setprecision(6)
                << fm.ber_curve.at(c) << sep << std::setprecision(4) << mean << sep
                << std::sqrt(var) << sep << std::setprecision(1) << flips / reps
                << "\n";
    }
  }
  return 0;
}

int cmd_selftest(const GlobalOpts& g) {
  std::size_t failed = 0;
  auto check = [&](bool ok, const char* what) {
    std::cout << (ok ? "ok" : "FAILED") << "  " << what << "\n";
    failed += ok ? 0 : 1;
  };

  std::mt19937_64 rng(g.seed);
  bnn::BitTensor a(bnn::Shape{193}), b(bnn::Shape{193});
  long long dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.set(i, rng() & 1);
    b.set(i, rng() & 1);
    dot += a.get(i) * b.get(i);
  }
  check(bnn::binary_dot(a, b) == dot, "xnor-popcount dot product vs naive sum");

  bnn::SynapseArray arr(bnn::Shape{193}, bnn::CellMode::T2R2);
  arr.program(a);
  check(arr.read_all() == a, "differential array program/read round trip");

  check(bnn::audit(bnn::builtin_eeg(), bnn::policy_32bit()).total_bytes == 1222088,
        "32-bit byte audit of the wide-signal built-in");

  bnn::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch = 10;
  cfg.seed = g.seed;
  const bnn::Dataset ds = bnn::normalize_per_channel(
      bnn::make_synthetic(bnn::SyntheticTask::separable, 60, g.seed));
  const bnn::TrainResult res =
      bnn::train(bnn::synthetic_dense_spec(), ds, cfg, bnn::Strategy::all_binary);
  check(res.history.best_accuracy >= 0.9, "all-binary training on separable data");

  const std::string path = (std::filesystem::path(g.output) / "selftest.bnnm").string();
  bnn::save_model(path, res.model);
  const bnn::Model loaded = bnn::load_model(path);
  std::filesystem::remove(path);
  bool same = true;
  for (std::size_t i = 0; i < ds.size(); ++i)
    same = same && bnn::forward(loaded, ds.samples[i]).label ==
                       bnn::forward(res.model, ds.samples[i]).label;
  check(same, "model serialization round trip preserves predictions");

  std::cout << (failed ? "selftest: FAILED\n" : "selftest: ok\n");
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-packed binarized-network toolkit"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--seed", g.seed, "global RNG seed");
  app.add_option("--output", g.output, "output directory (manifest lands here)");
  app.add_option("--format", g.format, "aligned or tsv")
      ->check(CLI::IsMember({"aligned", "tsv"}));

  auto* shapes = app.add_subcommand("shapes", "per-layer output shapes");
  std::string model;
  shapes->add_option("--model", model, "built-in name or spec file")->required();

  auto* mem = app.add_subcommand("mem-report", "memory footprint per precision policy");
  std::string mem_model;
  std::vector<std::string> policies;
  bool per_layer = false;
  mem->add_option("--model", mem_model, "built-in name or spec file")->required();
  mem->add_option("--policy", policies, "policies to compare (repeatable)");
  mem->add_flag("--per-layer", per_layer, "emit per-layer tables");

  auto* train = app.add_subcommand("train", "train a model and write a .bnnm file");
  DataOpts train_data;
  train_data.attach(train);
  std::string arch = "dense", strategy = "all_binary", model_out;
  std::size_t hidden = 16, filters = 4;
  bnn::TrainConfig cfg;
  train->add_option("--arch", arch, "dense or conv");
  train->add_option("--strategy", strategy, "real, all_binary, or binary_classifier");
  train->add_option("--epochs", cfg.epochs);
  train->add_option("--batch", cfg.batch);
  train->add_option("--lr", cfg.lr);
  train->add_option("--noise-sigma", cfg.noise_sigma, "train-time Gaussian noise");
  train->add_option("--keep-conv", cfg.keep_conv, "conv dropout keep probability");
  train->add_option("--keep-classifier", cfg.keep_classifier);
  train->add_option("--hidden", hidden, "dense hidden width");
  train->add_option("--filters", filters, "conv filter count");
  train->add_option("--model-out", model_out, "model file path");

  auto* infer = app.add_subcommand("infer", "run a saved model over a dataset");
  DataOpts infer_data;
  infer_data.attach(infer);
  std::string infer_model;
  bool no_norm = false;
  infer->add_option("--model-file", infer_model, ".bnnm file")->required();
  infer->add_flag("--no-normalize", no_norm, "skip per-channel normalization");

  auto* sweep = app.add_subcommand("fault-sweep",
                                   "accuracy vs write-cycle count under read faults");
  DataOpts sweep_data;
  sweep_data.attach(sweep);
  std::string sweep_model, mode = "both", ber_file;
  std::vector<double> cycles;
  std::size_t reps = 20;
  bool sweep_no_norm = false;
  sweep->add_option("--model-file", sweep_model, ".bnnm file")->required();
  sweep->add_option("--mode", mode, "1T1R, 2T2R, or both");
  sweep->add_option("--cycles", cycles, "cycle counts (repeatable)");
  sweep->add_option("--reps", reps, "seeded repetitions per point");
  sweep->add_option("--ber-file", ber_file, "override BER table file");
  sweep->add_flag("--no-normalize", sweep_no_norm);

  app.add_subcommand("selftest", "quick end-to-end sanity checks");

  CLI11_PARSE(app, argc, argv);

  try {
    write_manifest(g, join_args(argc, argv));
    const CLI::App* sub = app.get_subcommands().at(0);
    const std::string name = sub->get_name();
    if (name == "shapes") return cmd_shapes(g, model);
    if (name == "mem-report") return cmd_mem_report(g, mem_model, policies, per_layer);
    if (name == "train")
      return cmd_train(g, train_data, arch, strategy, cfg, hidden, filters, model_out);
    if (name == "infer") return cmd_infer(g, infer_data, infer_model, !no_norm);
    if (name == "fault-sweep")
      return cmd_fault_sweep(g, sweep_data, sweep_model, mode, cycles, reps, ber_file,
                             !sweep_no_norm);
    if (name == "selftest") return cmd_selftest(g);
  } catch (const bnn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qft/gradflow.hpp"
#include "qft/profiler.hpp"
#include "qft/quantize.hpp"
#include "qft/trainer.hpp"

namespace {

using qft::Tensor;

// Tensor sources accepted by `sweep` and `stats`:
//   <path>.qftc                 checkpoint; uses the reconstructed layer weights
//   synthetic                   heavy-tailed 256x1024, seed 1
//   synthetic:normal-<R>x<C>[-seed<k>]
//   synthetic:heavy-<R>x<C>[-seed<k>]
Tensor<float> synthetic_tensor(const std::string& spec) {
  int rows = 256, cols = 1024;
  unsigned long long seed = 1;
  bool heavy = true;
  if (spec != "synthetic") {
    char kind[16] = {0};
    if (std::sscanf(spec.c_str(), "synthetic:%15[a-z]-%dx%d-seed%llu", kind, &rows, &cols,
                    &seed) < 3)
      throw std::invalid_argument("bad tensor spec '" + spec + "'");
    const std::string k = kind;
    if (k == "normal") heavy = false;
    else if (k == "heavy") heavy = true;
    else throw std::invalid_argument("tensor kind must be normal or heavy, got '" + k + "'");
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("tensor dims must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<float> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(normal(rng));
  if (heavy) {
    // ~0.5% of entries blown up to 100..1000 sigma, signs balanced
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> amp(100.0, 1000.0);
    for (std::size_t i = 0; i < t.size(); ++i)
      if (u(rng) < 0.005) {
        const double a = amp(rng);
        t[i] = static_cast<float>(u(rng) < 0.5 ? -a : a);
      }
  }
  return t;
}

std::vector<Tensor<float>> load_tensors(const std::string& source) {
  if (source.rfind("synthetic", 0) == 0) return {synthetic_tensor(source)};
  auto [model, state] = qft::load_checkpoint(source);
  std::vector<Tensor<float>> out;
  for (const auto& layer : model.layers()) out.push_back(qft::reconstruct(layer.weight));
  return out;
}

std::vector<double> parse_fractions(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  if (out.empty()) throw std::invalid_argument("--fractions is empty");
  return out;
}

int run_profile(std::uint64_t params, const std::string& method_name, double outlier_fraction,
                double unquantized_fraction, std::uint64_t channels, int index_bytes,
                std::uint64_t activation_bytes, const std::string& unit_name,
                const std::string& csv_path) {
  qft::ProfileConfig cfg;
  cfg.param_count = params;
  cfg.outlier_fraction = outlier_fraction;
  cfg.unquantized_fraction = unquantized_fraction;
  cfg.channels = channels;
  cfg.sparse_index_bytes = index_bytes;
  cfg.activation_bytes = activation_bytes;
  const qft::Method method = qft::method_from_name(method_name);
  const qft::MemoryProfile p = qft::analytic_profile(cfg, method);
  qft::ByteUnit unit = qft::ByteUnit::gib;
  if (unit_name == "gb") unit = qft::ByteUnit::gb;
  else if (unit_name == "bytes") unit = qft::ByteUnit::bytes;
  qft::write_profile_report(std::cout, p, unit);
  if (!csv_path.empty()) {
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + csv_path + "'");
    qft::write_profile_csv(f, {p});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantized full-state training engine"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "run one training job from a config file");
  train_cmd->add_option("--config", config_path, "key=value config file")->required();

  auto* compare_cmd =
      app.add_subcommand("compare", "train qft-lion, fp-lion and fp-adam from one config");
  compare_cmd->add_option("--config", config_path, "key=value config file")->required();

  std::uint64_t params = 0;
  std::string method, unit = "gib", csv_path;
  double outlier_fraction = 0.01, unquantized_fraction = 0.0;
  std::uint64_t channels = 0, activation_bytes = 0;
  int index_bytes = 4;
  auto* profile_cmd = app.add_subcommand("profile", "closed-form optimizer memory footprint");
  profile_cmd->add_option("--params", params, "parameter count")->required();
  profile_cmd->add_option("--method", method, "adam | adam-mixed | bitsandbytes | lion | qft")
      ->required();
  profile_cmd->add_option("--outlier-fraction", outlier_fraction, "sparse outlier fraction");
  profile_cmd->add_option("--unquantized-fraction", unquantized_fraction,
                          "fraction kept in full precision");
  profile_cmd->add_option("--channels", channels, "total quantization channels");
  profile_cmd->add_option("--sparse-index-bytes", index_bytes, "bytes per sparse index");
  profile_cmd->add_option("--activation-bytes", activation_bytes, "activation footprint to add");
  profile_cmd->add_option("--unit", unit, "gib | gb | bytes")
      ->check(CLI::IsMember({"gib", "gb", "bytes"}));
  profile_cmd->add_option("--csv", csv_path, "also write method,component,bytes rows here");

  std::string weights_source, fractions_csv = "0,0.0045,0.01,0.03,0.05", out_path;
  int bit_width = 8;
  std::string threshold_kind = "percentile";
  auto* sweep_cmd =
      app.add_subcommand("sweep", "storage vs reconstruction error across outlier fractions");
  sweep_cmd->add_option("--weights", weights_source, "checkpoint path or synthetic[:...]")
      ->required();
  sweep_cmd->add_option("--fractions", fractions_csv, "comma-separated outlier fractions");
  sweep_cmd->add_option("--bit-width", bit_width, "dense payload bits")->check(CLI::Range(2, 8));
  sweep_cmd->add_option("--threshold-kind", threshold_kind, "percentile | range-fraction")
      ->check(CLI::IsMember({"percentile", "range-fraction"}));
  sweep_cmd->add_option("--out", out_path, "write the csv here instead of stdout");

  std::string tensor_source;
  double k_sigma = 6.0;
  auto* stats_cmd = app.add_subcommand("stats", "value distribution of a tensor source");
  stats_cmd->add_option("--tensor", tensor_source, "checkpoint path or synthetic[:...]")
      ->required();
  stats_cmd->add_option("--k-sigma", k_sigma, "outlier cutoff in standard deviations");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const qft::TrainSummary s = qft::train(qft::parse_train_config(config_path));
      std::printf("optimizer=%s\n", s.optimizer_kind.c_str());
      std::printf("steps=%d\n", s.steps);
      std::printf("initial_loss=%.9g\n", s.initial_loss);
      std::printf("final_loss=%.9g\n", s.final_loss);
      std::printf("model_state_bytes=%llu\n",
                  static_cast<unsigned long long>(s.final_state_bytes));
      std::printf("metrics=%s\n", s.metrics_path.c_str());
      if (!s.checkpoint_path.empty()) std::printf("checkpoint=%s\n", s.checkpoint_path.c_str());
      return 0;
    }
    if (*compare_cmd) {
      const qft::CompareResult r = qft::compare_runs(qft::parse_train_config(config_path));
      std::ifstream f(r.report_path);
      std::cout << f.rdbuf();
      std::printf("report=%s\n", r.report_path.c_str());
      std::printf("losses=%s\n", r.losses_path.c_str());
      std::printf("memory=%s\n", r.memory_csv_path.c_str());
      return 0;
    }
    if (*profile_cmd)
      return run_profile(params, method, outlier_fraction, unquantized_fraction, channels,
                         index_bytes, activation_bytes, unit, csv_path);
    if (*sweep_cmd) {
      qft::ThresholdKind kind = threshold_kind == "percentile"
                                    ? qft::ThresholdKind::percentile
                                    : qft::ThresholdKind::range_fraction;
      std::ostream* os = &std::cout;
      std::ofstream file;
      if (!out_path.empty()) {
        file.open(out_path, std::ios::trunc);
        if (!file) throw std::runtime_error("cannot open '" + out_path + "'");
        os = &file;
      }
      *os << "tensor,fraction,bytes,l2\n";
      const auto tensors = load_tensors(weights_source);
      const auto fractions = parse_fractions(fractions_csv);
      char buf[96];
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        for (const auto& row : qft::threshold_sweep(tensors[i], fractions, bit_width, kind)) {
          std::snprintf(buf, sizeof(buf), "%zu,%.9g,%llu,%.9g\n", i, row.fraction,
                        static_cast<unsigned long long>(row.bytes), row.l2);
          *os << buf;
        }
      }
      return 0;
    }
    if (*stats_cmd) {
      const auto tensors = load_tensors(tensor_source);
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        std::printf("tensor=%zu\n", i);
        qft::write_stats_report(std::cout, qft::distribution_stats(tensors[i], k_sigma));
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

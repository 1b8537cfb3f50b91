#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qft/gradflow.hpp"
#include "qft/network.hpp"
#include "qft/optimizer.hpp"
#include "qft/tensor.hpp"

namespace qft {

enum class Method { adam, adam_mixed, bitsandbytes, lion, qft };

const char* method_name(Method m);
Method method_from_name(const std::string& name);  // throws on unknown name

struct MemoryProfile {
  Method method = Method::adam;
  std::uint64_t param_count = 0;
  std::uint64_t weights_bytes = 0;
  std::uint64_t gradients_bytes = 0;
  std::uint64_t weight_copies_bytes = 0;
  std::uint64_t momentum_bytes = 0;
  std::uint64_t variances_bytes = 0;
  std::uint64_t activation_bytes = 0;
  double ratio_vs_adam = 0;  // model states only, activations excluded

  std::uint64_t model_state_bytes() const {
    return weights_bytes + gradients_bytes + weight_copies_bytes + momentum_bytes +
           variances_bytes;
  }
  std::uint64_t total_bytes() const { return model_state_bytes() + activation_bytes; }
};

struct ProfileConfig {
  std::uint64_t param_count = 0;
  int fp_bytes = 4;               // full-precision element width
  int int_bytes = 1;              // quantized element width
  double outlier_fraction = 0.01;
  double unquantized_fraction = 0.0;
  std::uint64_t channels = 0;     // total channel count across weight tensors
  int sparse_index_bytes = 4;
  std::uint64_t activation_bytes = 0;
  // exact-structure overrides, filled by profile_config_for() so analytic and
  // measured numbers can be compared on a live model; negative = use p*N
  std::int64_t exact_sparse_nnz = -1;
  std::uint64_t tensor_count = 0;
};

// Closed-form footprint of holding one model's optimizer states.
MemoryProfile analytic_profile(const ProfileConfig& cfg, Method method);

// Byte-exact footprint of live engine structures.
MemoryProfile measured_profile(const Model<float>& model, const LionState<float>* state,
                               const GradientStack<float>* stack,
                               const SavedTensors<float>* saved = nullptr);
MemoryProfile measured_profile_fp_lion(const FpModel<float>& model,
                                       const FpLionState<float>* state,
                                       const std::vector<Tensor<float>>* grads);
MemoryProfile measured_profile_fp_adam(const FpModel<float>& model, const AdamState<float>* state,
                                       const std::vector<Tensor<float>>* grads);

// Analytic config describing a live model exactly (channels, tensor count,
// actual sparse counts), for analytic-vs-measured parity.
ProfileConfig profile_config_for(const Model<float>& model);

struct SweepRow {
  double fraction = 0;
  std::uint64_t bytes = 0;  // dense + sparse + channel params + thresholds
  double l2 = 0;            // reconstruction error vs the input tensor
};

// Decompose w at each fraction and report storage vs reconstruction error.
std::vector<SweepRow> threshold_sweep(const Tensor<float>& w, const std::vector<double>& fractions,
                                      int bit_width = 8,
                                      ThresholdKind kind = ThresholdKind::percentile);

struct DistributionStats {
  double min = 0;
  double max = 0;
  double mean = 0;
  double stdev = 0;
  double range_ratio = 0;  // full range / central-99% range
  std::uint64_t outlier_count = 0;
  double k_sigma = 6.0;    // |x - mean| > k*stdev counts as an outlier
};

DistributionStats distribution_stats(const Tensor<float>& x, double k_sigma = 6.0);

// key=value report and machine-readable CSV rows (method,component,bytes)
enum class ByteUnit { bytes, gib, gb };
void write_profile_report(std::ostream& os, const MemoryProfile& p,
                          ByteUnit unit = ByteUnit::gib);
void write_profile_csv(std::ostream& os, const std::vector<MemoryProfile>& profiles,
                       bool header = true);
void write_stats_report(std::ostream& os, const DistributionStats& s);

}  // namespace qft

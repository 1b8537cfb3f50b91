#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qft/network.hpp"
#include "qft/optimizer.hpp"
#include "qft/profiler.hpp"
#include "qft/tensor.hpp"

namespace qft {

// ---- dataset ----

struct Dataset {
  Tensor<float> inputs;   // [n x in_dim]
  Tensor<float> targets;  // [n x out_dim]

  int size() const { return inputs.rows(); }
};

// Load a CSV of "in_dim feature columns then out_dim target columns", or
// generate a deterministic regression set from a spec string of the form
// "synthetic:reg-<in>-<out>-n<rows>". Rows are shuffled with the given seed.
Dataset ingest_dataset(const std::string& source, int in_dim, int out_dim, std::uint64_t seed);

// ---- configuration ----

enum class LrSchedule { constant, linear };

struct TrainConfig {
  ModelConfig model;                      // dims default to match the default dataset
  std::string optimizer_kind = "qft-lion";  // qft-lion | fp-lion | fp-adam
  float lr = 1e-3f;
  float lr_end = -1.0f;                   // < 0 means "same as lr"
  LrSchedule schedule = LrSchedule::constant;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float weight_decay = 0.0f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_epsilon = 1e-8f;
  int batch_size = 32;
  int micro_batches = 1;
  int epochs = 1;
  int steps_per_epoch = 100;
  std::string dataset = "synthetic:reg-8-1-n1024";
  std::uint64_t seed = 42;
  std::string out_dir = "runs/out";

  int total_steps() const { return epochs * steps_per_epoch; }
  void validate() const;
};

// Flat key=value file; '#' starts a comment; unknown keys are rejected.
TrainConfig parse_train_config(const std::string& path);
TrainConfig parse_train_config_text(const std::string& text, const std::string& origin);

// ---- checkpointing ----

// Binary little-endian container for the quantized model + momentum,
// CRC32-protected. Layout (version 1):
//   "QFTC" | u16 version | u16 layer_count | u8 bit_width | u8 mode |
//   u8 threshold_kind | u8 loss | u8 junctions[layer_count-1] |
//   f32 outlier_fraction | layers... | u32 crc32(all preceding bytes)
// Affine layer: u32 rows, u32 cols, f32 scale[rows], i32 zero_point[rows],
//   f32 t_min[rows], f32 t_max[rows], u8 dense[rows*cols], u32 nnz,
//   i32 row_ptr[rows+1], i32 col_idx[nnz], f32 value[nnz],
//   then the momentum tensor as scale/zero_point/payload.
// Pass-through layer: u32 rows, u32 cols, f32 weights[], f32 momentum[].
void save_checkpoint(const Model<float>& model, const LionState<float>& state,
                     const std::string& path);
std::pair<Model<float>, LionState<float>> load_checkpoint(const std::string& path);

// ---- training ----

// Re-derive per-channel thresholds from the current weights and re-decompose.
// Called at epoch boundaries only; between calls the cached thresholds (and
// therefore the dense affine params) stay fixed.
void refresh_thresholds(Model<float>& model, double fraction);

struct StepMetrics {
  int step = 0;
  int epoch = 0;
  double loss = 0;
  double grad_norm = 0;            // pre-quantization
  std::uint64_t state_bytes = 0;   // measured after backward, before the step
};

struct TrainSummary {
  std::string optimizer_kind;
  double initial_loss = 0;
  double final_loss = 0;           // mean over the last 5% of steps
  int steps = 0;
  std::uint64_t final_state_bytes = 0;
  MemoryProfile profile;           // measured at the last step
  std::vector<StepMetrics> history;
  std::string metrics_path;
  std::string checkpoint_path;     // empty for fp baselines
};

// Run one training job per the config; writes metrics.csv and (for qft-lion)
// per-epoch + final checkpoints under out_dir.
TrainSummary train(const TrainConfig& cfg);

struct CompareResult {
  TrainSummary qft_lion;
  TrainSummary fp_lion;
  TrainSummary fp_adam;
  std::string report_path;
  std::string losses_path;
  std::string memory_csv_path;
};

// Train qft-lion, fp-lion and fp-adam from the same seed and dataset; write
// compare_report.txt (key=value), losses.csv and memory.csv under out_dir.
CompareResult compare_runs(const TrainConfig& cfg);

}  // namespace qft

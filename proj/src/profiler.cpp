#include "qft/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "qft/quantize.hpp"

namespace qft {

const char* method_name(Method m) {
  switch (m) {
    case Method::adam: return "adam";
    case Method::adam_mixed: return "adam-mixed";
    case Method::bitsandbytes: return "bitsandbytes";
    case Method::lion: return "lion";
    case Method::qft: return "qft";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "adam") return Method::adam;
  if (name == "adam-mixed") return Method::adam_mixed;
  if (name == "bitsandbytes") return Method::bitsandbytes;
  if (name == "lion") return Method::lion;
  if (name == "qft") return Method::qft;
  throw std::invalid_argument("unknown method '" + name +
                              "' (expected adam, adam-mixed, bitsandbytes, lion or qft)");
}

namespace {

std::uint64_t llu(double v) { return static_cast<std::uint64_t>(std::llround(v)); }

// Per-state channel bookkeeping: scale + zero-point per channel. The weight
// state additionally carries thresholds and the amortized CSR row pointer.
std::uint64_t state_channel_overhead(const ProfileConfig& cfg) {
  return cfg.channels * (sizeof(float) + sizeof(std::int32_t));
}

std::uint64_t weight_channel_overhead(const ProfileConfig& cfg) {
  return cfg.channels * (sizeof(float) + sizeof(std::int32_t)   // affine params
                         + 2 * sizeof(float)                    // thresholds
                         + sizeof(std::int32_t))                // row_ptr, one per row
         + cfg.tensor_count * sizeof(std::int32_t);             // row_ptr head entries
}

}  // namespace

MemoryProfile analytic_profile(const ProfileConfig& cfg, Method method) {
  if (cfg.param_count == 0) throw std::invalid_argument("analytic_profile: param_count is 0");
  const double n = static_cast<double>(cfg.param_count);
  const double fp = cfg.fp_bytes;
  const double half = 2.0;
  MemoryProfile p;
  p.method = method;
  p.param_count = cfg.param_count;
  p.activation_bytes = cfg.activation_bytes;
  switch (method) {
    case Method::adam:
      p.weights_bytes = llu(n * fp);
      p.gradients_bytes = llu(n * fp);
      p.momentum_bytes = llu(n * fp);
      p.variances_bytes = llu(n * fp);
      break;
    case Method::adam_mixed:
      // half-precision weights and grads, fp32 master copies and moments
      p.weights_bytes = llu(n * half);
      p.gradients_bytes = llu(n * half);
      p.weight_copies_bytes = llu(n * fp);
      p.momentum_bytes = llu(n * fp);
      p.variances_bytes = llu(n * fp);
      break;
    case Method::bitsandbytes:
      // half-precision weights and grads, fp32 master copies, 8-bit moments
      p.weights_bytes = llu(n * half);
      p.gradients_bytes = llu(n * half);
      p.weight_copies_bytes = llu(n * fp);
      p.momentum_bytes = llu(n * cfg.int_bytes);
      p.variances_bytes = llu(n * cfg.int_bytes);
      break;
    case Method::lion:
      p.weights_bytes = llu(n * fp);
      p.gradients_bytes = llu(n * fp);
      p.momentum_bytes = llu(n * fp);
      break;
    case Method::qft: {
      const double pf = cfg.outlier_fraction;
      const double uf = cfg.unquantized_fraction;
      if (pf + uf > 1.0) throw std::invalid_argument("analytic_profile: fractions exceed 1");
      const double sparse_elems =
          cfg.exact_sparse_nnz >= 0 ? static_cast<double>(cfg.exact_sparse_nnz) : n * pf;
      const double dense_elems = n * (1.0 - uf) - sparse_elems;
      p.weights_bytes = llu(dense_elems * cfg.int_bytes +
                            sparse_elems * (fp + cfg.sparse_index_bytes) + n * uf * fp) +
                        weight_channel_overhead(cfg);
      p.gradients_bytes =
          llu(n * ((1.0 - uf) * cfg.int_bytes + uf * fp)) + state_channel_overhead(cfg);
      p.momentum_bytes = p.gradients_bytes;
      break;
    }
  }
  const double adam_states = 4.0 * n * fp;
  p.ratio_vs_adam = static_cast<double>(p.model_state_bytes()) / adam_states;
  return p;
}

namespace {

std::uint64_t stack_bytes(const GradientStack<float>& stack) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < stack.size(); ++i) total += byte_size(stack.at(i).grad);
  return total;
}

void finish_ratio(MemoryProfile& p) {
  const double adam_states = 4.0 * 4.0 * static_cast<double>(p.param_count);
  p.ratio_vs_adam = adam_states > 0 ? static_cast<double>(p.model_state_bytes()) / adam_states : 0;
}

}  // namespace

MemoryProfile measured_profile(const Model<float>& model, const LionState<float>* state,
                               const GradientStack<float>* stack,
                               const SavedTensors<float>* saved) {
  MemoryProfile p;
  p.method = Method::qft;
  p.param_count = model.param_count();
  for (const auto& l : model.layers()) p.weights_bytes += byte_size(l.weight);
  if (state)
    for (const auto& m : state->momentum) p.momentum_bytes += byte_size(m);
  if (stack) p.gradients_bytes = stack_bytes(*stack);
  if (saved)
    for (const auto& t : saved->inputs) p.activation_bytes += t.size() * sizeof(float);
  finish_ratio(p);
  return p;
}

MemoryProfile measured_profile_fp_lion(const FpModel<float>& model,
                                       const FpLionState<float>* state,
                                       const std::vector<Tensor<float>>* grads) {
  MemoryProfile p;
  p.method = Method::lion;
  p.param_count = model.param_count();
  for (const auto& w : model.weights()) p.weights_bytes += w.size() * sizeof(float);
  if (state)
    for (const auto& m : state->momentum) p.momentum_bytes += m.size() * sizeof(float);
  if (grads)
    for (const auto& g : *grads) p.gradients_bytes += g.size() * sizeof(float);
  finish_ratio(p);
  return p;
}

MemoryProfile measured_profile_fp_adam(const FpModel<float>& model, const AdamState<float>* state,
                                       const std::vector<Tensor<float>>* grads) {
  MemoryProfile p;
  p.method = Method::adam;
  p.param_count = model.param_count();
  for (const auto& w : model.weights()) p.weights_bytes += w.size() * sizeof(float);
  if (state) {
    for (const auto& m : state->momentum) p.momentum_bytes += m.size() * sizeof(float);
    for (const auto& v : state->variance) p.variances_bytes += v.size() * sizeof(float);
  }
  if (grads)
    for (const auto& g : *grads) p.gradients_bytes += g.size() * sizeof(float);
  finish_ratio(p);
  return p;
}

ProfileConfig profile_config_for(const Model<float>& model) {
  ProfileConfig cfg;
  cfg.param_count = model.param_count();
  cfg.outlier_fraction = model.config().outlier_fraction;
  cfg.tensor_count = model.layers().size();
  std::int64_t nnz = 0;
  for (const auto& l : model.layers()) {
    cfg.channels += static_cast<std::uint64_t>(l.weight.rows());
    nnz += static_cast<std::int64_t>(l.weight.sparse.nnz());
  }
  cfg.exact_sparse_nnz = nnz;
  return cfg;
}

std::vector<SweepRow> threshold_sweep(const Tensor<float>& w, const std::vector<double>& fractions,
                                      int bit_width, ThresholdKind kind) {
  if (fractions.empty()) throw std::invalid_argument("threshold_sweep: no fractions");
  std::vector<SweepRow> rows;
  rows.reserve(fractions.size());
  for (double f : fractions) {
    auto dsw = decompose_weight(w, f, bit_width, QuantMode::affine, kind);
    SweepRow r;
    r.fraction = f;
    r.bytes = byte_size(dsw);
    r.l2 = l2_distance(reconstruct(dsw), w);
    rows.push_back(r);
  }
  return rows;
}

DistributionStats distribution_stats(const Tensor<float>& x, double k_sigma) {
  if (x.empty()) throw std::invalid_argument("distribution_stats: empty tensor");
  DistributionStats s;
  s.k_sigma = k_sigma;
  double sum = 0;
  s.min = s.max = x[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  const double n = static_cast<double>(x.size());
  s.mean = sum / n;
  double ssq = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - s.mean;
    ssq += d * d;
  }
  s.stdev = std::sqrt(ssq / n);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i] - s.mean) > k_sigma * s.stdev) ++s.outlier_count;
  std::vector<float> sorted(x.data(), x.data() + x.size());
  std::sort(sorted.begin(), sorted.end());
  const double central =
      detail::sorted_quantile(sorted, 0.995) - detail::sorted_quantile(sorted, 0.005);
  const double range = s.max - s.min;
  s.range_ratio = central > 0 ? range / central : (range > 0 ? HUGE_VAL : 1.0);
  return s;
}

namespace {
double in_unit(std::uint64_t bytes, ByteUnit unit) {
  switch (unit) {
    case ByteUnit::bytes: return static_cast<double>(bytes);
    case ByteUnit::gib: return static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0);
    case ByteUnit::gb: return static_cast<double>(bytes) / 1e9;
  }
  return 0;
}

const char* unit_name(ByteUnit unit) {
  switch (unit) {
    case ByteUnit::bytes: return "bytes";
    case ByteUnit::gib: return "gib";
    case ByteUnit::gb: return "gb";
  }
  return "?";
}
}  // namespace

void write_profile_report(std::ostream& os, const MemoryProfile& p, ByteUnit unit) {
  char buf[64];
  auto put = [&](const char* key, std::uint64_t bytes) {
    os << key << "_bytes=" << bytes << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", in_unit(bytes, unit));
    os << key << "_" << unit_name(unit) << "=" << buf << "\n";
  };
  os << "method=" << method_name(p.method) << "\n";
  os << "param_count=" << p.param_count << "\n";
  put("weights", p.weights_bytes);
  put("gradients", p.gradients_bytes);
  put("weight_copies", p.weight_copies_bytes);
  put("momentum", p.momentum_bytes);
  put("variances", p.variances_bytes);
  put("activation", p.activation_bytes);
  put("model_state", p.model_state_bytes());
  put("total", p.total_bytes());
  std::snprintf(buf, sizeof(buf), "%.6f", p.ratio_vs_adam);
  os << "ratio_vs_adam=" << buf << "\n";
}

void write_profile_csv(std::ostream& os, const std::vector<MemoryProfile>& profiles, bool header) {
  if (header) os << "method,component,bytes\n";
  for (const auto& p : profiles) {
    const char* m = method_name(p.method);
    os << m << ",weights," << p.weights_bytes << "\n";
    os << m << ",gradients," << p.gradients_bytes << "\n";
    os << m << ",weight_copies," << p.weight_copies_bytes << "\n";
    os << m << ",momentum," << p.momentum_bytes << "\n";
    os << m << ",variances," << p.variances_bytes << "\n";
    os << m << ",activation," << p.activation_bytes << "\n";
  }
}

void write_stats_report(std::ostream& os, const DistributionStats& s) {
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    os << key << "=" << buf << "\n";
  };
  put("min", s.min);
  put("max", s.max);
  put("mean", s.mean);
  put("stdev", s.stdev);
  put("range_ratio", s.range_ratio);
  os << "outlier_count=" << s.outlier_count << "\n";
  put("k_sigma", s.k_sigma);
}

}  // namespace qft

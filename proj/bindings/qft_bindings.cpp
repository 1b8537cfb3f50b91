// Python surface of the training engine. Arrays cross the boundary as 2-d
// float32 numpy buffers; scalar results come back as plain dicts so the module
// stays usable without any python-side wrapper code.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "qft/profiler.hpp"
#include "qft/quantize.hpp"
#include "qft/trainer.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

qft::Tensor<float> to_tensor(const FloatArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto rows = static_cast<int>(a.shape(0));
  const auto cols = static_cast<int>(a.shape(1));
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("expected a non-empty 2-d array");
  qft::Tensor<float> t(rows, cols);
  std::memcpy(t.data(), a.data(), sizeof(float) * t.size());
  return t;
}

py::array_t<float> to_array(const qft::Tensor<float>& t) {
  py::array_t<float> a({t.rows(), t.cols()});
  std::memcpy(a.mutable_data(), t.data(), sizeof(float) * t.size());
  return a;
}

qft::ThresholdKind kind_from_name(const std::string& name) {
  if (name == "percentile") return qft::ThresholdKind::percentile;
  if (name == "range-fraction") return qft::ThresholdKind::range_fraction;
  throw std::invalid_argument("threshold kind must be percentile or range-fraction, got '" +
                              name + "'");
}

py::dict profile_dict(const qft::MemoryProfile& p) {
  py::dict d;
  d["method"] = qft::method_name(p.method);
  d["param_count"] = p.param_count;
  d["weights_bytes"] = p.weights_bytes;
  d["gradients_bytes"] = p.gradients_bytes;
  d["weight_copies_bytes"] = p.weight_copies_bytes;
  d["momentum_bytes"] = p.momentum_bytes;
  d["variances_bytes"] = p.variances_bytes;
  d["activation_bytes"] = p.activation_bytes;
  d["model_state_bytes"] = p.model_state_bytes();
  d["total_bytes"] = p.total_bytes();
  d["ratio_vs_adam"] = p.ratio_vs_adam;
  return d;
}

py::dict summary_dict(const qft::TrainSummary& s) {
  py::dict d;
  d["optimizer_kind"] = s.optimizer_kind;
  d["initial_loss"] = s.initial_loss;
  d["final_loss"] = s.final_loss;
  d["steps"] = s.steps;
  d["final_state_bytes"] = s.final_state_bytes;
  d["metrics_path"] = s.metrics_path;
  d["checkpoint_path"] = s.checkpoint_path;
  std::vector<double> losses;
  losses.reserve(s.history.size());
  for (const auto& row : s.history) losses.push_back(row.loss);
  d["losses"] = losses;
  return d;
}

}  // namespace

PYBIND11_MODULE(qft_engine, m) {
  m.doc() = "quantized full-state training engine";

  m.def(
      "quantize_roundtrip",
      [](const FloatArray& x, int bit_width) {
        const auto t = to_tensor(x);
        return to_array(dequantize(quantize_state(t, bit_width, qft::QuantMode::affine)));
      },
      py::arg("x"), py::arg("bit_width") = 8,
      "Channel-wise affine quantize + dequantize; rows are channels.");

  m.def(
      "quantize_params",
      [](const FloatArray& x, int bit_width) {
        const auto q = quantize_state(to_tensor(x), bit_width, qft::QuantMode::affine);
        py::dict d;
        d["scale"] = py::cast(q.params.scale);
        d["zero_point"] = py::cast(q.params.zero_point);
        d["bit_width"] = q.params.bit_width;
        return d;
      },
      py::arg("x"), py::arg("bit_width") = 8,
      "Per-row scale and zero point the quantizer would use.");

  m.def(
      "decompose",
      [](const FloatArray& x, double outlier_fraction, int bit_width,
         const std::string& threshold_kind) {
        const auto t = to_tensor(x);
        const auto dsw = decompose_weight(t, outlier_fraction, bit_width,
                                          qft::QuantMode::affine,
                                          kind_from_name(threshold_kind));
        const auto back = reconstruct(dsw);
        double sq = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double d = double(t[i]) - double(back[i]);
          sq += d * d;
        }
        py::dict d;
        d["reconstructed"] = to_array(back);
        d["nnz"] = dsw.sparse.nnz();
        d["bytes"] = byte_size(dsw);
        d["l2_error"] = std::sqrt(sq);
        return d;
      },
      py::arg("x"), py::arg("outlier_fraction") = 0.01, py::arg("bit_width") = 8,
      py::arg("threshold_kind") = "percentile",
      "Dense-and-sparse split: quantized core plus exact outliers.");

  m.def(
      "threshold_sweep",
      [](const FloatArray& x, const std::vector<double>& fractions, int bit_width,
         const std::string& threshold_kind) {
        const auto rows = qft::threshold_sweep(to_tensor(x), fractions, bit_width,
                                               kind_from_name(threshold_kind));
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["fraction"] = r.fraction;
          d["bytes"] = r.bytes;
          d["l2_error"] = r.l2;
          out.append(d);
        }
        return out;
      },
      py::arg("x"), py::arg("fractions"), py::arg("bit_width") = 8,
      py::arg("threshold_kind") = "percentile",
      "Storage vs reconstruction error across outlier fractions.");

  m.def(
      "distribution_stats",
      [](const FloatArray& x, double k_sigma) {
        const auto s = qft::distribution_stats(to_tensor(x), k_sigma);
        py::dict d;
        d["min"] = s.min;
        d["max"] = s.max;
        d["mean"] = s.mean;
        d["stdev"] = s.stdev;
        d["range_ratio"] = s.range_ratio;
        d["outlier_count"] = s.outlier_count;
        d["k_sigma"] = s.k_sigma;
        return d;
      },
      py::arg("x"), py::arg("k_sigma") = 6.0,
      "Location, spread and tail summary of a tensor.");

  m.def(
      "analytic_profile",
      [](std::uint64_t param_count, const std::string& method, double outlier_fraction,
         double unquantized_fraction, std::uint64_t channels, std::uint64_t activation_bytes) {
        qft::ProfileConfig cfg;
        cfg.param_count = param_count;
        cfg.outlier_fraction = outlier_fraction;
        cfg.unquantized_fraction = unquantized_fraction;
        cfg.channels = channels;
        cfg.activation_bytes = activation_bytes;
        return profile_dict(qft::analytic_profile(cfg, qft::method_from_name(method)));
      },
      py::arg("param_count"), py::arg("method"), py::arg("outlier_fraction") = 0.01,
      py::arg("unquantized_fraction") = 0.0, py::arg("channels") = 0,
      py::arg("activation_bytes") = 0,
      "Closed-form training-state footprint for one optimizer family.");

  m.def(
      "train",
      [](const std::string& config_path) {
        return summary_dict(qft::train(qft::parse_train_config(config_path)));
      },
      py::arg("config_path"), "Run one training job from a key=value config file.");

  m.def(
      "compare",
      [](const std::string& config_path) {
        const auto res = qft::compare_runs(qft::parse_train_config(config_path));
        py::dict d;
        d["qft_lion"] = summary_dict(res.qft_lion);
        d["fp_lion"] = summary_dict(res.fp_lion);
        d["fp_adam"] = summary_dict(res.fp_adam);
        d["report_path"] = res.report_path;
        d["losses_path"] = res.losses_path;
        d["memory_csv_path"] = res.memory_csv_path;
        return d;
      },
      py::arg("config_path"),
      "Train qft-lion, fp-lion and fp-adam from one config and report all three.");
}

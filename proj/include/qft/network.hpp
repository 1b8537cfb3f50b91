#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qft/quantize.hpp"
#include "qft/tensor.hpp"

namespace qft {

enum class Activation : std::uint8_t { none = 0, relu = 1 };
enum class LossKind : std::uint8_t { mse = 0, softmax_cross_entropy = 1 };

struct ModelConfig {
  std::vector<int> layer_dims;          // [in, hidden..., out]
  std::vector<Activation> junctions;    // between consecutive layers; empty = relu everywhere
  LossKind loss = LossKind::mse;
  std::uint64_t seed = 0;
  double outlier_fraction = 0.01;
  int bit_width = 8;
  QuantMode quant_mode = QuantMode::affine;
  ThresholdKind threshold_kind = ThresholdKind::percentile;
  double init_outlier_fraction = 0.0;   // synthetic heavy-tail injection at init
  double init_outlier_scale = 1000.0;

  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }

  std::vector<Activation> resolved_junctions() const {
    if (!junctions.empty()) return junctions;
    return std::vector<Activation>(std::max(num_layers() - 1, 0), Activation::relu);
  }

  void validate() const {
    if (layer_dims.size() < 2) throw std::invalid_argument("model needs at least two dims");
    for (int d : layer_dims)
      if (d <= 0) throw std::invalid_argument("layer dims must be positive");
    if (!junctions.empty() && static_cast<int>(junctions.size()) != num_layers() - 1)
      throw std::invalid_argument("junction count must be num_layers - 1");
    if (!(outlier_fraction >= 0.0) || outlier_fraction >= 0.5)
      throw std::invalid_argument("outlier_fraction must be in [0, 0.5)");
    if (bit_width < 2 || bit_width > 8) throw std::invalid_argument("bit_width must be in [2, 8]");
    if (init_outlier_fraction < 0.0 || init_outlier_fraction > 1.0)
      throw std::invalid_argument("init_outlier_fraction must be in [0, 1]");
  }
};

// Seeded uniform init in [-1/sqrt(in), 1/sqrt(in)] per layer. Outlier injection
// draws from an independent stream so the base weights are unchanged by it.
template <typename T>
std::vector<Tensor<T>> initial_weights(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<Tensor<T>> ws;
  ws.reserve(cfg.num_layers());
  std::mt19937_64 rng(cfg.seed);
  for (int l = 0; l < cfg.num_layers(); ++l) {
    const int in = cfg.layer_dims[l];
    const int out = cfg.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> w(out, in);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dist(rng));
    ws.push_back(std::move(w));
  }
  if (cfg.init_outlier_fraction > 0.0) {
    std::mt19937_64 orng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> amp(cfg.init_outlier_scale * 0.1,
                                               cfg.init_outlier_scale);
    for (auto& w : ws)
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double hit = u(orng);
        const double a = amp(orng);
        if (hit < cfg.init_outlier_fraction) w[i] = static_cast<T>(w[i] * a);
      }
  }
  return ws;
}

template <typename T>
struct QuantizedLinearLayer {
  int index = 0;                  // 1-based position in the stack
  DenseSparseWeight<T> weight;    // [out x in]
};

// Everything backward needs, captured at forward time: per-layer inputs plus
// handles to the weights that produced them.
template <typename T>
struct SavedTensors {
  std::vector<Tensor<T>> inputs;
  std::vector<const DenseSparseWeight<T>*> weights;
  std::vector<Activation> junctions;
  int bit_width = 8;
  QuantMode quant_mode = QuantMode::affine;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  void clear() {
    inputs.clear();
    weights.clear();
    junctions.clear();
  }
};

namespace detail {

// Shared forward walk. weight_at(l) materializes layer l's [out x in] matrix;
// the materialized copy dies at the end of the layer's iteration.
template <typename T, typename WeightAt>
Tensor<T> forward_core(int num_layers, const std::vector<Activation>& junctions,
                       WeightAt&& weight_at, const Tensor<T>& x,
                       std::vector<Tensor<T>>* inputs_out) {
  Tensor<T> cur = x;
  for (int l = 0; l < num_layers; ++l) {
    if (inputs_out) inputs_out->push_back(cur);
    Tensor<T> next;
    {
      Tensor<T> w = weight_at(l);
      next = matmul(cur, transpose(w));
    }
    if (l + 1 < num_layers && junctions[l] == Activation::relu) next = relu(next);
    cur = std::move(next);
  }
  return cur;
}

// Shared backward walk, layers last to first. sink(l, grad) receives each
// [out x in] weight gradient; returns the summed squared gradient norm.
template <typename T, typename WeightAt, typename Sink>
double backward_core(int num_layers, const std::vector<Activation>& junctions,
                     WeightAt&& weight_at, const std::vector<Tensor<T>>& inputs,
                     Tensor<T> out_grad, Sink&& sink) {
  double norm_sq = 0;
  for (int l = num_layers - 1; l >= 0; --l) {
    const Tensor<T>& in = inputs[l];
    Tensor<T> wgrad = matmul(transpose(out_grad), in);
    norm_sq += sum_squares(wgrad);
    if (l > 0) {
      Tensor<T> in_grad;
      {
        Tensor<T> w = weight_at(l);
        in_grad = matmul(out_grad, w);
      }
      // inputs[l] is the previous junction's post-activation output
      if (junctions[l - 1] == Activation::relu) in_grad = relu_backward(in, in_grad);
      out_grad = std::move(in_grad);
    }
    sink(l, std::move(wgrad));
  }
  return norm_sq;
}

}  // namespace detail

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& cfg) {
    Model m;
    m.cfg_ = cfg;
    auto ws = initial_weights<T>(cfg);  // fp buffers die with this scope
    m.layers_.reserve(ws.size());
    for (std::size_t l = 0; l < ws.size(); ++l) {
      QuantizedLinearLayer<T> layer;
      layer.index = static_cast<int>(l) + 1;
      layer.weight = decompose_weight(ws[l], cfg.outlier_fraction, cfg.bit_width, cfg.quant_mode,
                                      cfg.threshold_kind);
      m.layers_.push_back(std::move(layer));
    }
    return m;
  }

  static Model from_parts(ModelConfig cfg, std::vector<QuantizedLinearLayer<T>> layers) {
    if (static_cast<int>(layers.size()) != cfg.num_layers())
      throw std::invalid_argument("from_parts: layer count does not match config");
    Model m;
    m.cfg_ = std::move(cfg);
    m.layers_ = std::move(layers);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<QuantizedLinearLayer<T>>& layers() { return layers_; }
  const std::vector<QuantizedLinearLayer<T>>& layers() const { return layers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.dense.size();
    return n;
  }

  // Dequantize-on-the-fly forward. With saved != nullptr, captures one entry
  // per layer for a later backward; saved tensors reference this model's
  // weights and must not outlive it.
  Tensor<T> forward(const Tensor<T>& x, SavedTensors<T>* saved = nullptr) const {
    check_input(x);
    if (saved) {
      saved->clear();
      saved->junctions = cfg_.resolved_junctions();
      saved->bit_width = cfg_.bit_width;
      saved->quant_mode = cfg_.quant_mode;
      for (const auto& l : layers_) saved->weights.push_back(&l.weight);
    }
    return detail::forward_core(
        cfg_.num_layers(), cfg_.resolved_junctions(),
        [&](int l) { return reconstruct(layers_[l].weight); }, x,
        saved ? &saved->inputs : nullptr);
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.cols() != cfg_.layer_dims.front())
      throw std::invalid_argument("forward: input width " + std::to_string(x.cols()) +
                                  " does not match model input dim " +
                                  std::to_string(cfg_.layer_dims.front()));
  }

  ModelConfig cfg_;
  std::vector<QuantizedLinearLayer<T>> layers_;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  return Model<T>::build(cfg);
}

// Plain fp twin of Model, same init draws and the same forward/backward
// arithmetic. Serves as the training baseline and as the oracle the quantized
// pipeline is compared against.
template <typename T>
class FpModel {
 public:
  static FpModel build(const ModelConfig& cfg) {
    FpModel m;
    m.cfg_ = cfg;
    m.weights_ = initial_weights<T>(cfg);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& weights() { return weights_; }
  const std::vector<Tensor<T>>& weights() const { return weights_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& w : weights_) n += w.size();
    return n;
  }

  Tensor<T> forward(const Tensor<T>& x, std::vector<Tensor<T>>* saved_inputs = nullptr) const {
    if (x.cols() != cfg_.layer_dims.front())
      throw std::invalid_argument("forward: input width does not match model input dim");
    if (saved_inputs) saved_inputs->clear();
    return detail::forward_core(
        cfg_.num_layers(), cfg_.resolved_junctions(), [&](int l) { return weights_[l]; }, x,
        saved_inputs);
  }

  struct BackwardResult {
    std::vector<Tensor<T>> grads;  // grads[l] for layer l+1
    double grad_norm = 0;
  };

  BackwardResult backward(const std::vector<Tensor<T>>& saved_inputs,
                          const Tensor<T>& output_grad) const {
    if (saved_inputs.size() != weights_.size())
      throw std::invalid_argument("backward: saved inputs do not match layer count");
    BackwardResult res;
    res.grads.resize(weights_.size());
    const double nsq = detail::backward_core(
        cfg_.num_layers(), cfg_.resolved_junctions(), [&](int l) { return weights_[l]; },
        saved_inputs, output_grad,
        [&](int l, Tensor<T>&& g) { res.grads[l] = std::move(g); });
    res.grad_norm = std::sqrt(nsq);
    return res;
  }

 private:
  ModelConfig cfg_;
  std::vector<Tensor<T>> weights_;
};

// Loss over a batch: mean over rows, sum over output columns. Returns the loss
// and d(loss)/d(output), both already carrying the 1/batch factor.
template <typename T>
std::pair<T, Tensor<T>> loss_and_grad(const Tensor<T>& output, const Tensor<T>& target,
                                      LossKind kind) {
  detail::require_same_shape(output, target, "loss_and_grad");
  const T inv_batch = T(1) / static_cast<T>(output.rows());
  Tensor<T> grad(output.rows(), output.cols());
  double loss = 0;
  if (kind == LossKind::mse) {
    for (std::size_t i = 0; i < output.size(); ++i) {
      const T d = output[i] - target[i];
      loss += static_cast<double>(d) * d;
      grad[i] = T(2) * d * inv_batch;
    }
    return {static_cast<T>(loss) * inv_batch, std::move(grad)};
  }
  // softmax cross-entropy; target rows are distributions (typically one-hot)
  for (int r = 0; r < output.rows(); ++r) {
    T mx = output(r, 0);
    for (int c = 1; c < output.cols(); ++c) mx = std::max(mx, output(r, c));
    double denom = 0;
    for (int c = 0; c < output.cols(); ++c)
      denom += std::exp(static_cast<double>(output(r, c) - mx));
    for (int c = 0; c < output.cols(); ++c) {
      const double p = std::exp(static_cast<double>(output(r, c) - mx)) / denom;
      loss -= static_cast<double>(target(r, c)) * std::log(p);
      grad(r, c) = (static_cast<T>(p) - target(r, c)) * inv_batch;
    }
  }
  return {static_cast<T>(loss) * inv_batch, std::move(grad)};
}

}  // namespace qft

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qft/network.hpp"
#include "qft/quantize.hpp"
#include "qft/tensor.hpp"

namespace qft {

// Global FILO stack of quantized per-layer gradients. Backward pushes layers
// L..1, so the optimizer pops them in layer order 1..L.
template <typename T>
struct StackEntry {
  int layer_index = 0;  // 1-based
  QuantizedTensor<T> grad;
};

template <typename T>
class GradientStack {
 public:
  void push(int layer_index, QuantizedTensor<T> grad) {
    entries_.push_back({layer_index, std::move(grad)});
  }

  StackEntry<T> pop() {
    if (entries_.empty()) throw std::out_of_range("gradient stack: pop on empty stack");
    StackEntry<T> e = std::move(entries_.back());
    entries_.pop_back();
    return e;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  // bottom-indexed access, used by accumulation and the memory profiler
  StackEntry<T>& at(std::size_t i) { return entries_.at(i); }
  const StackEntry<T>& at(std::size_t i) const { return entries_.at(i); }

 private:
  std::vector<StackEntry<T>> entries_;
};

// Integer-form gradient accumulation: dequantize the running sum, add the new
// fp gradient, re-quantize with fresh params. Between micro-batches only the
// integer form persists.
template <typename T>
QuantizedTensor<T> accumulate(const QuantizedTensor<T>& acc, const Tensor<T>& g_new) {
  if (acc.rows != g_new.rows() || acc.cols != g_new.cols())
    throw std::invalid_argument("accumulate: shape mismatch");
  const Tensor<T> sum = add(dequantize(acc), g_new);
  return quantize_state(sum, acc.mode == QuantMode::affine ? acc.params.bit_width : 8, acc.mode);
}

// Backward over the saved forward state. Weights are dequantized one layer at
// a time; each weight gradient is quantized and pushed (or accumulated into
// the matching entry when the stack already holds a prior micro-batch).
// Consumes `saved`. Returns the pre-quantization gradient norm.
template <typename T>
double backward(SavedTensors<T>& saved, const Tensor<T>& output_grad, GradientStack<T>& stack) {
  if (saved.empty()) throw std::invalid_argument("backward: nothing saved by forward");
  const int L = static_cast<int>(saved.size());
  const bool accumulating = !stack.empty();
  if (accumulating && static_cast<int>(stack.size()) != L)
    throw std::invalid_argument("backward: stack holds " + std::to_string(stack.size()) +
                                " entries, expected 0 or " + std::to_string(L));
  const double norm_sq = detail::backward_core(
      L, saved.junctions, [&](int l) { return reconstruct(*saved.weights[l]); }, saved.inputs,
      output_grad, [&](int l, Tensor<T>&& g) {
        const int layer_index = l + 1;
        if (!accumulating) {
          stack.push(layer_index, quantize_state(g, saved.bit_width, saved.quant_mode));
          return;
        }
        StackEntry<T>& e = stack.at(static_cast<std::size_t>(L - layer_index));
        if (e.layer_index != layer_index)
          throw std::invalid_argument("backward: stack entry order does not match layers");
        e.grad = accumulate(e.grad, g);
      });
  saved.clear();
  return std::sqrt(norm_sq);
}

}  // namespace qft

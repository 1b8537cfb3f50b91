#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qft/gradflow.hpp"
#include "qft/network.hpp"
#include "qft/quantize.hpp"
#include "qft/tensor.hpp"

namespace qft {

template <typename T>
struct LionHyper {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.99);
  T weight_decay = T(0);
};

namespace detail {
template <typename T>
inline T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// One sign-momentum update, element by element:
//   d = b1*m + (1-b1)*g;  w -= lr*(sign(d) + wd*w);  m = b2*m + (1-b2)*g
// Both the quantized step and the fp reference step run this exact loop, which
// is what makes them bit-comparable under pass-through quantizers.
template <typename T>
inline void lion_apply(Tensor<T>& w, Tensor<T>& m, const Tensor<T>& g, const LionHyper<T>& h) {
  require_same_shape(w, g, "lion_apply");
  require_same_shape(w, m, "lion_apply");
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T d = h.beta1 * m[i] + (T(1) - h.beta1) * g[i];
    w[i] = w[i] - h.lr * (sign_of(d) + h.weight_decay * w[i]);
    m[i] = h.beta2 * m[i] + (T(1) - h.beta2) * g[i];
  }
}
}  // namespace detail

template <typename T>
Tensor<T> sign(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sign_of(out[i]);
  return out;
}

// Quantized momentum, one entry per layer, initialized to exact zeros.
template <typename T>
struct LionState {
  std::vector<QuantizedTensor<T>> momentum;

  static LionState init(const Model<T>& model) {
    LionState st;
    st.momentum.reserve(model.layers().size());
    for (const auto& l : model.layers()) {
      Tensor<T> zeros(l.weight.rows(), l.weight.cols());
      st.momentum.push_back(
          quantize_state(zeros, model.config().bit_width, model.config().quant_mode));
    }
    return st;
  }
};

// Optional observability for tests: the fp tensors a step worked on, captured
// before re-quantization smears them.
template <typename T>
struct LionStepTrace {
  std::vector<Tensor<T>> weights_in;        // reconstructed, pre-update
  std::vector<Tensor<T>> gradients;         // dequantized stack entries
  std::vector<Tensor<T>> momentum_in;       // dequantized, pre-update
  std::vector<Tensor<T>> weights_updated;   // post-update, pre-requant
  std::vector<Tensor<T>> momentum_updated;  // post-update, pre-requant
};

// Pops one gradient per layer (layer order 1..L falls out of the FILO stack),
// dequantizes gradient, momentum and weight, applies the sign update, then
// re-quantizes both states. Weight re-quantization reuses the thresholds
// cached at the last refresh, so dense affine params stay fixed between
// refreshes. Only one layer's fp tensors are alive at a time.
template <typename T>
void lion_step_quantized(Model<T>& model, LionState<T>& state, GradientStack<T>& stack,
                         const LionHyper<T>& h, LionStepTrace<T>* trace = nullptr) {
  const int L = model.config().num_layers();
  if (static_cast<int>(stack.size()) != L)
    throw std::invalid_argument("lion step: stack holds " + std::to_string(stack.size()) +
                                " gradients for " + std::to_string(L) + " layers");
  if (static_cast<int>(state.momentum.size()) != L)
    throw std::invalid_argument("lion step: momentum count does not match layers");
  for (int li = 1; li <= L; ++li) {
    StackEntry<T> e = stack.pop();
    if (e.layer_index != li)
      throw std::invalid_argument("lion step: popped layer " + std::to_string(e.layer_index) +
                                  ", expected " + std::to_string(li));
    auto& layer = model.layers()[li - 1];
    if (e.grad.rows != layer.weight.rows() || e.grad.cols != layer.weight.cols())
      throw std::invalid_argument("lion step: gradient shape mismatch at layer " +
                                  std::to_string(li));
    Tensor<T> g = dequantize(e.grad);
    Tensor<T> m = dequantize(state.momentum[li - 1]);
    Tensor<T> w = reconstruct(layer.weight);
    if (trace) {
      trace->weights_in.push_back(w);
      trace->gradients.push_back(g);
      trace->momentum_in.push_back(m);
    }
    detail::lion_apply(w, m, g, h);
    if (trace) {
      trace->weights_updated.push_back(w);
      trace->momentum_updated.push_back(m);
    }
    state.momentum[li - 1] =
        quantize_state(m, model.config().bit_width, model.config().quant_mode);
    requantize_weight(layer.weight, w, model.config().bit_width);
  }
}

// ---- fp reference optimizers ----

template <typename T>
struct FpLionState {
  std::vector<Tensor<T>> momentum;

  static FpLionState init(const FpModel<T>& model) {
    FpLionState st;
    for (const auto& w : model.weights()) st.momentum.emplace_back(w.rows(), w.cols());
    return st;
  }
};

template <typename T>
void lion_step_reference(FpModel<T>& model, FpLionState<T>& state,
                         const std::vector<Tensor<T>>& grads, const LionHyper<T>& h) {
  if (grads.size() != model.weights().size())
    throw std::invalid_argument("lion reference: gradient count does not match layers");
  for (std::size_t l = 0; l < grads.size(); ++l)
    detail::lion_apply(model.weights()[l], state.momentum[l], grads[l], h);
}

template <typename T>
struct AdamHyper {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> momentum;
  std::vector<Tensor<T>> variance;
  long step = 0;

  static AdamState init(const FpModel<T>& model) {
    AdamState st;
    for (const auto& w : model.weights()) {
      st.momentum.emplace_back(w.rows(), w.cols());
      st.variance.emplace_back(w.rows(), w.cols());
    }
    return st;
  }
};

template <typename T>
void adam_step_reference(FpModel<T>& model, AdamState<T>& state,
                         const std::vector<Tensor<T>>& grads, const AdamHyper<T>& h) {
  if (grads.size() != model.weights().size())
    throw std::invalid_argument("adam reference: gradient count does not match layers");
  state.step += 1;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(h.beta1), state.step));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(h.beta2), state.step));
  for (std::size_t l = 0; l < grads.size(); ++l) {
    Tensor<T>& w = model.weights()[l];
    Tensor<T>& m = state.momentum[l];
    Tensor<T>& v = state.variance[l];
    const Tensor<T>& g = grads[l];
    detail::require_same_shape(w, g, "adam_step");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = h.beta1 * m[i] + (T(1) - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (T(1) - h.beta2) * g[i] * g[i];
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      w[i] = w[i] - h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

}  // namespace qft

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "qft/gradflow.hpp"
#include "qft/network.hpp"
#include "qft/optimizer.hpp"
#include "qft/quantize.hpp"

using qft::AdamHyper;
using qft::AdamState;
using qft::FpLionState;
using qft::FpModel;
using qft::GradientStack;
using qft::LionHyper;
using qft::LionState;
using qft::LionStepTrace;
using qft::Model;
using qft::ModelConfig;
using qft::QuantMode;
using qft::QuantizedLinearLayer;
using qft::Tensor;

namespace {

Tensor<float> random_tensor(int rows, int cols, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<float> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(dist(rng));
  return t;
}

// 1x1 single-layer model wrapping one hand-picked weight value
template <typename T>
Model<T> scalar_model(T w, QuantMode mode) {
  ModelConfig cfg;
  cfg.layer_dims = {1, 1};
  cfg.quant_mode = mode;
  QuantizedLinearLayer<T> layer;
  layer.index = 1;
  Tensor<T> wt(1, 1);
  wt(0, 0) = w;
  layer.weight = decompose_weight(wt, cfg.outlier_fraction, cfg.bit_width, mode,
                                  cfg.threshold_kind);
  return Model<T>::from_parts(cfg, {std::move(layer)});
}

}  // namespace

TEST_CASE("sign is the pointwise signum") {
  Tensor<float> x = Tensor<float>::from_rows({{-3.5f, 0.0f, 2.0f}, {1e-30f, -1e-30f, -0.0f}});
  const auto s = sign(x);
  CHECK(s(0, 0) == -1.0f);
  CHECK(s(0, 1) == 0.0f);
  CHECK(s(0, 2) == 1.0f);
  CHECK(s(1, 0) == 1.0f);
  CHECK(s(1, 1) == -1.0f);
  CHECK(s(1, 2) == 0.0f);  // signed zero counts as zero

  const auto r = random_tensor(5, 7, 911);
  const auto neg = sign(scale(r, -1.0f));
  const auto pos = sign(r);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(neg[i] == -pos[i]);
}

TEST_CASE("scalar sign-momentum update follows the hand-worked example") {
  // w=1, g=-0.2, m=0.5, b1=0.9, b2=0.99, lr=1e-4, decay=0:
  //   d = 0.9*0.5 + 0.1*(-0.2) = 0.43 -> sign +1
  //   w' = 1 - 1e-4 = 0.9999
  //   m' = 0.99*0.5 + 0.01*(-0.2) = 0.493
  LionHyper<double> h;
  h.lr = 1e-4;

  SUBCASE("fp reference path") {
    ModelConfig cfg;
    cfg.layer_dims = {1, 1};
    cfg.seed = 1;
    auto model = FpModel<double>::build(cfg);
    model.weights()[0](0, 0) = 1.0;
    auto st = FpLionState<double>::init(model);
    st.momentum[0](0, 0) = 0.5;
    Tensor<double> g(1, 1);
    g(0, 0) = -0.2;
    lion_step_reference(model, st, {g}, h);
    CHECK(model.weights()[0](0, 0) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(st.momentum[0](0, 0) == doctest::Approx(0.493).epsilon(1e-12));
  }

  SUBCASE("quantized path in pass-through mode") {
    auto model = scalar_model(1.0, QuantMode::passthrough);
    auto st = LionState<double>::init(model);
    Tensor<double> m0(1, 1);
    m0(0, 0) = 0.5;
    st.momentum[0] = quantize_state(m0, 8, QuantMode::passthrough);
    Tensor<double> g(1, 1);
    g(0, 0) = -0.2;
    GradientStack<double> stack;
    stack.push(1, quantize_state(g, 8, QuantMode::passthrough));
    lion_step_quantized(model, st, stack, h);
    CHECK(reconstruct(model.layers()[0].weight)(0, 0) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(dequantize(st.momentum[0])(0, 0) == doctest::Approx(0.493).epsilon(1e-12));
  }
}

TEST_CASE("weight decay enters the update inside the lr factor") {
  // w=2, m=1, g=0, b1=0.9 -> d=0.9 -> w' = 2 - lr*(1 + decay*2)
  LionHyper<double> h;
  h.lr = 0.01;
  h.weight_decay = 0.1;
  ModelConfig cfg;
  cfg.layer_dims = {1, 1};
  cfg.seed = 2;
  auto model = FpModel<double>::build(cfg);
  model.weights()[0](0, 0) = 2.0;
  auto st = FpLionState<double>::init(model);
  st.momentum[0](0, 0) = 1.0;
  lion_step_reference(model, st, {Tensor<double>(1, 1)}, h);
  CHECK(model.weights()[0](0, 0) == doctest::Approx(2.0 - 0.01 * 1.2).epsilon(1e-12));
}

TEST_CASE("update direction is invariant to scaling momentum and gradient together") {
  // sign(b1*c*m + (1-b1)*c*g) == sign(c) * sign(d); with c>0 and no decay the
  // weight trajectory cannot change.
  ModelConfig cfg;
  cfg.layer_dims = {4, 3};
  cfg.seed = 3;
  LionHyper<float> h;
  h.lr = 1e-3f;

  auto m1 = FpModel<float>::build(cfg);
  auto m2 = FpModel<float>::build(cfg);
  auto s1 = FpLionState<float>::init(m1);
  auto s2 = FpLionState<float>::init(m2);
  const auto base_m = random_tensor(3, 4, 31);
  s1.momentum[0] = base_m;
  s2.momentum[0] = scale(base_m, 7.5f);
  const auto g = random_tensor(3, 4, 32);
  lion_step_reference(m1, s1, {g}, h);
  lion_step_reference(m2, s2, {scale(g, 7.5f)}, h);
  CHECK(m1.weights()[0] == m2.weights()[0]);
}

TEST_CASE("momentum starts as exact zeros") {
  ModelConfig cfg;
  cfg.layer_dims = {8, 16, 4};
  cfg.seed = 4;
  const auto model = Model<float>::build(cfg);
  const auto st = LionState<float>::init(model);
  REQUIRE(st.momentum.size() == 2);
  for (const auto& q : st.momentum) {
    const auto m = dequantize(q);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == 0.0f);
  }
}

TEST_CASE("pass-through pipeline steps bitwise with the fp reference") {
  ModelConfig cfg;
  cfg.layer_dims = {6, 10, 3};
  cfg.seed = 5;
  cfg.quant_mode = QuantMode::passthrough;
  auto qmodel = Model<float>::build(cfg);
  auto fmodel = FpModel<float>::build(cfg);
  auto qst = LionState<float>::init(qmodel);
  auto fst = FpLionState<float>::init(fmodel);
  LionHyper<float> h;
  h.lr = 3e-3f;
  h.weight_decay = 0.01f;

  for (int step = 0; step < 25; ++step) {
    std::vector<Tensor<float>> grads;
    grads.push_back(random_tensor(10, 6, 1000 + step));
    grads.push_back(random_tensor(3, 10, 2000 + step));
    GradientStack<float> stack;
    for (int li = 2; li >= 1; --li)
      stack.push(li, quantize_state(grads[li - 1], 8, QuantMode::passthrough));
    lion_step_quantized(qmodel, qst, stack, h);
    lion_step_reference(fmodel, fst, grads, h);
    for (int l = 0; l < 2; ++l) {
      CHECK(reconstruct(qmodel.layers()[l].weight) == fmodel.weights()[l]);
      CHECK(dequantize(qst.momentum[l]) == fst.momentum[l]);
    }
  }
}

TEST_CASE("per-element weight movement is exactly lr in magnitude or zero") {
  // Without decay each element moves by -lr*sign(d); the trace sees the fp
  // update before re-quantization, so the movement is exact there.
  ModelConfig cfg;
  cfg.layer_dims = {12, 8};
  cfg.seed = 6;
  auto model = Model<double>::build(cfg);
  auto st = LionState<double>::init(model);
  LionHyper<double> h;
  h.lr = 1e-4;

  const auto g = random_tensor(8, 12, 61);
  Tensor<double> gd(8, 12);
  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = g[i];
  GradientStack<double> stack;
  stack.push(1, quantize_state(gd, cfg.bit_width, cfg.quant_mode));
  LionStepTrace<double> trace;
  lion_step_quantized(model, st, stack, h, &trace);

  REQUIRE(trace.weights_in.size() == 1);
  int moved = 0;
  for (std::size_t i = 0; i < trace.weights_in[0].size(); ++i) {
    const double dw = trace.weights_updated[0][i] - trace.weights_in[0][i];
    if (dw == 0.0) continue;
    ++moved;
    CHECK(std::abs(std::abs(dw) - h.lr) <= 1e-9 * h.lr);
  }
  CHECK(moved > 0);  // random gradients move nearly every element
}

TEST_CASE("momentum tracks the exponential moving average of a constant gradient") {
  ModelConfig cfg;
  cfg.layer_dims = {16, 8};
  cfg.seed = 7;
  auto model = Model<float>::build(cfg);
  auto st = LionState<float>::init(model);
  LionHyper<float> h;

  const auto gf = random_tensor(8, 16, 71);
  const int steps = 100;
  // realized creep bound, per row: e <- b2*e + s_t/2 after each re-quantization
  std::vector<double> creep(8, 0.0);
  for (int t = 0; t < steps; ++t) {
    GradientStack<float> stack;
    stack.push(1, quantize_state(gf, cfg.bit_width, cfg.quant_mode));
    lion_step_quantized(model, st, stack, h);
    for (int r = 0; r < 8; ++r)
      creep[r] = h.beta2 * creep[r] + st.momentum[0].params.scale[r] / 2.0;
  }
  const auto m = dequantize(st.momentum[0]);
  const double ema = 1.0 - std::pow(0.99, steps);
  for (int r = 0; r < 8; ++r) {
    const float s_g = quantize_state(gf, cfg.bit_width, cfg.quant_mode).params.scale[r];
    for (int c = 0; c < 16; ++c) {
      // the pushed gradient itself is quantized, so allow its s/2 as well
      const double tol = creep[r] + ema * (s_g / 2.0) + 1e-6;
      CHECK(std::abs(m(r, c) - ema * gf(r, c)) <= tol);
    }
  }
}

TEST_CASE("one quantized step stays within a scale-plus-lr band of the fp step") {
  ModelConfig cfg;
  cfg.layer_dims = {24, 16};
  cfg.seed = 8;
  auto qmodel = Model<float>::build(cfg);
  auto fmodel = FpModel<float>::build(cfg);
  auto qst = LionState<float>::init(qmodel);
  auto fst = FpLionState<float>::init(fmodel);
  LionHyper<float> h;
  h.lr = 1e-3f;

  const auto g = random_tensor(16, 24, 81);
  GradientStack<float> stack;
  stack.push(1, quantize_state(g, cfg.bit_width, cfg.quant_mode));
  lion_step_quantized(qmodel, qst, stack, h);
  lion_step_reference(fmodel, fst, {g}, h);

  const auto& params = qmodel.layers()[0].weight.dense.params;
  const auto wq = reconstruct(qmodel.layers()[0].weight);
  const auto& wf = fmodel.weights()[0];
  for (int r = 0; r < 16; ++r) {
    // quantize twice (init and requant) at most s/2 each; signs can disagree
    const double band = params.scale[r] + 2.0 * h.lr + 1e-6;
    for (int c = 0; c < 24; ++c) CHECK(std::abs(wq(r, c) - wf(r, c)) <= band);
  }
}

TEST_CASE("a no-op step leaves the stored weight bytes untouched") {
  ModelConfig cfg;
  cfg.layer_dims = {16, 8};
  cfg.seed = 9;
  cfg.outlier_fraction = 0.05;
  auto model = Model<float>::build(cfg);
  auto st = LionState<float>::init(model);
  LionHyper<float> h;
  h.lr = 0.0f;

  const auto before_data = model.layers()[0].weight.dense.data;
  const auto before_vals = model.layers()[0].weight.sparse.values;
  GradientStack<float> stack;
  stack.push(1, quantize_state(Tensor<float>(8, 16), cfg.bit_width, cfg.quant_mode));
  lion_step_quantized(model, st, stack, h);
  CHECK(model.layers()[0].weight.dense.data == before_data);
  CHECK(model.layers()[0].weight.sparse.values == before_vals);
}

TEST_CASE("step validation rejects malformed stacks") {
  ModelConfig cfg;
  cfg.layer_dims = {4, 6, 2};
  cfg.seed = 10;
  auto model = Model<float>::build(cfg);
  auto st = LionState<float>::init(model);
  LionHyper<float> h;

  SUBCASE("wrong depth") {
    GradientStack<float> stack;
    stack.push(1, quantize_state(Tensor<float>(6, 4), 8, QuantMode::affine));
    CHECK_THROWS_AS(lion_step_quantized(model, st, stack, h), std::invalid_argument);
  }
  SUBCASE("wrong order") {
    GradientStack<float> stack;
    stack.push(1, quantize_state(Tensor<float>(6, 4), 8, QuantMode::affine));
    stack.push(2, quantize_state(Tensor<float>(2, 6), 8, QuantMode::affine));
    CHECK_THROWS_AS(lion_step_quantized(model, st, stack, h), std::invalid_argument);
  }
  SUBCASE("wrong shape") {
    GradientStack<float> stack;
    stack.push(2, quantize_state(Tensor<float>(2, 6), 8, QuantMode::affine));
    stack.push(1, quantize_state(Tensor<float>(5, 5), 8, QuantMode::affine));
    CHECK_THROWS_AS(lion_step_quantized(model, st, stack, h), std::invalid_argument);
  }
  SUBCASE("momentum count mismatch") {
    GradientStack<float> stack;
    stack.push(2, quantize_state(Tensor<float>(2, 6), 8, QuantMode::affine));
    stack.push(1, quantize_state(Tensor<float>(6, 4), 8, QuantMode::affine));
    st.momentum.pop_back();
    CHECK_THROWS_AS(lion_step_quantized(model, st, stack, h), std::invalid_argument);
  }
}

TEST_CASE("first-moment-only adam step approximates a signed step") {
  // from zero state, m_hat = g and v_hat = g*g, so dw = -lr*g/(|g|+eps)
  ModelConfig cfg;
  cfg.layer_dims = {4, 3};
  cfg.seed = 11;
  auto model = FpModel<double>::build(cfg);
  auto st = AdamState<double>::init(model);
  AdamHyper<double> h;
  const auto before = model.weights()[0];
  Tensor<double> g(3, 4);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (i % 2 == 0) ? 0.5 : -0.25;
  adam_step_reference(model, st, {g}, h);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double dw = model.weights()[0][i] - before[i];
    const double want = -h.lr * g[i] / (std::abs(g[i]) + h.epsilon);
    CHECK(dw == doctest::Approx(want).epsilon(1e-9));
    CHECK(std::abs(dw + h.lr * (g[i] > 0 ? 1.0 : -1.0)) < h.lr * 1e-6);
  }
}

TEST_CASE("adam matches an independent scalar trace over several steps") {
  ModelConfig cfg;
  cfg.layer_dims = {1, 1};
  cfg.seed = 12;
  auto model = FpModel<double>::build(cfg);
  model.weights()[0](0, 0) = 0.3;
  auto st = AdamState<double>::init(model);
  AdamHyper<double> h;
  h.lr = 0.05;

  // scalar re-derivation, written independently of the vector code
  double w = 0.3, m = 0.0, v = 0.0;
  const double gs[] = {0.4, -0.1, 0.25, 0.0, -0.6};
  for (int t = 0; t < 5; ++t) {
    Tensor<double> g(1, 1);
    g(0, 0) = gs[t];
    adam_step_reference(model, st, {g}, h);

    m = h.beta1 * m + (1 - h.beta1) * gs[t];
    v = h.beta2 * v + (1 - h.beta2) * gs[t] * gs[t];
    const double mh = m / (1 - std::pow(h.beta1, t + 1));
    const double vh = v / (1 - std::pow(h.beta2, t + 1));
    w -= h.lr * mh / (std::sqrt(vh) + h.epsilon);
    CHECK(model.weights()[0](0, 0) == doctest::Approx(w).epsilon(1e-12));
  }
  CHECK(st.step == 5);
}

TEST_CASE("adam and lion references reject gradient count mismatches") {
  ModelConfig cfg;
  cfg.layer_dims = {4, 6, 2};
  cfg.seed = 13;
  auto model = FpModel<float>::build(cfg);
  auto lst = FpLionState<float>::init(model);
  auto ast = AdamState<float>::init(model);
  std::vector<Tensor<float>> one = {Tensor<float>(6, 4)};
  LionHyper<float> lh;
  AdamHyper<float> ah;
  CHECK_THROWS_AS(lion_step_reference(model, lst, one, lh), std::invalid_argument);
  CHECK_THROWS_AS(adam_step_reference(model, ast, one, ah), std::invalid_argument);
}

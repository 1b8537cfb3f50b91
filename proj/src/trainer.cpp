#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "qft/gradflow.hpp"
#include "qft/trainer.hpp"

namespace qft {

void refresh_thresholds(Model<float>& model, double fraction) {
  for (auto& layer : model.layers()) {
    if (layer.weight.dense.mode == QuantMode::passthrough) continue;
    const Tensor<float> w = reconstruct(layer.weight);
    layer.weight = decompose_weight(w, fraction, model.config().bit_width, QuantMode::affine,
                                    model.config().threshold_kind);
  }
}

namespace {

namespace fs = std::filesystem;

Tensor<float> slice_rows(const Tensor<float>& t, int begin, int count, int total) {
  Tensor<float> out(count, t.cols());
  for (int r = 0; r < count; ++r) {
    const int src = (begin + r) % total;
    for (int c = 0; c < t.cols(); ++c) out(r, c) = t(src, c);
  }
  return out;
}

double lr_at(const TrainConfig& cfg, int step) {  // step is 1-based
  if (cfg.schedule == LrSchedule::constant || cfg.total_steps() <= 1) return cfg.lr;
  const double end = cfg.lr_end >= 0 ? cfg.lr_end : cfg.lr;
  const double t = static_cast<double>(step - 1) / static_cast<double>(cfg.total_steps() - 1);
  return cfg.lr + (end - cfg.lr) * t;
}

// One training engine per optimizer kind, sharing the batch/metrics skeleton.
struct Engine {
  virtual ~Engine() = default;
  // forward + backward on one micro-batch; returns (loss, grad_norm_sq contribution)
  virtual std::pair<double, double> micro_step(const Tensor<float>& x, const Tensor<float>& y,
                                               float inv_micro) = 0;
  virtual void apply_update(double lr) = 0;
  virtual MemoryProfile profile() = 0;  // at the post-backward peak
  virtual void refresh(double fraction) {}
  virtual void checkpoint(const std::string& path) {}
  virtual bool checkpoints() const { return false; }
};

struct QftEngine : Engine {
  TrainConfig cfg;
  Model<float> model;
  LionState<float> state;
  GradientStack<float> stack;

  explicit QftEngine(const TrainConfig& c)
      : cfg(c), model(Model<float>::build(c.model)), state(LionState<float>::init(model)) {}

  std::pair<double, double> micro_step(const Tensor<float>& x, const Tensor<float>& y,
                                       float inv_micro) override {
    SavedTensors<float> saved;
    const Tensor<float> out = model.forward(x, &saved);
    auto [loss, grad] = loss_and_grad(out, y, cfg.model.loss);
    if (inv_micro != 1.0f) grad = scale(grad, inv_micro);
    const double gn = backward(saved, grad, stack);
    return {static_cast<double>(loss), gn * gn};
  }

  void apply_update(double lr) override {
    LionHyper<float> h;
    h.lr = static_cast<float>(lr);
    h.beta1 = cfg.beta1;
    h.beta2 = cfg.beta2;
    h.weight_decay = cfg.weight_decay;
    lion_step_quantized(model, state, stack, h);
  }

  MemoryProfile profile() override { return measured_profile(model, &state, &stack); }
  void refresh(double fraction) override { refresh_thresholds(model, fraction); }
  void checkpoint(const std::string& path) override { save_checkpoint(model, state, path); }
  bool checkpoints() const override { return true; }
};

struct FpLionEngine : Engine {
  TrainConfig cfg;
  FpModel<float> model;
  FpLionState<float> state;
  std::vector<Tensor<float>> grads;  // accumulated across micro-batches

  explicit FpLionEngine(const TrainConfig& c)
      : cfg(c), model(FpModel<float>::build(c.model)), state(FpLionState<float>::init(model)) {}

  std::pair<double, double> micro_step(const Tensor<float>& x, const Tensor<float>& y,
                                       float inv_micro) override {
    std::vector<Tensor<float>> inputs;
    const Tensor<float> out = model.forward(x, &inputs);
    auto [loss, grad] = loss_and_grad(out, y, cfg.model.loss);
    if (inv_micro != 1.0f) grad = scale(grad, inv_micro);
    auto res = model.backward(inputs, grad);
    if (grads.empty()) {
      grads = std::move(res.grads);
    } else {
      for (std::size_t l = 0; l < grads.size(); ++l) grads[l] = add(grads[l], res.grads[l]);
    }
    return {static_cast<double>(loss), res.grad_norm * res.grad_norm};
  }

  void apply_update(double lr) override {
    LionHyper<float> h;
    h.lr = static_cast<float>(lr);
    h.beta1 = cfg.beta1;
    h.beta2 = cfg.beta2;
    h.weight_decay = cfg.weight_decay;
    lion_step_reference(model, state, grads, h);
    grads.clear();
  }

  MemoryProfile profile() override { return measured_profile_fp_lion(model, &state, &grads); }
};

struct FpAdamEngine : Engine {
  TrainConfig cfg;
  FpModel<float> model;
  AdamState<float> state;
  std::vector<Tensor<float>> grads;

  explicit FpAdamEngine(const TrainConfig& c)
      : cfg(c), model(FpModel<float>::build(c.model)), state(AdamState<float>::init(model)) {}

  std::pair<double, double> micro_step(const Tensor<float>& x, const Tensor<float>& y,
                                       float inv_micro) override {
    std::vector<Tensor<float>> inputs;
    const Tensor<float> out = model.forward(x, &inputs);
    auto [loss, grad] = loss_and_grad(out, y, cfg.model.loss);
    if (inv_micro != 1.0f) grad = scale(grad, inv_micro);
    auto res = model.backward(inputs, grad);
    if (grads.empty()) {
      grads = std::move(res.grads);
    } else {
      for (std::size_t l = 0; l < grads.size(); ++l) grads[l] = add(grads[l], res.grads[l]);
    }
    return {static_cast<double>(loss), res.grad_norm * res.grad_norm};
  }

  void apply_update(double lr) override {
    AdamHyper<float> h;
    h.lr = static_cast<float>(lr);
    h.beta1 = cfg.adam_beta1;
    h.beta2 = cfg.adam_beta2;
    h.epsilon = cfg.adam_epsilon;
    adam_step_reference(model, state, grads, h);
    grads.clear();
  }

  MemoryProfile profile() override { return measured_profile_fp_adam(model, &state, &grads); }
};

std::unique_ptr<Engine> make_engine(const TrainConfig& cfg) {
  if (cfg.optimizer_kind == "qft-lion") return std::make_unique<QftEngine>(cfg);
  if (cfg.optimizer_kind == "fp-lion") return std::make_unique<FpLionEngine>(cfg);
  if (cfg.optimizer_kind == "fp-adam") return std::make_unique<FpAdamEngine>(cfg);
  throw std::invalid_argument("unknown optimizer kind '" + cfg.optimizer_kind + "'");
}

void write_metrics(const std::string& path, const std::vector<StepMetrics>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "step,epoch,loss,grad_norm,state_bytes\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%llu\n", r.step, r.epoch, r.loss,
                  r.grad_norm, static_cast<unsigned long long>(r.state_bytes));
    f << buf;
  }
}

double mean_tail_loss(const std::vector<StepMetrics>& rows) {
  if (rows.empty()) return 0;
  const std::size_t window = std::max<std::size_t>(1, rows.size() / 20);
  double acc = 0;
  for (std::size_t i = rows.size() - window; i < rows.size(); ++i) acc += rows[i].loss;
  return acc / static_cast<double>(window);
}

}  // namespace

TrainSummary train(const TrainConfig& cfg) {
  cfg.validate();
  const int in_dim = cfg.model.layer_dims.front();
  const int out_dim = cfg.model.layer_dims.back();
  const Dataset data = ingest_dataset(cfg.dataset, in_dim, out_dim, cfg.seed);
  if (data.size() < cfg.batch_size)
    throw std::invalid_argument("dataset has " + std::to_string(data.size()) +
                                " rows, batch_size is " + std::to_string(cfg.batch_size));
  fs::create_directories(cfg.out_dir);

  std::unique_ptr<Engine> engine = make_engine(cfg);
  TrainSummary summary;
  summary.optimizer_kind = cfg.optimizer_kind;
  summary.steps = cfg.total_steps();
  summary.history.reserve(cfg.total_steps());

  const int micro_size = cfg.batch_size / cfg.micro_batches;
  const float inv_micro = 1.0f / static_cast<float>(cfg.micro_batches);
  for (int step = 1; step <= cfg.total_steps(); ++step) {
    const int epoch = (step - 1) / cfg.steps_per_epoch;
    const bool epoch_start = (step - 1) % cfg.steps_per_epoch == 0;
    if (epoch_start && epoch > 0) {
      engine->refresh(cfg.model.outlier_fraction);  // lazy refresh, epoch boundaries only
      if (engine->checkpoints())
        engine->checkpoint(cfg.out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".qftc");
    }
    const int base = ((step - 1) * cfg.batch_size) % data.size();
    StepMetrics m;
    m.step = step;
    m.epoch = epoch;
    double norm_sq = 0;
    for (int mb = 0; mb < cfg.micro_batches; ++mb) {
      const Tensor<float> x =
          slice_rows(data.inputs, base + mb * micro_size, micro_size, data.size());
      const Tensor<float> y =
          slice_rows(data.targets, base + mb * micro_size, micro_size, data.size());
      auto [loss, nsq] = engine->micro_step(x, y, inv_micro);
      m.loss += loss / cfg.micro_batches;
      norm_sq += nsq;
    }
    m.grad_norm = std::sqrt(norm_sq);
    m.state_bytes = engine->profile().model_state_bytes();
    engine->apply_update(lr_at(cfg, step));
    summary.history.push_back(m);
  }

  summary.initial_loss = summary.history.empty() ? 0 : summary.history.front().loss;
  summary.final_loss = mean_tail_loss(summary.history);
  summary.profile = engine->profile();
  summary.final_state_bytes =
      summary.history.empty() ? summary.profile.model_state_bytes()
                              : summary.history.back().state_bytes;
  summary.metrics_path = cfg.out_dir + "/metrics.csv";
  write_metrics(summary.metrics_path, summary.history);
  if (engine->checkpoints()) {
    summary.checkpoint_path = cfg.out_dir + "/checkpoint.qftc";
    engine->checkpoint(summary.checkpoint_path);
  }
  return summary;
}

CompareResult compare_runs(const TrainConfig& cfg) {
  cfg.validate();
  CompareResult res;
  const char* kinds[3] = {"qft-lion", "fp-lion", "fp-adam"};
  TrainSummary* outs[3] = {&res.qft_lion, &res.fp_lion, &res.fp_adam};
  for (int i = 0; i < 3; ++i) {
    TrainConfig run = cfg;
    run.optimizer_kind = kinds[i];
    run.out_dir = cfg.out_dir + "/" + kinds[i];
    *outs[i] = train(run);
  }

  fs::create_directories(cfg.out_dir);
  res.losses_path = cfg.out_dir + "/losses.csv";
  {
    std::ofstream f(res.losses_path, std::ios::trunc);
    f << "step,qft_lion,fp_lion,fp_adam\n";
    char buf[160];
    for (std::size_t i = 0; i < res.qft_lion.history.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", res.qft_lion.history[i].step,
                    res.qft_lion.history[i].loss, res.fp_lion.history[i].loss,
                    res.fp_adam.history[i].loss);
      f << buf;
    }
  }
  res.memory_csv_path = cfg.out_dir + "/memory.csv";
  {
    std::ofstream f(res.memory_csv_path, std::ios::trunc);
    write_profile_csv(f, {res.qft_lion.profile, res.fp_lion.profile, res.fp_adam.profile});
  }
  res.report_path = cfg.out_dir + "/compare_report.txt";
  {
    std::ofstream f(res.report_path, std::ios::trunc);
    char buf[96];
    auto put = [&](const std::string& key, double v) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      f << key << "=" << buf << "\n";
    };
    f << "dataset=" << cfg.dataset << "\n";
    f << "steps=" << cfg.total_steps() << "\n";
    f << "seed=" << cfg.seed << "\n";
    for (int i = 0; i < 3; ++i) {
      const TrainSummary& s = *outs[i];
      std::string key = s.optimizer_kind;
      std::replace(key.begin(), key.end(), '-', '_');
      put(key + ".initial_loss", s.initial_loss);
      put(key + ".final_loss", s.final_loss);
      f << key << ".model_state_bytes=" << s.final_state_bytes << "\n";
    }
    const double rel =
        std::abs(res.qft_lion.final_loss - res.fp_lion.final_loss) /
        std::max(std::abs(res.fp_lion.final_loss), 1e-12);
    put("qft_vs_fp_lion.final_loss_rel_diff", rel);
    put("qft_vs_fp_lion.state_ratio", static_cast<double>(res.qft_lion.final_state_bytes) /
                                          static_cast<double>(res.fp_lion.final_state_bytes));
  }
  return res;
}

}  // namespace qft

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qft/trainer.hpp"

namespace qft {

void TrainConfig::validate() const {
  model.validate();
  if (optimizer_kind != "qft-lion" && optimizer_kind != "fp-lion" && optimizer_kind != "fp-adam")
    throw std::invalid_argument("optimizer.kind must be qft-lion, fp-lion or fp-adam, got '" +
                                optimizer_kind + "'");
  if (!(lr > 0)) throw std::invalid_argument("optimizer.lr must be positive");
  if (lr_end >= 0 && schedule == LrSchedule::constant)
    throw std::invalid_argument("optimizer.lr_end requires optimizer.schedule=linear");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (micro_batches <= 0) throw std::invalid_argument("micro_batches must be positive");
  if (batch_size % micro_batches != 0)
    throw std::invalid_argument("batch_size must be divisible by micro_batches");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (steps_per_epoch <= 0) throw std::invalid_argument("steps_per_epoch must be positive");
  if (out_dir.empty()) throw std::invalid_argument("out_dir must not be empty");
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw std::invalid_argument(origin + ":" + std::to_string(line) + ": " + msg);
}

std::vector<int> parse_dims(const std::string& v) {
  std::vector<int> dims;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) dims.push_back(std::stoi(trim(cell)));
  return dims;
}

Activation parse_activation(const std::string& v) {
  if (v == "relu") return Activation::relu;
  if (v == "none") return Activation::none;
  throw std::invalid_argument("activation must be relu or none, got '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  cfg.model.layer_dims = {8, 32, 32, 1};  // matches the default synthetic dataset
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool junctions_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) fail(origin, lineno, "empty key or value");
    try {
      if (key == "model.dims") {
        cfg.model.layer_dims = parse_dims(val);
      } else if (key == "model.activation") {
        cfg.model.junctions.assign(1, parse_activation(val));  // broadcast after dims are known
        junctions_set = true;
      } else if (key == "model.loss") {
        if (val == "mse") cfg.model.loss = LossKind::mse;
        else if (val == "softmax-ce") cfg.model.loss = LossKind::softmax_cross_entropy;
        else fail(origin, lineno, "model.loss must be mse or softmax-ce");
      } else if (key == "model.init_outlier_fraction") {
        cfg.model.init_outlier_fraction = std::stod(val);
      } else if (key == "model.init_outlier_scale") {
        cfg.model.init_outlier_scale = std::stod(val);
      } else if (key == "quant.mode") {
        if (val == "affine") cfg.model.quant_mode = QuantMode::affine;
        else if (val == "passthrough") cfg.model.quant_mode = QuantMode::passthrough;
        else fail(origin, lineno, "quant.mode must be affine or passthrough");
      } else if (key == "quant.threshold_kind") {
        if (val == "percentile") cfg.model.threshold_kind = ThresholdKind::percentile;
        else if (val == "range-fraction") cfg.model.threshold_kind = ThresholdKind::range_fraction;
        else fail(origin, lineno, "quant.threshold_kind must be percentile or range-fraction");
      } else if (key == "optimizer.kind") {
        cfg.optimizer_kind = val;
      } else if (key == "optimizer.lr") {
        cfg.lr = std::stof(val);
      } else if (key == "optimizer.lr_end") {
        cfg.lr_end = std::stof(val);
      } else if (key == "optimizer.schedule") {
        if (val == "constant") cfg.schedule = LrSchedule::constant;
        else if (val == "linear") cfg.schedule = LrSchedule::linear;
        else fail(origin, lineno, "optimizer.schedule must be constant or linear");
      } else if (key == "optimizer.beta1") {
        cfg.beta1 = std::stof(val);
      } else if (key == "optimizer.beta2") {
        cfg.beta2 = std::stof(val);
      } else if (key == "optimizer.weight_decay") {
        cfg.weight_decay = std::stof(val);
      } else if (key == "optimizer.adam_beta1") {
        cfg.adam_beta1 = std::stof(val);
      } else if (key == "optimizer.adam_beta2") {
        cfg.adam_beta2 = std::stof(val);
      } else if (key == "optimizer.adam_epsilon") {
        cfg.adam_epsilon = std::stof(val);
      } else if (key == "batch_size") {
        cfg.batch_size = std::stoi(val);
      } else if (key == "micro_batches") {
        cfg.micro_batches = std::stoi(val);
      } else if (key == "epochs") {
        cfg.epochs = std::stoi(val);
      } else if (key == "steps_per_epoch") {
        cfg.steps_per_epoch = std::stoi(val);
      } else if (key == "outlier_fraction") {
        cfg.model.outlier_fraction = std::stod(val);
      } else if (key == "bit_width") {
        cfg.model.bit_width = std::stoi(val);
      } else if (key == "dataset") {
        cfg.dataset = val;
      } else if (key == "seed") {
        cfg.seed = std::stoull(val);
      } else if (key == "out_dir") {
        cfg.out_dir = val;
      } else {
        fail(origin, lineno, "unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument& e) {
      // std::sto* throw invalid_argument on junk; rewrap with location
      const std::string what = e.what();
      if (what.find(origin) == 0) throw;
      fail(origin, lineno, "bad value for '" + key + "': " + what);
    }
  }
  if (junctions_set) {
    const Activation a = cfg.model.junctions.front();
    cfg.model.junctions.assign(std::max<std::size_t>(cfg.model.layer_dims.size() - 2, 0), a);
  }
  cfg.model.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config_text(ss.str(), path);
}

}  // namespace qft

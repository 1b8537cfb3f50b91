#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qft/trainer.hpp"

namespace qft {

namespace {

// "synthetic:reg-<in>-<out>-n<rows>[-s<sigma>]"; sigma adds Gaussian target
// noise, giving the regression an irreducible loss floor of sigma^2 per output.
struct SyntheticSpec {
  int in_dim = 0;
  int out_dim = 0;
  int rows = 0;
  double noise = 0.0;
};

SyntheticSpec parse_synthetic(const std::string& spec) {
  SyntheticSpec out;
  const std::string body = spec.substr(std::string("synthetic:").size());
  int in = 0, o = 0, n = 0;
  double sigma = 0.0;
  const int got = std::sscanf(body.c_str(), "reg-%d-%d-n%d-s%lf", &in, &o, &n, &sigma);
  if (got < 3 || in <= 0 || o <= 0 || n <= 0 || sigma < 0.0)
    throw std::invalid_argument("bad synthetic dataset spec '" + spec +
                                "' (expected synthetic:reg-<in>-<out>-n<rows>[-s<sigma>])");
  out.in_dim = in;
  out.out_dim = o;
  out.rows = n;
  out.noise = sigma;
  return out;
}

// Fixed teacher: a small relu net whose weights depend only on the seed, so a
// given spec + seed always produces identical bytes.
Dataset generate_regression(const SyntheticSpec& spec, std::uint64_t seed) {
  ModelConfig teacher_cfg;
  teacher_cfg.layer_dims = {spec.in_dim, 16, spec.out_dim};
  teacher_cfg.seed = seed ^ 0x5eedda7a5eedda7aull;
  FpModel<float> teacher = FpModel<float>::build(teacher_cfg);

  Dataset d;
  d.inputs = Tensor<float>(spec.rows, spec.in_dim);
  std::mt19937_64 rng(seed ^ 0x1a2b3c4d5e6f7081ull);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 0; i < d.inputs.size(); ++i)
    d.inputs[i] = static_cast<float>(unit(rng));
  d.targets = teacher.forward(d.inputs);
  if (spec.noise > 0.0) {
    std::mt19937_64 nrng(seed ^ 0x9015e3d00f00dull);
    std::normal_distribution<double> gauss(0.0, spec.noise);
    for (std::size_t i = 0; i < d.targets.size(); ++i)
      d.targets[i] += static_cast<float>(gauss(nrng));
  }
  return d;
}

Dataset load_csv(const std::string& path, int in_dim, int out_dim) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::vector<float> values;
  std::string line;
  int row = 0;
  const int want = in_dim + out_dim;
  while (std::getline(f, line)) {
    ++row;
    // strip whitespace-only and comment lines
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const float v = std::stof(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
        values.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("dataset '" + path + "' row " + std::to_string(row) +
                                 ": bad value '" + cell + "'");
      }
      ++cols;
    }
    if (cols != want)
      throw std::runtime_error("dataset '" + path + "' row " + std::to_string(row) + ": got " +
                               std::to_string(cols) + " columns, expected " +
                               std::to_string(want));
  }
  if (values.empty()) throw std::runtime_error("dataset '" + path + "' has no rows");
  const int n = static_cast<int>(values.size()) / want;
  Dataset d;
  d.inputs = Tensor<float>(n, in_dim);
  d.targets = Tensor<float>(n, out_dim);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < in_dim; ++c) d.inputs(r, c) = values[r * want + c];
    for (int c = 0; c < out_dim; ++c) d.targets(r, c) = values[r * want + in_dim + c];
  }
  return d;
}

void shuffle_rows(Dataset& d, std::uint64_t seed) {
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x0defaced0c0ffeeull);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out;
  out.inputs = Tensor<float>(d.inputs.rows(), d.inputs.cols());
  out.targets = Tensor<float>(d.targets.rows(), d.targets.cols());
  for (int r = 0; r < d.size(); ++r) {
    for (int c = 0; c < d.inputs.cols(); ++c) out.inputs(r, c) = d.inputs(order[r], c);
    for (int c = 0; c < d.targets.cols(); ++c) out.targets(r, c) = d.targets(order[r], c);
  }
  d = std::move(out);
}

}  // namespace

Dataset ingest_dataset(const std::string& source, int in_dim, int out_dim, std::uint64_t seed) {
  if (in_dim <= 0 || out_dim <= 0)
    throw std::invalid_argument("ingest_dataset: dims must be positive");
  Dataset d;
  if (source.rfind("synthetic:", 0) == 0) {
    const SyntheticSpec spec = parse_synthetic(source);
    if (spec.in_dim != in_dim || spec.out_dim != out_dim)
      throw std::invalid_argument("dataset '" + source + "' is " + std::to_string(spec.in_dim) +
                                  "->" + std::to_string(spec.out_dim) + " but the model wants " +
                                  std::to_string(in_dim) + "->" + std::to_string(out_dim));
    d = generate_regression(spec, seed);
  } else {
    d = load_csv(source, in_dim, out_dim);
  }
  shuffle_rows(d, seed);
  return d;
}

}  // namespace qft

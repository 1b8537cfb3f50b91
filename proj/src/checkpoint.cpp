#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "qft/trainer.hpp"

namespace qft {

namespace {

constexpr char kMagic[4] = {'Q', 'F', 'T', 'C'};
constexpr std::uint16_t kVersion = 1;

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// All multi-byte fields little-endian; this targets little-endian hosts and
// writes native representations.
struct Writer {
  std::vector<std::uint8_t> buf;

  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }

  template <typename T>
  void put_array(const T* v, std::size_t n) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v);
    buf.insert(buf.end(), p, p + n * sizeof(T));
  }
};

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;
  std::string path;

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (p + sizeof(T) > end) throw std::runtime_error("checkpoint '" + path + "' is truncated");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }

  template <typename T>
  std::vector<T> get_array(std::size_t n) {
    if (p + n * sizeof(T) > end)
      throw std::runtime_error("checkpoint '" + path + "' is truncated");
    std::vector<T> v(n);
    std::memcpy(v.data(), p, n * sizeof(T));
    p += n * sizeof(T);
    return v;
  }
};

void write_quantized(Writer& w, const QuantizedTensor<float>& q) {
  w.put_array(q.params.scale.data(), q.params.scale.size());
  w.put_array(q.params.zero_point.data(), q.params.zero_point.size());
  w.put_array(q.data.data(), q.data.size());
}

QuantizedTensor<float> read_quantized(Reader& r, int rows, int cols, int bit_width) {
  QuantizedTensor<float> q;
  q.rows = rows;
  q.cols = cols;
  q.mode = QuantMode::affine;
  q.params.bit_width = bit_width;
  q.params.scale = r.get_array<float>(rows);
  q.params.zero_point = r.get_array<std::int32_t>(rows);
  q.data = r.get_array<std::uint8_t>(static_cast<std::size_t>(rows) * cols);
  return q;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const LionState<float>& state,
                     const std::string& path) {
  const ModelConfig& cfg = model.config();
  if (state.momentum.size() != model.layers().size())
    throw std::invalid_argument("save_checkpoint: momentum count does not match layers");
  Writer w;
  w.put_array(kMagic, 4);
  w.put(kVersion);
  w.put(static_cast<std::uint16_t>(model.layers().size()));
  w.put(static_cast<std::uint8_t>(cfg.bit_width));
  w.put(static_cast<std::uint8_t>(cfg.quant_mode));
  w.put(static_cast<std::uint8_t>(cfg.threshold_kind));
  w.put(static_cast<std::uint8_t>(cfg.loss));
  for (Activation a : cfg.resolved_junctions()) w.put(static_cast<std::uint8_t>(a));
  w.put(static_cast<float>(cfg.outlier_fraction));
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const DenseSparseWeight<float>& dsw = model.layers()[l].weight;
    const QuantizedTensor<float>& mom = state.momentum[l];
    w.put(static_cast<std::uint32_t>(dsw.rows()));
    w.put(static_cast<std::uint32_t>(dsw.cols()));
    if (cfg.quant_mode == QuantMode::passthrough) {
      w.put_array(dsw.dense.raw.data(), dsw.dense.raw.size());
      w.put_array(mom.raw.data(), mom.raw.size());
      continue;
    }
    w.put_array(dsw.t_min.data(), dsw.t_min.size());
    w.put_array(dsw.t_max.data(), dsw.t_max.size());
    write_quantized(w, dsw.dense);
    w.put(static_cast<std::uint32_t>(dsw.sparse.nnz()));
    w.put_array(dsw.sparse.row_ptr.data(), dsw.sparse.row_ptr.size());
    w.put_array(dsw.sparse.col_idx.data(), dsw.sparse.col_idx.size());
    w.put_array(dsw.sparse.values.data(), dsw.sparse.values.size());
    write_quantized(w, mom);
  }
  w.put(crc32(w.buf.data(), w.buf.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  if (!f) throw std::runtime_error("short write to '" + path + "'");
}

std::pair<Model<float>, LionState<float>> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 4 + sizeof(std::uint32_t))
    throw std::runtime_error("checkpoint '" + path + "' is truncated");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint (bad magic)");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw std::runtime_error("checkpoint '" + path + "' is corrupt (crc mismatch)");

  Reader r{buf.data() + 4, buf.data() + buf.size() - 4, path};
  const std::uint16_t version = r.get<std::uint16_t>();
  if (version != kVersion)
    throw std::runtime_error("checkpoint '" + path + "' has unsupported version " +
                             std::to_string(version));
  const std::uint16_t layer_count = r.get<std::uint16_t>();
  if (layer_count == 0) throw std::runtime_error("checkpoint '" + path + "' has no layers");
  ModelConfig cfg;
  cfg.bit_width = r.get<std::uint8_t>();
  cfg.quant_mode = static_cast<QuantMode>(r.get<std::uint8_t>());
  cfg.threshold_kind = static_cast<ThresholdKind>(r.get<std::uint8_t>());
  cfg.loss = static_cast<LossKind>(r.get<std::uint8_t>());
  cfg.junctions.resize(layer_count > 0 ? layer_count - 1 : 0);
  for (auto& a : cfg.junctions) a = static_cast<Activation>(r.get<std::uint8_t>());
  cfg.outlier_fraction = r.get<float>();

  std::vector<QuantizedLinearLayer<float>> layers;
  LionState<float> state;
  for (int l = 0; l < layer_count; ++l) {
    const auto rows = static_cast<int>(r.get<std::uint32_t>());
    const auto cols = static_cast<int>(r.get<std::uint32_t>());
    if (rows <= 0 || cols <= 0)
      throw std::runtime_error("checkpoint '" + path + "' has an empty layer");
    QuantizedLinearLayer<float> layer;
    layer.index = l + 1;
    QuantizedTensor<float> mom;
    if (cfg.quant_mode == QuantMode::passthrough) {
      layer.weight.dense.rows = mom.rows = rows;
      layer.weight.dense.cols = mom.cols = cols;
      layer.weight.dense.mode = mom.mode = QuantMode::passthrough;
      const std::size_t n = static_cast<std::size_t>(rows) * cols;
      layer.weight.dense.raw = r.get_array<float>(n);
      layer.weight.sparse.row_ptr.assign(rows + 1, 0);
      mom.raw = r.get_array<float>(n);
    } else {
      layer.weight.t_min = r.get_array<float>(rows);
      layer.weight.t_max = r.get_array<float>(rows);
      layer.weight.dense = read_quantized(r, rows, cols, cfg.bit_width);
      const std::uint32_t nnz = r.get<std::uint32_t>();
      layer.weight.sparse.row_ptr = r.get_array<std::int32_t>(rows + 1);
      layer.weight.sparse.col_idx = r.get_array<std::int32_t>(nnz);
      layer.weight.sparse.values = r.get_array<float>(nnz);
      if (layer.weight.sparse.row_ptr.back() != static_cast<std::int32_t>(nnz))
        throw std::runtime_error("checkpoint '" + path + "' has inconsistent sparse layout");
      mom = read_quantized(r, rows, cols, cfg.bit_width);
    }
    layer.weight.outlier_fraction = cfg.outlier_fraction;
    if (l == 0) cfg.layer_dims.push_back(cols);
    cfg.layer_dims.push_back(rows);
    layers.push_back(std::move(layer));
    state.momentum.push_back(std::move(mom));
  }
  if (r.p != r.end)
    throw std::runtime_error("checkpoint '" + path + "' has trailing bytes");
  return {Model<float>::from_parts(std::move(cfg), std::move(layers)), std::move(state)};
}

}  // namespace qft

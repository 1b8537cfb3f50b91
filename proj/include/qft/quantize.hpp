#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "qft/tensor.hpp"

namespace qft {

// Storage mode for engine state tensors. Pass-through keeps raw fp values and
// exists solely so the quantized pipeline can be tested bit-for-bit against
// an fp reference.
enum class QuantMode : std::uint8_t { affine = 0, passthrough = 1 };

// How outlier thresholds are derived from a channel's value distribution.
enum class ThresholdKind : std::uint8_t { percentile = 0, range_fraction = 1 };

// Per-channel uniform affine mapping:  q = clip(round(x/s) + z, 0, 2^b-1),
// x_hat = s * (q - z)  with  s = (max-min)/(2^b-1), z = round(-min/s).
// z is kept unclipped so the mapping stays exact for ranges that do not
// straddle zero; for zero-straddling ranges z lands in [0, 2^b-1] anyway.
template <typename T>
struct AffineParams {
  std::vector<T> scale;              // per channel, always > 0
  std::vector<std::int32_t> zero_point;
  int bit_width = 8;                 // in [2, 8]

  int channels() const { return static_cast<int>(scale.size()); }
  std::int32_t qmax() const { return (std::int32_t(1) << bit_width) - 1; }
};

template <typename T>
struct QuantizedTensor {
  int rows = 0;
  int cols = 0;
  QuantMode mode = QuantMode::affine;
  std::vector<std::uint8_t> data;    // affine payload, one byte per element for b <= 8
  std::vector<T> raw;                // pass-through payload
  AffineParams<T> params;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Strict CSR. Column indices are ascending within each row; every stored value
// lies strictly outside the dense thresholds of its channel.
template <typename T>
struct SparseOutliers {
  std::vector<std::int32_t> row_ptr;  // size rows+1
  std::vector<std::int32_t> col_idx;
  std::vector<T> values;

  std::size_t nnz() const { return values.size(); }
};

// Weight = quantized dense part + exact fp outliers. The dense payload holds
// the channel zero-point at outlier positions, so reconstruction is dequant
// followed by overwriting the sparse entries.
template <typename T>
struct DenseSparseWeight {
  QuantizedTensor<T> dense;
  SparseOutliers<T> sparse;
  std::vector<T> t_min, t_max;       // cached per-channel thresholds
  double outlier_fraction = 0.0;

  int rows() const { return dense.rows; }
  int cols() const { return dense.cols; }
};

namespace detail {

// Quantile with linear interpolation over an ascending-sorted range, q in [0,1].
template <typename T>
inline double sorted_quantile(const std::vector<T>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 0) throw std::invalid_argument("quantile of empty range");
  if (n == 1) return static_cast<double>(sorted[0]);
  const double h = q * static_cast<double>(n - 1);
  std::size_t i0 = static_cast<std::size_t>(h);
  if (i0 >= n - 1) return static_cast<double>(sorted[n - 1]);
  const double frac = h - static_cast<double>(i0);
  return static_cast<double>(sorted[i0]) +
         frac * (static_cast<double>(sorted[i0 + 1]) - static_cast<double>(sorted[i0]));
}

inline void require_bit_width(int b) {
  if (b < 2 || b > 8)
    throw std::invalid_argument("bit width must be in [2, 8], got " + std::to_string(b));
}

template <typename T>
inline std::int32_t channel_of(const AffineParams<T>& p, int row) {
  return p.channels() == 1 ? 0 : row;
}

}  // namespace detail

// Affine params from explicit per-channel bounds. Degenerate channels
// (min == max) get the tiny scale max(|min|, 1) * 2^-20; the usual zero-point
// formula then cancels the offset so a constant channel round-trips exactly
// (an all-zero channel gets z = 0 and stays exactly zero).
template <typename T>
AffineParams<T> affine_params_from_bounds(const std::vector<T>& mins, const std::vector<T>& maxs,
                                          int bit_width) {
  detail::require_bit_width(bit_width);
  if (mins.size() != maxs.size() || mins.empty())
    throw std::invalid_argument("affine_params_from_bounds: bad channel count");
  AffineParams<T> p;
  p.bit_width = bit_width;
  p.scale.resize(mins.size());
  p.zero_point.resize(mins.size());
  const double qmax = static_cast<double>((1 << bit_width) - 1);
  for (std::size_t ch = 0; ch < mins.size(); ++ch) {
    const double lo = static_cast<double>(mins[ch]);
    const double hi = static_cast<double>(maxs[ch]);
    if (!(lo <= hi))
      throw std::invalid_argument("affine_params_from_bounds: min > max in channel " +
                                  std::to_string(ch));
    const double s = (lo == hi) ? std::max(std::abs(lo), 1.0) * std::ldexp(1.0, -20)
                                : (hi - lo) / qmax;
    double z = std::round(-lo / s);
    z = std::clamp(z, static_cast<double>(std::numeric_limits<std::int32_t>::min()),
                   static_cast<double>(std::numeric_limits<std::int32_t>::max()));
    p.scale[ch] = static_cast<T>(s);
    p.zero_point[ch] = static_cast<std::int32_t>(z);
  }
  return p;
}

template <typename T>
AffineParams<T> compute_affine_params(const Tensor<T>& x, int bit_width = 8,
                                      bool channel_wise = true) {
  if (x.empty()) throw std::invalid_argument("compute_affine_params: empty tensor");
  if (channel_wise) {
    auto [mins, maxs] = channel_minmax(x);
    return affine_params_from_bounds(mins, maxs, bit_width);
  }
  T lo = x[0], hi = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] < lo) lo = x[i];
    if (x[i] > hi) hi = x[i];
  }
  return affine_params_from_bounds<T>({lo}, {hi}, bit_width);
}

template <typename T>
QuantizedTensor<T> quantize(const Tensor<T>& x, const AffineParams<T>& p) {
  if (p.channels() != 1 && p.channels() != x.rows())
    throw std::invalid_argument("quantize: channel count " + std::to_string(p.channels()) +
                                " does not match rows " + std::to_string(x.rows()));
  QuantizedTensor<T> out;
  out.rows = x.rows();
  out.cols = x.cols();
  out.mode = QuantMode::affine;
  out.params = p;
  out.data.resize(x.size());
  const double qmax = static_cast<double>(p.qmax());
  std::size_t i = 0;
  for (int r = 0; r < x.rows(); ++r) {
    const std::int32_t ch = detail::channel_of(p, r);
    const double s = static_cast<double>(p.scale[ch]);
    const double z = static_cast<double>(p.zero_point[ch]);
    for (int c = 0; c < x.cols(); ++c, ++i) {
      // round half away from zero, then clip into the payload range
      double q = std::round(static_cast<double>(x(r, c)) / s) + z;
      if (!(q > 0.0)) q = 0.0;          // also catches NaN from inf/inf
      if (q > qmax) q = qmax;
      out.data[i] = static_cast<std::uint8_t>(q);
    }
  }
  return out;
}

template <typename T>
QuantizedTensor<T> quantize_passthrough(const Tensor<T>& x) {
  QuantizedTensor<T> out;
  out.rows = x.rows();
  out.cols = x.cols();
  out.mode = QuantMode::passthrough;
  out.raw.assign(x.data(), x.data() + x.size());
  return out;
}

// One-call state quantization used by the pipeline: channel-wise fresh params
// in affine mode, identity in pass-through mode.
template <typename T>
QuantizedTensor<T> quantize_state(const Tensor<T>& x, int bit_width, QuantMode mode) {
  if (mode == QuantMode::passthrough) return quantize_passthrough(x);
  return quantize(x, compute_affine_params(x, bit_width, /*channel_wise=*/true));
}

template <typename T>
Tensor<T> dequantize(const QuantizedTensor<T>& q) {
  if (q.rows <= 0 || q.cols <= 0) throw std::invalid_argument("dequantize: empty tensor");
  Tensor<T> out(q.rows, q.cols);
  if (q.mode == QuantMode::passthrough) {
    for (std::size_t i = 0; i < q.raw.size(); ++i) out[i] = q.raw[i];
    return out;
  }
  std::size_t i = 0;
  for (int r = 0; r < q.rows; ++r) {
    const std::int32_t ch = detail::channel_of(q.params, r);
    const T s = q.params.scale[ch];
    const std::int32_t z = q.params.zero_point[ch];
    for (int c = 0; c < q.cols; ++c, ++i)
      out[i] = s * static_cast<T>(static_cast<std::int32_t>(q.data[i]) - z);
  }
  return out;
}

// Per-channel dense thresholds. fraction is the total outlier budget; each
// tail gets fraction/2. fraction == 0 degenerates to the plain channel range.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> compute_outlier_thresholds(
    const Tensor<T>& w, double fraction, ThresholdKind kind = ThresholdKind::percentile) {
  if (w.empty()) throw std::invalid_argument("compute_outlier_thresholds: empty tensor");
  if (!(fraction >= 0.0) || fraction >= 0.5)
    throw std::invalid_argument("outlier fraction must be in [0, 0.5)");
  std::vector<T> t_min(w.rows()), t_max(w.rows());
  std::vector<T> row;
  for (int r = 0; r < w.rows(); ++r) {
    if (fraction == 0.0 || kind == ThresholdKind::range_fraction) {
      T lo = w(r, 0), hi = w(r, 0);
      for (int c = 1; c < w.cols(); ++c) {
        if (w(r, c) < lo) lo = w(r, c);
        if (w(r, c) > hi) hi = w(r, c);
      }
      if (fraction == 0.0) {
        t_min[r] = lo;
        t_max[r] = hi;
      } else {
        const double span = static_cast<double>(hi) - static_cast<double>(lo);
        t_min[r] = static_cast<T>(lo + (fraction / 2) * span);
        t_max[r] = static_cast<T>(hi - (fraction / 2) * span);
      }
    } else {
      row.assign(&w(r, 0), &w(r, 0) + w.cols());
      std::sort(row.begin(), row.end());
      t_min[r] = static_cast<T>(detail::sorted_quantile(row, fraction / 2));
      t_max[r] = static_cast<T>(detail::sorted_quantile(row, 1.0 - fraction / 2));
    }
  }
  return {std::move(t_min), std::move(t_max)};
}

// Split w into a quantized dense part over [t_min, t_max] and exact sparse
// outliers strictly outside it. Dense payload positions under an outlier hold
// the channel zero-point (clamped into the payload range); reconstruct
// overwrites them, so the stored value only has to be valid, not meaningful.
template <typename T>
DenseSparseWeight<T> decompose_dense_sparse(const Tensor<T>& w, const std::vector<T>& t_min,
                                            const std::vector<T>& t_max, int bit_width = 8) {
  if (static_cast<int>(t_min.size()) != w.rows() || static_cast<int>(t_max.size()) != w.rows())
    throw std::invalid_argument("decompose_dense_sparse: threshold count must equal rows");
  DenseSparseWeight<T> out;
  out.t_min = t_min;
  out.t_max = t_max;
  out.dense.rows = w.rows();
  out.dense.cols = w.cols();
  out.dense.mode = QuantMode::affine;
  out.dense.params = affine_params_from_bounds(t_min, t_max, bit_width);
  out.dense.data.resize(w.size());
  out.sparse.row_ptr.resize(w.rows() + 1, 0);
  const double qmax = static_cast<double>(out.dense.params.qmax());
  std::size_t i = 0;
  for (int r = 0; r < w.rows(); ++r) {
    const double s = static_cast<double>(out.dense.params.scale[r]);
    const std::int32_t z = out.dense.params.zero_point[r];
    const std::uint8_t z_payload =
        static_cast<std::uint8_t>(std::clamp(z, 0, out.dense.params.qmax()));
    for (int c = 0; c < w.cols(); ++c, ++i) {
      const T v = w(r, c);
      if (v < t_min[r] || v > t_max[r]) {
        out.sparse.col_idx.push_back(c);
        out.sparse.values.push_back(v);
        out.dense.data[i] = z_payload;
      } else {
        double q = std::round(static_cast<double>(v) / s) + static_cast<double>(z);
        if (!(q > 0.0)) q = 0.0;
        if (q > qmax) q = qmax;
        out.dense.data[i] = static_cast<std::uint8_t>(q);
      }
    }
    out.sparse.row_ptr[r + 1] = static_cast<std::int32_t>(out.sparse.values.size());
  }
  return out;
}

template <typename T>
DenseSparseWeight<T> make_passthrough_weight(const Tensor<T>& w) {
  DenseSparseWeight<T> out;
  out.dense = quantize_passthrough(w);
  out.sparse.row_ptr.resize(w.rows() + 1, 0);
  return out;
}

// Decompose using a tensor's own thresholds at the given fraction.
template <typename T>
DenseSparseWeight<T> decompose_weight(const Tensor<T>& w, double fraction, int bit_width,
                                      QuantMode mode,
                                      ThresholdKind kind = ThresholdKind::percentile) {
  if (mode == QuantMode::passthrough) {
    auto out = make_passthrough_weight(w);
    out.outlier_fraction = fraction;
    return out;
  }
  auto [t_min, t_max] = compute_outlier_thresholds(w, fraction, kind);
  auto out = decompose_dense_sparse(w, t_min, t_max, bit_width);
  out.outlier_fraction = fraction;
  return out;
}

// Re-quantize updated fp weights against the cached thresholds. Thresholds and
// therefore the dense affine params stay fixed between refreshes.
template <typename T>
void requantize_weight(DenseSparseWeight<T>& dsw, const Tensor<T>& w_fp, int bit_width) {
  if (dsw.dense.mode == QuantMode::passthrough) {
    const double fraction = dsw.outlier_fraction;
    dsw = make_passthrough_weight(w_fp);
    dsw.outlier_fraction = fraction;
    return;
  }
  auto next = decompose_dense_sparse(w_fp, dsw.t_min, dsw.t_max, bit_width);
  next.outlier_fraction = dsw.outlier_fraction;
  dsw = std::move(next);
}

template <typename T>
Tensor<T> reconstruct(const DenseSparseWeight<T>& dsw) {
  Tensor<T> out = dequantize(dsw.dense);
  for (int r = 0; r < dsw.rows(); ++r)
    for (std::int32_t k = dsw.sparse.row_ptr[r]; k < dsw.sparse.row_ptr[r + 1]; ++k)
      out(r, dsw.sparse.col_idx[k]) = dsw.sparse.values[k];
  return out;
}

template <typename T>
double l2_distance(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "l2_distance");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

// ---- exact storage footprints, used by the memory profiler ----

template <typename T>
std::size_t payload_bytes(const QuantizedTensor<T>& q) {
  if (q.mode == QuantMode::passthrough) return q.raw.size() * sizeof(T);
  return q.data.size();  // one byte per element for bit widths up to 8
}

template <typename T>
std::size_t byte_size(const QuantizedTensor<T>& q) {
  if (q.mode == QuantMode::passthrough) return q.raw.size() * sizeof(T);
  return payload_bytes(q) + q.params.scale.size() * sizeof(T) +
         q.params.zero_point.size() * sizeof(std::int32_t);
}

template <typename T>
std::size_t byte_size(const SparseOutliers<T>& s) {
  return s.row_ptr.size() * sizeof(std::int32_t) + s.col_idx.size() * sizeof(std::int32_t) +
         s.values.size() * sizeof(T);
}

template <typename T>
std::size_t byte_size(const DenseSparseWeight<T>& d) {
  if (d.dense.mode == QuantMode::passthrough) return byte_size(d.dense);
  return byte_size(d.dense) + byte_size(d.sparse) + (d.t_min.size() + d.t_max.size()) * sizeof(T);
}

}  // namespace qft

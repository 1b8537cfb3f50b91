#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qft {

// Dense row-major matrix. Weight matrices are laid out [out_features x in_features],
// so the channel axis is always the row axis. 1-D data lives as a single row.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols) {
    if (rows <= 0 || cols <= 0)
      throw std::invalid_argument("Tensor: dimensions must be positive, got " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
  }

  static Tensor row(std::initializer_list<T> values) {
    Tensor t(1, static_cast<int>(values.size()));
    std::size_t i = 0;
    for (T v : values) t.data_[i++] = v;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Tensor t(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != t.cols_)
        throw std::invalid_argument("Tensor: ragged initializer");
      for (T v : r) t.data_[i++] = v;
    }
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[idx(r, c)]; }
  const T& operator()(int r, int c) const { return data_[idx(r, c)]; }

  // flat access, row-major
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t idx(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) +
           static_cast<std::size_t>(c);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

namespace detail {
template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}
}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  Tensor<T> out(a.rows(), b.cols());
  // ikj order; per-element accumulation over k is ascending, same result as a plain dot product
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      for (int j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < T(0)) out[i] = T(0);
  return out;
}

// Masks upstream gradient where the activation input was <= 0. Passing the
// post-activation values gives the same mask: relu(x) > 0  <=>  x > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& activation, const Tensor<T>& grad) {
  detail::require_same_shape(activation, grad, "relu_backward");
  Tensor<T> out = grad;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (activation[i] <= T(0)) out[i] = T(0);
  return out;
}

// Per-row min/max. The row axis is the channel axis everywhere in this library.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> channel_minmax(const Tensor<T>& a) {
  if (a.empty()) throw std::invalid_argument("channel_minmax: empty tensor");
  std::vector<T> mins(a.rows()), maxs(a.rows());
  for (int r = 0; r < a.rows(); ++r) {
    T lo = a(r, 0), hi = a(r, 0);
    for (int c = 1; c < a.cols(); ++c) {
      const T v = a(r, c);
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    mins[r] = lo;
    maxs[r] = hi;
  }
  return {std::move(mins), std::move(maxs)};
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

template <typename T>
double sum_squares(const Tensor<T>& a) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * a[i];
  return acc;
}

}  // namespace qft

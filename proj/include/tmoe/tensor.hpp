#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tmoe {

// Row-major 2-D tensor. Scalars are 1x1, vectors 1xN.
template <typename T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int r, int c, T fill = T(0))
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative shape");
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c, T(0)); }
  static Tensor full(int r, int c, T v) { return Tensor(r, c, v); }
  static Tensor scalar(T v) { return Tensor(1, 1, v); }

  static Tensor randn(int r, int c, std::mt19937& rng, T stddev = T(1)) {
    Tensor out(r, c);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : out.data) v = static_cast<T>(dist(rng)) * stddev;
    return out;
  }

  size_t size() const { return data.size(); }

  T& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  T* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const T* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T item() const {
    if (size() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("Tensor+=: shape mismatch");
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
};

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims differ");
  Tensor<T> out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      T av = a.at(i, k);
      if (av == T(0)) continue;
      const T* brow = b.row(k);
      T* orow = out.row(i);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  return out;
}

// a * b^T;  a: m x k, b: n x k  ->  m x n
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
  Tensor<T> out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) {
      T acc = T(0);
      const T* ar = a.row(i);
      const T* br = b.row(j);
      for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
      out.at(i, j) = acc;
    }
  return out;
}

// a^T * b;  a: k x m, b: k x n  ->  m x n
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims differ");
  Tensor<T> out(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const T* ar = a.row(k);
    const T* br = b.row(k);
    for (int i = 0; i < a.cols; ++i) {
      T av = ar[i];
      if (av == T(0)) continue;
      T* orow = out.row(i);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * br[j];
    }
  }
  return out;
}

}  // namespace tmoe

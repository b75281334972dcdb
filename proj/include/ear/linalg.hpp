// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace ear {

/// Dense row-major matrix of doubles. Every entry is finite.
///
/// One row per token when used as a token matrix (Q, K, V and their
/// centroid-expanded forms); the same type carries logits, probabilities
/// and block tables.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  /// Throws ShapeError when data.size() != rows * cols and InputError when
  /// any entry is NaN or infinite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;
  std::string shape_string() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using TokenMatrix = Matrix;

/// Arithmetic used by the streaming kernels. Oracle paths are always double.
enum class Precision { kDouble, kSingle };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& name);

/// Sequential-order dot product. Every reduction in the library goes
/// through this so results are reproducible per build.
template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

/// Returns a * b^T. Entry (i, j) is dot(row_i(a), row_j(b)).
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// Row-wise softmax with max subtraction.
Matrix row_softmax(const Matrix& logits);

/// max + log(sum(exp(v - max))). Throws ConfigError on empty input.
double log_sum_exp(std::span<const double> values);

/// Running state of a streaming softmax-weighted sum over one row.
///
/// The empty state (max = -inf, normalizer = 0, accumulator = 0) absorbs the
/// first finite logit exactly, so no special casing is needed by callers.
template <typename T>
struct OnlineSoftmax {
  T max = -std::numeric_limits<T>::infinity();
  T normalizer = 0;
  std::vector<T> acc;

  explicit OnlineSoftmax(std::size_t dim) : acc(dim, T(0)) {}

  /// Seeds from an already-normalized partial result with the given
  /// log-sum-exp (m = lse, l = 1, acc = output).
  static OnlineSoftmax seeded(T lse, std::span<const T> output) {
    OnlineSoftmax s(output.size());
    if (lse == -std::numeric_limits<T>::infinity()) return s;
    s.max = lse;
    s.normalizer = T(1);
    s.acc.assign(output.begin(), output.end());
    return s;
  }

  bool empty() const { return normalizer == T(0); }

  void merge(T logit, std::span<const T> contribution) {
    const T m_new = logit > max ? logit : max;
    const T alpha = std::exp(max - m_new);
    const T p = std::exp(logit - m_new);
    normalizer = normalizer * alpha + p;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] * alpha + p * contribution[i];
    max = m_new;
  }

  /// Log of the total absorbed mass.
  T lse() const { return max + std::log(normalizer); }

  void write_output(std::span<T> out) const {
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = acc[i] / normalizer;
  }
};

}  // namespace ear

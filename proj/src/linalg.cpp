// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/linalg.hpp"

#include <algorithm>
#include <sstream>

#include "ear/error.hpp"

namespace ear {

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream os;
    os << "matrix data length " << data_.size() << " does not match shape " << rows_ << "x" << cols_;
    throw ShapeError(os.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      std::ostringstream os;
      os << "non-finite matrix entry at row " << i / std::max<std::size_t>(cols_, 1) << ", col "
         << i % std::max<std::size_t>(cols_, 1);
      throw InputError(os.str());
    }
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << "[" << rows_ << "x" << cols_ << "]";
  return os.str();
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: inner dimensions differ, a=" + a.shape_string() +
                     " b=" + b.shape_string());
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ai, b.row(j));
  }
  return out;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto in = logits.row(i);
    auto dst = out.row(i);
    if (in.empty()) continue;
    const double m = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      dst[j] = std::exp(in[j] - m);
      sum += dst[j];
    }
    for (double& x : dst) x /= sum;
  }
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ConfigError("log_sum_exp: empty input");
  if (values.size() == 1) return values[0];
  const double m = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

std::string to_string(Precision p) { return p == Precision::kDouble ? "double" : "single-executor"; }

Precision precision_from_string(const std::string& name) {
  if (name == "double") return Precision::kDouble;
  if (name == "single" || name == "single-executor") return Precision::kSingle;
  throw ConfigError("unknown precision '" + name + "' (expected double or single-executor)");
}

}  // namespace ear

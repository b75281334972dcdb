// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ear/error.hpp"
#include "ear/linalg.hpp"
#include "test_support.hpp"

namespace ear {
namespace {

TEST(Matrix, RejectsWrongLength) { EXPECT_THROW(Matrix(2, 2, {1.0, 2.0, 3.0}), ShapeError); }

TEST(Matrix, RejectsNonFinite) {
  EXPECT_THROW(Matrix(1, 2, {1.0, std::nan("")}), InputError);
  EXPECT_THROW(Matrix(1, 1, {INFINITY}), InputError);
}

TEST(MatmulTransposed, OrthogonalRows) {
  const Matrix r = matmul_transposed(Matrix(1, 2, {1, 0}), Matrix(1, 2, {0, 1}));
  EXPECT_EQ(r, Matrix(1, 1, {0.0}));
}

TEST(MatmulTransposed, DotProduct) {
  EXPECT_EQ(matmul_transposed(Matrix(1, 2, {1, 2}), Matrix(1, 2, {3, 4})), Matrix(1, 1, {11.0}));
}

TEST(MatmulTransposed, IdentityTimesIdentity) {
  EXPECT_EQ(matmul_transposed(Matrix::identity(2), Matrix::identity(2)), Matrix::identity(2));
}

TEST(MatmulTransposed, ShapeErrorNamesBothShapes) {
  try {
    matmul_transposed(Matrix(2, 3), Matrix(4, 5));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
  }
}

TEST(MatmulTransposed, SwappedOperandsGiveTranspose) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = testing::random_matrix(testing::uniform_index(rng, 1, 9), 5, rng);
    const Matrix b = testing::random_matrix(testing::uniform_index(rng, 1, 9), 5, rng);
    EXPECT_EQ(matmul_transposed(a, b), matmul_transposed(b, a).transposed());
  }
}

TEST(RowSoftmax, Examples) {
  EXPECT_EQ(row_softmax(Matrix(1, 2, {0, 0})), Matrix(1, 2, {0.5, 0.5}));
  const Matrix r = row_softmax(Matrix(1, 2, {std::log(3.0), 0}));
  EXPECT_NEAR(r(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(r(0, 1), 0.25, 1e-15);
  EXPECT_EQ(row_softmax(Matrix(1, 2, {1000, 1000})), Matrix(1, 2, {0.5, 0.5}));
}

TEST(RowSoftmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = testing::uniform_index(rng, 1, 6);
    const std::size_t cols = testing::uniform_index(rng, 1, 12);
    const Matrix x = testing::random_matrix(rows, cols, rng, 10.0);
    const double shift = std::uniform_real_distribution<double>(-500, 500)(rng);
    std::vector<double> shifted = x.data();
    for (double& v : shifted) v += shift;
    const Matrix a = row_softmax(x);
    const Matrix b = row_softmax(Matrix(rows, cols, shifted));
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        EXPECT_GT(a(r, c), 0.0);
        EXPECT_LE(a(r, c), 1.0);
        EXPECT_NEAR(a(r, c), b(r, c), 1e-12);
        sum += a(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(LogSumExp, Examples) {
  EXPECT_EQ(log_sum_exp(std::vector<double>{3.25}), 3.25);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{0, 0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{-1e9, 0}), 0.0, 1e-12);
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), ConfigError);
}

TEST(OnlineSoftmax, MergeAtCurrentMax) {
  std::vector<double> v{2.0, -1.0};
  auto s = OnlineSoftmax<double>::seeded(0.5, v);
  s.merge(0.5, std::vector<double>{4.0, 1.0});
  EXPECT_EQ(s.max, 0.5);
  EXPECT_EQ(s.normalizer, 2.0);
  EXPECT_EQ(s.acc, (std::vector<double>{6.0, 0.0}));
}

TEST(OnlineSoftmax, MergeHalfWeight) {
  const std::vector<double> v{1.0, 3.0};
  const std::vector<double> c{2.0, -2.0};
  auto s = OnlineSoftmax<double>::seeded(0.0, v);
  s.merge(-std::log(2.0), c);
  EXPECT_NEAR(s.normalizer, 1.5, 1e-15);
  EXPECT_NEAR(s.acc[0], 1.0 + 0.5 * 2.0, 1e-15);
  EXPECT_NEAR(s.acc[1], 3.0 - 0.5 * 2.0, 1e-15);
}

TEST(OnlineSoftmax, EmptySeedFromNegativeInfinity) {
  const std::vector<double> zero{0.0};
  auto s = OnlineSoftmax<double>::seeded(-INFINITY, zero);
  EXPECT_TRUE(s.empty());
  s.merge(1.0, std::vector<double>{5.0});
  std::vector<double> out(1);
  s.write_output(out);
  EXPECT_EQ(out[0], 5.0);
  EXPECT_EQ(s.lse(), 1.0);
}

// Any order of merges matches the two-pass softmax-weighted sum.
TEST(OnlineSoftmax, PermutationInvariantAgainstTwoPass) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 1, 20);
    const std::size_t d = testing::uniform_index(rng, 1, 4);
    const Matrix logits = testing::random_matrix(1, n, rng, 20.0);
    const Matrix values = testing::random_matrix(n, d, rng);
    std::vector<double> probs, expected;
    testing::softmax_row(std::vector<double>(logits.data()), testing::to_dense(values), probs, expected);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    OnlineSoftmax<double> s(d);
    for (std::size_t j : order) s.merge(logits(0, j), values.row(j));
    std::vector<double> out(d);
    s.write_output(out);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out[c], expected[c], 1e-9);
    EXPECT_NEAR(s.lse(), log_sum_exp(logits.row(0)), 1e-12);
  }
}

TEST(Precision, Names) {
  EXPECT_EQ(precision_from_string("double"), Precision::kDouble);
  EXPECT_EQ(precision_from_string("single-executor"), Precision::kSingle);
  EXPECT_EQ(to_string(Precision::kSingle), "single-executor");
  EXPECT_THROW(precision_from_string("half"), ConfigError);
}

}  // namespace
}  // namespace ear

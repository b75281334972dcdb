// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "ear/error.hpp"
#include "ear/oracle.hpp"
#include "test_support.hpp"

namespace ear {
namespace {

BlockErrorTable items_table(const std::vector<double>& values, const std::vector<std::size_t>& weights) {
  // One query cluster of size 1, so every block weight is its key-cluster size.
  return BlockErrorTable::from_values({{1}, weights}, Matrix(1, values.size(), values));
}

TEST(FullAttention, TwoEqualKeys) {
  const FullAttention f = full_attention(Matrix(1, 1, {0}), Matrix(2, 1, {0, 0}), Matrix(2, 1, {1, 3}));
  EXPECT_EQ(f.map.probs, Matrix(1, 2, {0.5, 0.5}));
  EXPECT_EQ(f.output, Matrix(1, 1, {2.0}));
}

TEST(FullAttention, SingleKey) {
  const FullAttention f = full_attention(Matrix(2, 2, {1, 2, 3, 4}), Matrix(1, 2, {5, 6}), Matrix(1, 3, {7, 8, 9}));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(f.map.probs(i, 0), 1.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f.output(i, c), 7.0 + c);
  }
}

TEST(FullAttention, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(0);
  const Matrix q = testing::random_matrix(8, 4, rng), k = testing::random_matrix(8, 4, rng),
               v = testing::random_matrix(8, 4, rng);
  const FullAttention f = full_attention(q, k, v);
  const auto naive = testing::naive_full(q, k, v);
  EXPECT_LE(testing::max_abs_diff(f.output, naive.output), 1e-12);
  EXPECT_LE(testing::max_abs_diff(f.map.probs, naive.probs), 1e-12);
  for (std::size_t i = 0; i < 8; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      sum += f.map.probs(i, j);
      const double logit = testing::inner(testing::to_dense(q)[i], testing::to_dense(k)[j]) / 2.0;
      EXPECT_NEAR(f.map.probs(i, j), std::exp(logit - f.map.row_max[i]) / f.map.normalizers[i], 1e-14);
    }
    EXPECT_NEAR(sum, 1.0, 1e-10);
  }
}

TEST(FullAttention, DimensionMismatch) {
  EXPECT_THROW(full_attention(Matrix(1, 2), Matrix(1, 3), Matrix(1, 3)), ShapeError);
  EXPECT_THROW(full_attention(Matrix(1, 2), Matrix(2, 2), Matrix(3, 2)), ShapeError);
}

TEST(SparseMapDirect, AllOnesIsFull) {
  std::mt19937_64 rng(1);
  const Matrix q = testing::random_matrix(12, 3, rng), k = testing::random_matrix(10, 3, rng);
  const auto qm = ClusterModel::from_assignments(q, testing::random_assignment(12, 3, rng), 3);
  const auto km = ClusterModel::from_assignments(k, testing::random_assignment(10, 4, rng), 4);
  const AttentionMap s = sparse_map_direct(q, k, qm, km, BlockMask::all(BlockLayout::from_models(qm, km), true));
  EXPECT_LE(testing::max_abs_diff(s.probs, full_attention(q, k, Matrix(10, 1)).map.probs), 1e-12);
}

TEST(SparseMapDirect, AllZerosWithExactKeyClusters) {
  std::mt19937_64 rng(2);
  std::vector<std::size_t> labels;
  const Matrix k = testing::duplicated_rows(10, 3, 2, rng, labels);
  const Matrix q = testing::random_matrix(6, 2, rng);
  const auto qm = ClusterModel::from_assignments(q, testing::random_assignment(6, 2, rng), 2);
  const auto km = ClusterModel::from_assignments(k, labels, 3);
  const AttentionMap s = sparse_map_direct(q, k, qm, km, BlockMask(BlockLayout::from_models(qm, km)));
  EXPECT_LE(testing::max_abs_diff(s.probs, full_attention(q, k, Matrix(10, 1)).map.probs), 1e-12);
}

TEST(SparseMapDirect, HandSizedMixedMask) {
  const Matrix q(4, 1, {1, -1, 0.5, 2});
  const Matrix k(4, 1, {0.3, -0.7, 1.5, 0.1});
  const std::vector<std::size_t> qa{0, 0, 1, 1}, ka{0, 1, 0, 1};
  const auto qm = ClusterModel::from_assignments(q, qa, 2);
  const auto km = ClusterModel::from_assignments(k, ka, 2);
  const std::vector<std::uint8_t> bits{1, 0, 0, 1};
  const AttentionMap s = sparse_map_direct(q, k, qm, km, BlockMask(BlockLayout::from_models(qm, km), bits));
  EXPECT_LE(testing::max_abs_diff(s.probs, testing::naive_sparse(q, k, Matrix(4, 1), qa, ka, 2, bits).probs), 1e-12);
}

TEST(SparseMapDirect, MaskMismatch) {
  const Matrix q(2, 1, {1, 2});
  const auto m = ClusterModel::from_assignments(q, {0, 1}, 2);
  EXPECT_THROW(sparse_map_direct(q, q, m, m, BlockMask(BlockLayout{{2}, {2}})), ShapeError);
}

TEST(ExactEntryErrors, Examples) {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> labels;
  const Matrix k = testing::duplicated_rows(8, 8, 2, rng, labels);
  const Matrix q = testing::random_matrix(3, 2, rng);
  const EntryErrors e = exact_entry_errors(q, k, ClusterModel::from_assignments(k, labels, 8));
  for (double x : e.errors.data()) EXPECT_EQ(x, 0.0);

  // q = 1, centroid 0, key ln 4 with c = 0: (1 - 4)^2.
  const Matrix k2(2, 1, {std::log(4.0), -std::log(4.0)});
  const std::vector<double> c{0.0};
  const EntryErrors e2 = exact_entry_errors(Matrix(1, 1, {1}), k2, ClusterModel::from_assignments(k2, {0, 0}, 1), c);
  EXPECT_NEAR(e2.errors(0, 0), 9.0, 1e-12);
}

TEST(ExactEntryErrors, StabilizerRescalesAnalytically) {
  std::mt19937_64 rng(4);
  const Matrix q = testing::random_matrix(8, 3, rng), k = testing::random_matrix(8, 3, rng);
  const auto km = ClusterModel::from_assignments(k, testing::random_assignment(8, 3, rng), 3);
  const std::vector<double> zeros(8, 0.0);
  const EntryErrors raw = exact_entry_errors(q, k, km, zeros);
  const EntryErrors stab = exact_entry_errors(q, k, km);
  const auto K = testing::to_dense(k), Q = testing::to_dense(q);
  const auto kbar = testing::naive_means(K, km.assignments, 3);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double s = testing::inner(Q[i], K[j]) / std::sqrt(3.0);
      const double sbar = testing::inner(Q[i], kbar[km.assignments[j]]) / std::sqrt(3.0);
      const double unstab = std::pow(std::exp(sbar) - std::exp(s), 2);
      EXPECT_NEAR(raw.errors(i, j), unstab, 1e-10 * std::max(1.0, unstab));
      EXPECT_NEAR(stab.errors(i, j), unstab * std::exp(-2 * stab.stabilizers[i]), 1e-10);
    }
  }
}

TEST(Knapsack, ClassicThreeItems) {
  const auto t = items_table({10, 6, 5}, {5, 3, 3});
  const BlockMask m = knapsack_oracle(t, 6);
  EXPECT_FALSE(m.selected(0, 0));
  EXPECT_TRUE(m.selected(0, 1));
  EXPECT_TRUE(m.selected(0, 2));
  EXPECT_EQ(selected_value(t, m), 11.0);
  EXPECT_EQ(knapsack_dp(t, 6), m);
}

TEST(Knapsack, CapacityEdges) {
  const auto t = items_table({10, 6, 5}, {5, 3, 3});
  EXPECT_EQ(knapsack_oracle(t, 100).density_entries(), 11);
  EXPECT_EQ(knapsack_oracle(t, 0).density_entries(), 0);
  EXPECT_THROW(knapsack_oracle(t, -1), ConfigError);
}

TEST(Knapsack, TiesPreferLowerIndexBlocks) {
  const auto t = items_table({1, 1, 1}, {1, 1, 1});
  const BlockMask a = knapsack_oracle(t, 2);
  EXPECT_EQ(a.bits(), (std::vector<std::uint8_t>{1, 1, 0}));
  EXPECT_EQ(knapsack_dp(t, 2).bits(), a.bits());
}

TEST(Knapsack, LimitsRaiseCapabilityError) {
  std::vector<double> vals(30, 1.0);
  const auto t = items_table(vals, std::vector<std::size_t>(30, 2));
  KnapsackLimits tight;
  tight.max_dp_capacity = 10;
  EXPECT_THROW(knapsack_oracle(t, 20, tight), CapabilityError);
  EXPECT_NO_THROW(knapsack_oracle(t, 10, tight));
}

// Exhaustive and DP routes agree on value with a from-scratch enumeration.
TEST(Knapsack, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 1, 12);
    std::vector<double> vals(n);
    std::vector<std::size_t> w(n);
    std::vector<std::int64_t> wi(n);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      vals[i] = trial % 4 == 0 ? static_cast<double>(testing::uniform_index(rng, 0, 3))
                               : std::uniform_real_distribution<double>(0, 10)(rng);
      w[i] = testing::uniform_index(rng, 1, 9);
      wi[i] = static_cast<std::int64_t>(w[i]);
      total += wi[i];
    }
    const auto t = items_table(vals, w);
    const auto cap = static_cast<std::int64_t>(testing::uniform_index(rng, 0, total));
    const double best = testing::brute_force_knapsack(vals, wi, cap);
    const BlockMask ex = knapsack_oracle(t, cap);
    const BlockMask dp = knapsack_dp(t, cap);
    EXPECT_NEAR(selected_value(t, ex), best, 1e-9);
    EXPECT_NEAR(selected_value(t, dp), best, 1e-9);
    EXPECT_LE(ex.density_entries(), cap);
    EXPECT_LE(dp.density_entries(), cap);
  }
}

TEST(MapMse, Examples) {
  AttentionMap a{Matrix(2, 2, {0.5, 0.5, 0.2, 0.8}), {0, 0}, {1, 1}};
  AttentionMap b = a;
  EXPECT_EQ(map_mse(a, a), 0.0);
  b.probs(1, 1) = 0.9;
  EXPECT_NEAR(map_mse(a, b), 0.0025, 1e-15);
  EXPECT_EQ(map_mse(a, b), map_mse(b, a));
  AttentionMap c{Matrix(1, 2), {0}, {1}};
  EXPECT_THROW(map_mse(a, c), ShapeError);
}

TEST(MapMse, PositiveWhenKeysAreNotCentroids) {
  std::mt19937_64 rng(6);
  const Matrix q = testing::random_matrix(10, 3, rng), k = testing::random_matrix(12, 3, rng);
  const auto qm = ClusterModel::from_assignments(q, testing::random_assignment(10, 2, rng), 2);
  const auto km = ClusterModel::from_assignments(k, testing::random_assignment(12, 3, rng), 3);
  const auto full = full_attention(q, k, Matrix(12, 1));
  const auto sparse = sparse_map_direct(q, k, qm, km, BlockMask(BlockLayout::from_models(qm, km)));
  const double mse = map_mse(sparse, full.map);
  EXPECT_GT(mse, 0.0);
  EXPECT_LE(mse, 4.0);
}

}  // namespace
}  // namespace ear

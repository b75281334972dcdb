// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "ear/analysis.hpp"
#include "ear/clustering.hpp"
#include "ear/error.hpp"
#include "test_support.hpp"

namespace ear {
namespace {

TEST(KMeans, SeparatesExactClusters) {
  const Matrix x(4, 1, {0, 0, 10, 10});
  const ClusterModel m = kmeans(x, 2);
  EXPECT_EQ(m.assignments[0], m.assignments[1]);
  EXPECT_EQ(m.assignments[2], m.assignments[3]);
  EXPECT_NE(m.assignments[0], m.assignments[2]);
  std::multiset<double> centroids{m.centroids(0, 0), m.centroids(1, 0)};
  EXPECT_EQ(centroids, (std::multiset<double>{0.0, 10.0}));
  EXPECT_EQ(quality(m, x).delta_sq, 0.0);
}

TEST(KMeans, OneClusterPerToken) {
  std::mt19937_64 rng(1);
  const Matrix x = testing::random_matrix(9, 3, rng);
  const ClusterModel m = kmeans(x, 9);
  EXPECT_EQ(quality(m, x).delta_sq, 0.0);
  for (std::size_t s : m.sizes) EXPECT_EQ(s, 1u);
}

TEST(KMeans, RecoversTwoBlobs) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> data;
  std::vector<int> truth;
  for (int i = 0; i < 100; ++i) {
    const double center = i % 2 ? 10.0 : -10.0;
    data.push_back(center + n(rng));
    data.push_back(n(rng));
    truth.push_back(i % 2);
  }
  const Matrix x(100, 2, data);
  const ClusterModel m = kmeans(x, 2, {25, 3});
  // Label each point by the true mean it is nearest to, then compare with the
  // cluster whose centroid is nearest that true mean.
  const std::size_t pos = m.centroids(0, 0) > m.centroids(1, 0) ? 0 : 1;
  int agree = 0;
  for (int i = 0; i < 100; ++i) {
    const int nearer = x(i, 0) > 0 ? 1 : 0;
    agree += (m.assignments[i] == pos) == (nearer == 1);
  }
  EXPECT_GE(agree, 98);
}

TEST(KMeans, Errors) {
  const Matrix x(3, 1, {1, 2, 3});
  EXPECT_THROW(kmeans(x, 0), ConfigError);
  EXPECT_THROW(kmeans(x, 4), ConfigError);
}

TEST(KMeans, InvariantsOnRandomData) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 2, 80);
    const std::size_t d = testing::uniform_index(rng, 1, 6);
    const std::size_t k = testing::uniform_index(rng, 1, n);
    // Duplicate rows exercise the empty-cluster repair.
    std::vector<std::size_t> labels;
    const Matrix x = trial % 3 == 0 ? testing::duplicated_rows(n, std::max<std::size_t>(1, n / 4), d, rng, labels)
                                    : testing::random_matrix(n, d, rng);
    const ClusterModel m = kmeans(x, k, {25, static_cast<std::uint64_t>(trial)});

    std::size_t total = 0;
    for (std::size_t s : m.sizes) {
      EXPECT_GE(s, 1u);
      total += s;
    }
    EXPECT_EQ(total, n);

    std::vector<std::size_t> perm = m.permutation;
    std::sort(perm.begin(), perm.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(perm[i], i);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t t : m.members(c)) EXPECT_EQ(m.assignments[t], c);

    const auto means = testing::naive_means(testing::to_dense(x), m.assignments, k);
    EXPECT_LE(testing::max_abs_diff(m.centroids, means), 1e-10);

    for (std::size_t it = 1; it < m.inertia_history.size(); ++it)
      EXPECT_LE(m.inertia_history[it], m.inertia_history[it - 1] * (1 + 1e-12) + 1e-12);

    const ClusteringQuality qual = quality(m, x);
    EXPECT_NEAR(qual.delta_sq, qual.inertia / static_cast<double>(n), 1e-10);
  }
}

TEST(KMeans, DeterministicGivenSeed) {
  std::mt19937_64 rng(2);
  const Matrix x = testing::random_matrix(50, 4, rng);
  const ClusterModel a = kmeans(x, 6, {25, 42});
  const ClusterModel b = kmeans(x, 6, {25, 42});
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.centroids, b.centroids);
}

TEST(KMeans, BestOfRestartsNeverWorse) {
  std::mt19937_64 rng(4);
  const Matrix x = testing::random_matrix(60, 3, rng);
  const ClusterModel best = kmeans_best_of(x, 5, 5, {25, 10});
  for (std::uint64_t r = 0; r < 5; ++r)
    EXPECT_LE(quality(best, x).inertia, quality(kmeans(x, 5, {25, 10 + r}), x).inertia + 1e-12);
}

TEST(ExpandCentroids, Examples) {
  std::mt19937_64 rng(6);
  const Matrix x = testing::random_matrix(5, 2, rng);
  EXPECT_EQ(expand_centroids(ClusterModel::from_assignments(x, {0, 1, 2, 3, 4}, 5), x), x);

  const ClusterModel one = ClusterModel::from_assignments(x, {0, 0, 0, 0, 0}, 1);
  const Matrix e = expand_centroids(one, x);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 5; ++r) mean += x(r, c) / 5.0;
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(e(r, c), mean, 1e-15);
  }

  const Matrix y(4, 1, {0, 0, 10, 10});
  EXPECT_EQ(expand_centroids(kmeans(y, 2), y), y);
}

TEST(Quality, Examples) {
  const Matrix exact(4, 1, {0, 0, 10, 10});
  EXPECT_EQ(quality(ClusterModel::from_assignments(exact, {0, 0, 1, 1}, 2), exact).delta_sq, 0.0);
  const Matrix single(1, 2, {1, 0});
  EXPECT_EQ(quality(ClusterModel::from_assignments(single, {0}, 1), single).k_max, 1.0);
  const Matrix pair(2, 1, {0, 2});
  EXPECT_EQ(quality(ClusterModel::from_assignments(pair, {0, 0}, 1), pair).delta_sq, 1.0);
}

TEST(Quality, ZeroErrorIffTokensEqualCentroids) {
  std::mt19937_64 rng(8);
  std::vector<std::size_t> labels;
  const Matrix x = testing::duplicated_rows(30, 4, 3, rng, labels);
  EXPECT_EQ(quality(ClusterModel::from_assignments(x, labels, 4), x).delta_sq, 0.0);
  const Matrix y = testing::random_matrix(30, 3, rng);
  EXPECT_GT(quality(ClusterModel::from_assignments(y, labels, 4), y).delta_sq, 0.0);
}

TEST(FromAssignments, RejectsEmptyCluster) {
  const Matrix x(2, 1, {0, 1});
  EXPECT_THROW(ClusterModel::from_assignments(x, {0, 0}, 2), ConfigError);
  EXPECT_THROW(ClusterModel::from_assignments(x, {0, 5}, 2), ConfigError);
}

TEST(PermuteRows, Examples) {
  const Matrix x(2, 1, {1, 2});
  EXPECT_EQ(permute_rows(x, ClusterModel::from_assignments(x, {0, 1}, 2)), x);
  EXPECT_EQ(permute_rows(x, ClusterModel::from_assignments(x, {1, 0}, 2)), Matrix(2, 1, {2, 1}));
}

TEST(PermuteRows, RoundTripIsBitwise) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = testing::random_matrix(16, 3, rng);
    const ClusterModel m = ClusterModel::from_assignments(x, testing::random_assignment(16, 4, rng), 4);
    const Matrix p = permute_rows(x, m);
    EXPECT_EQ(inverse_permute_rows(p, m).data(), x.data());
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t t = 0; t < m.sizes[c]; ++t)
        EXPECT_EQ(m.assignments[m.permutation[m.offsets[c] + t]], c);
  }
  EXPECT_THROW(inverse_permute_rows(Matrix(3, 3), ClusterModel::from_assignments(Matrix(2, 1), {0, 0}, 1)),
               ShapeError);
}

TEST(ClusterMeans, ValuesFollowKeyAssignments) {
  std::mt19937_64 rng(13);
  const Matrix k = testing::random_matrix(20, 3, rng);
  const Matrix v = testing::random_matrix(20, 5, rng);
  const ClusterModel m = kmeans(k, 4);
  EXPECT_LE(testing::max_abs_diff(cluster_means(m, v), testing::naive_means(testing::to_dense(v), m.assignments, 4)),
            1e-12);
}

// Finer query clusterings of fixed blob data never increase the clustering
// error when each count uses the best of five restarts.
TEST(ClusteringStudy, ErrorNonIncreasingInClusterCount) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BlobSpec spec;
    spec.q_blobs = 16;
    spec.seed = 100 + seed;
    const Instance in = generate_blobs(spec);
    const auto pts = clustering_study(in, {4, 8, 16, 32}, 32, 0.85, seed, 5);
    for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LE(pts[i].delta_sq, pts[i - 1].delta_sq);
  }
}

TEST(ClusteringStudy, FullResolutionHasZeroError) {
  BlobSpec spec;
  spec.n_q = 32;
  spec.n_k = 32;
  const Instance in = generate_blobs(spec);
  EXPECT_EQ(clustering_study(in, {32}, 8, 0.85, 0, 1)[0].delta_sq, 0.0);
}

}  // namespace
}  // namespace ear

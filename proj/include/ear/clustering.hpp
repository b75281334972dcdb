// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ear/linalg.hpp"

namespace ear {

/// Cluster assignment of one token set together with the bookkeeping needed
/// to walk each cluster's members contiguously.
///
/// `permutation[p]` is the original index of the token placed at position p
/// of the cluster-contiguous order; cluster c occupies
/// `[offsets[c], offsets[c] + sizes[c])` of that order.
struct ClusterModel {
  std::size_t num_clusters = 0;
  std::vector<std::size_t> assignments;
  Matrix centroids;
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> permutation;
  std::vector<std::size_t> offsets;

  /// Total within-cluster sum of squares after each Lloyd iteration
  /// (index 0 is the state right after seeding).
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
  /// Multiply-adds spent on distance products, counted as 2 FLOPs each.
  std::uint64_t flops = 0;

  std::size_t num_tokens() const { return assignments.size(); }
  std::size_t dim() const { return centroids.cols(); }

  std::span<const std::size_t> members(std::size_t c) const {
    return {permutation.data() + offsets[c], sizes[c]};
  }

  /// Builds a model from explicit assignments; centroids are the member means.
  /// Throws ConfigError when a cluster is empty or an index is out of range.
  static ClusterModel from_assignments(const Matrix& tokens, std::vector<std::size_t> assignments,
                                       std::size_t num_clusters);
};

struct ClusteringQuality {
  double delta_sq = 0.0;  ///< mean squared distance token -> centroid
  double k_max = 0.0;     ///< max l2 norm over tokens
  double inertia = 0.0;   ///< total within-cluster sum of squares
};

struct KMeansOptions {
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
};

/// Lloyd's k-means with k-means++ seeding.
///
/// Nearest-centroid assignment uses a batched token x centroid product; ties
/// go to the lower cluster index. Empty clusters are reseeded from the token
/// farthest from its centroid among clusters that can spare one.
ClusterModel kmeans(const Matrix& tokens, std::size_t num_clusters, const KMeansOptions& options = {});

/// Runs `restarts` independent seeds (seed, seed + 1, ...) and keeps the one
/// with the lowest final inertia (earliest on ties).
ClusterModel kmeans_best_of(const Matrix& tokens, std::size_t num_clusters, std::size_t restarts,
                            const KMeansOptions& options = {});

/// Row i of the result is the centroid of token i's cluster.
Matrix expand_centroids(const ClusterModel& model, const Matrix& tokens);

/// Per-cluster means of `values` under the model's assignments. Used for the
/// value centroids, which follow the key clustering.
Matrix cluster_means(const ClusterModel& model, const Matrix& values);

ClusteringQuality quality(const ClusterModel& model, const Matrix& tokens);

/// Reorders rows into cluster-contiguous order.
Matrix permute_rows(const Matrix& tokens, const ClusterModel& model);
Matrix inverse_permute_rows(const Matrix& permuted, const ClusterModel& model);

}  // namespace ear

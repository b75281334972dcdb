// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ear/blocks.hpp"
#include "ear/clustering.hpp"
#include "ear/linalg.hpp"

namespace ear {

struct EstimatorOptions {
  /// One constant per query cluster. Defaults to the max centroid logit of
  /// each query-cluster centroid over the key-cluster centroids.
  std::optional<std::vector<double>> stabilizers;
  /// Keys per streaming tile.
  std::size_t tile_size = 64;
  Precision precision = Precision::kDouble;
};

/// Centroid-proxy error: the query-cluster centroid stands in for every query
/// of its cluster, so each (query cluster, key) error is computed once and
/// counted |q_c| times in the block sum. Cost O(C_q * N_k * d).
///
/// Per entry: (exp(qbar kbar_j / sqrt d - s) - exp(qbar k_j / sqrt d - s))^2.
BlockErrorTable estimate_errors(const ClusterModel& q_model, const ClusterModel& k_model, const Matrix& k,
                                const EstimatorOptions& options = {});

/// Value-aware variant: ||exp(qbar kbar_j / sqrt d - s) vbar_j - exp(qbar k_j / sqrt d - s) v_j||^2
/// with vbar the value means under the key clustering.
BlockErrorTable estimate_errors_value_aware(const ClusterModel& q_model, const ClusterModel& k_model,
                                            const Matrix& k, const Matrix& v, const EstimatorOptions& options = {});

/// Value-aware estimate computed tile by tile with a running per-block max:
/// when the max advances by delta the accumulated error is scaled by
/// exp(-2 delta) and the centroid reference vector by exp(-delta). The block
/// is rescaled to the per-query-cluster stabilizer at the end.
BlockErrorTable estimate_errors_streaming(const ClusterModel& q_model, const ClusterModel& k_model,
                                          const Matrix& k, const Matrix& v, const EstimatorOptions& options = {});

/// Closed-form FLOP counts (multiply-add = 2) of the estimators above.
std::uint64_t estimation_flops(EstimatorMode mode, std::size_t q_clusters, std::size_t k_clusters,
                               std::size_t num_keys, std::size_t dim);

struct RankedBlock {
  std::size_t q_cluster;
  std::size_t k_cluster;
  double ratio;
  double error;
  std::int64_t size;
};

/// Blocks by descending error-to-size ratio; ties by larger error, then by
/// (q_cluster, k_cluster) ascending.
std::vector<RankedBlock> rank_blocks(const BlockErrorTable& table);

/// Same ordering restricted to one query-cluster row.
std::vector<RankedBlock> rank_row(const BlockErrorTable& table, std::size_t q_cluster);

}  // namespace ear

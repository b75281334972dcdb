// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

// Brute-force ground truth. Everything here is O(N_q * N_k * d) or worse and
// exists to check the fast paths.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ear/blocks.hpp"
#include "ear/clustering.hpp"
#include "ear/linalg.hpp"

namespace ear {

/// Row-stochastic attention map. prob(i, j) = exp(logit(i, j) - row_max[i]) / normalizers[i].
struct AttentionMap {
  Matrix probs;
  std::vector<double> row_max;
  std::vector<double> normalizers;

  std::size_t rows() const { return probs.rows(); }
  std::size_t cols() const { return probs.cols(); }
};

struct FullAttention {
  AttentionMap map;
  Matrix output;
};

/// Scaled logits Q K^T / sqrt(d).
Matrix attention_logits(const Matrix& q, const Matrix& k);

FullAttention full_attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// Map with exact logits on selected blocks and centroid logits q_i . kbar_j
/// on the rest, normalized per entry over all N_k keys.
AttentionMap sparse_map_direct(const Matrix& q, const Matrix& k, const ClusterModel& q_model,
                               const ClusterModel& k_model, const BlockMask& mask);

/// Map that keeps only the selected blocks (dropped logits at -inf). Rows
/// with no selected block are all zero with normalizer 0.
AttentionMap dropped_map(const Matrix& q, const Matrix& k, const ClusterModel& q_model, const ClusterModel& k_model,
                         const BlockMask& mask);

struct EntryErrors {
  Matrix errors;                    ///< N_q x N_k
  std::vector<double> stabilizers;  ///< per query
};

/// Exact per-entry squared compensation error
/// (exp(q_i kbar_j / sqrt d - c_i) - exp(q_i k_j / sqrt d - c_i))^2.
/// c_i defaults to the row max of the full logits; pass `stabilizers` to
/// override (one per query).
EntryErrors exact_entry_errors(const Matrix& q, const Matrix& k, const ClusterModel& k_model,
                               std::optional<std::span<const double>> stabilizers = std::nullopt);

/// Block sums of an N_q x N_k entry matrix.
Matrix aggregate_blocks(const Matrix& entries, const ClusterModel& q_model, const ClusterModel& k_model);

/// Exact plain-mode error table, stabilized per query with c_i.
BlockErrorTable exact_error_table(const Matrix& q, const Matrix& k, const ClusterModel& q_model,
                                  const ClusterModel& k_model);

struct KnapsackLimits {
  std::size_t max_exhaustive_blocks = 24;
  std::int64_t max_dp_capacity = 1'000'000;
  std::uint64_t max_dp_cells = 1ull << 30;
};

/// Exact 0-1 knapsack over blocks: value = error_sum, weight = block size,
/// capacity = budget entries. Exhaustive enumeration up to
/// limits.max_exhaustive_blocks, dynamic programming over integer weights
/// beyond that. Ties prefer including lower-index blocks.
/// Throws ConfigError for a negative budget and CapabilityError past the limits.
BlockMask knapsack_oracle(const BlockErrorTable& table, std::int64_t budget, const KnapsackLimits& limits = {});

/// Same contract, forced through the DP route (used to cross-check the
/// exhaustive route).
BlockMask knapsack_dp(const BlockErrorTable& table, std::int64_t budget, const KnapsackLimits& limits = {});

/// Sum of error_sum over selected blocks.
double selected_value(const BlockErrorTable& table, const BlockMask& mask);

/// (1 / (rows * cols)) * ||a - b||_F^2.
double map_mse(const AttentionMap& a, const AttentionMap& b);
double matrix_mse(const Matrix& a, const Matrix& b);

}  // namespace ear

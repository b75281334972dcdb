// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ear/blocks.hpp"
#include "ear/clustering.hpp"
#include "ear/linalg.hpp"

namespace ear {

struct FlopCounters {
  std::uint64_t exact_block = 0;
  std::uint64_t compensation = 0;
  std::uint64_t estimation = 0;
  std::uint64_t clustering = 0;

  std::uint64_t total() const { return exact_block + compensation + estimation + clustering; }
  friend bool operator==(const FlopCounters&, const FlopCounters&) = default;
};

/// Normalized output and log-sum-exp over the keys of the selected blocks.
/// Queries with no selected block carry lse = -inf and a zero output row.
struct PartialAttention {
  Matrix output;
  std::vector<double> lse;
  std::uint64_t flops = 0;
};

struct AttentionResult {
  Matrix output;
  std::vector<double> lse;
  FlopCounters flops;
  double density_used = 0.0;
};

/// Key-side data the compensation branch streams: centroids, value
/// centroids and cluster sizes.
struct KeyCompensation {
  Matrix k_centroids;
  Matrix v_centroids;
  std::vector<std::size_t> sizes;

  static KeyCompensation from_model(const ClusterModel& k_model, const Matrix& v);
};

struct ExecutorOptions {
  Precision precision = Precision::kDouble;
};

/// Streaming softmax over the keys of each query's selected blocks.
PartialAttention exact_block_pass(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& q_model,
                                  const ClusterModel& k_model, const BlockMask& mask,
                                  const ExecutorOptions& options = {});

/// Merges one logit q_i kbar_j / sqrt(d) + ln|k_j| with contribution vbar_j
/// per unselected key cluster into the partial state (m = lse, l = 1,
/// acc = output). Queries without exact blocks start from the empty state.
///
/// `order` optionally fixes the key-cluster visiting order (a permutation of
/// 0..C_k-1); the default is ascending.
AttentionResult compensation_pass(const Matrix& q, const ClusterModel& q_model, const KeyCompensation& keys,
                                  const BlockMask& mask, const PartialAttention& partial,
                                  const ExecutorOptions& options = {},
                                  const std::vector<std::size_t>* order = nullptr);

/// exact_block_pass followed by compensation_pass.
AttentionResult sparse_attend(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& q_model,
                              const ClusterModel& k_model, const BlockMask& mask,
                              const ExecutorOptions& options = {});

/// Dense two-pass reference: materializes the compensated map, then applies
/// V on selected entries and the value centroids elsewhere.
Matrix reference_sparse_output(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& q_model,
                               const ClusterModel& k_model, const BlockMask& mask);

/// 4 * d per exactly computed entry (QK and PV multiply-adds).
std::uint64_t exact_block_flops(const BlockMask& mask, std::size_t dim);
/// 4 * d per (query, compensated key cluster) pair.
std::uint64_t compensation_flops(const BlockMask& mask, std::size_t dim);

}  // namespace ear

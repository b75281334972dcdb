// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ear/clustering.hpp"
#include "ear/linalg.hpp"

namespace ear {

/// Query-cluster x key-cluster grid. Block (qc, kc) holds
/// q_sizes[qc] * k_sizes[kc] attention entries.
struct BlockLayout {
  std::vector<std::size_t> q_sizes;
  std::vector<std::size_t> k_sizes;

  static BlockLayout from_models(const ClusterModel& q, const ClusterModel& k) { return {q.sizes, k.sizes}; }

  std::size_t q_clusters() const { return q_sizes.size(); }
  std::size_t k_clusters() const { return k_sizes.size(); }
  std::size_t num_blocks() const { return q_sizes.size() * k_sizes.size(); }
  std::size_t index(std::size_t qc, std::size_t kc) const { return qc * k_sizes.size() + kc; }
  std::int64_t block_size(std::size_t qc, std::size_t kc) const {
    return static_cast<std::int64_t>(q_sizes[qc] * k_sizes[kc]);
  }
  std::int64_t total_entries() const;

  friend bool operator==(const BlockLayout&, const BlockLayout&) = default;
};

/// Block-level routing decision: true = exact attention, false = centroid
/// compensation. Constant over every (query, key) pair inside a block.
class BlockMask {
 public:
  BlockMask() = default;
  /// All blocks unselected.
  explicit BlockMask(BlockLayout layout);
  BlockMask(BlockLayout layout, std::vector<std::uint8_t> selected);

  static BlockMask all(BlockLayout layout, bool value);

  const BlockLayout& layout() const { return layout_; }
  std::size_t q_clusters() const { return layout_.q_clusters(); }
  std::size_t k_clusters() const { return layout_.k_clusters(); }

  bool selected(std::size_t qc, std::size_t kc) const { return selected_[layout_.index(qc, kc)] != 0; }
  void set(std::size_t qc, std::size_t kc, bool value);

  std::int64_t density_entries() const { return density_entries_; }
  double density() const;
  /// Number of unselected key clusters in row qc.
  std::size_t compensated_in_row(std::size_t qc) const;
  const std::vector<std::uint8_t>& bits() const { return selected_; }

  friend bool operator==(const BlockMask&, const BlockMask&) = default;

 private:
  BlockLayout layout_;
  std::vector<std::uint8_t> selected_;
  std::int64_t density_entries_ = 0;
};

enum class EstimatorMode { kPlain, kValueAware };

std::string to_string(EstimatorMode mode);
EstimatorMode estimator_mode_from_string(const std::string& name);

/// Aggregated squared compensation error per block, with the block sizes and
/// the error-to-size ratios the routers rank by.
struct BlockErrorTable {
  BlockLayout layout;
  Matrix error_sum;  ///< C_q x C_k
  Matrix ratios;     ///< error_sum / block size
  /// Per-query-cluster constant subtracted inside every exponential.
  std::vector<double> stabilizers;
  EstimatorMode mode = EstimatorMode::kValueAware;
  std::uint64_t flops = 0;

  std::size_t q_clusters() const { return layout.q_clusters(); }
  std::size_t k_clusters() const { return layout.k_clusters(); }
  double value(std::size_t qc, std::size_t kc) const { return error_sum(qc, kc); }
  double total_error() const;

  /// Table from explicit per-block values. Throws on negative values or
  /// shape mismatch.
  static BlockErrorTable from_values(BlockLayout layout, Matrix error_sum,
                                     EstimatorMode mode = EstimatorMode::kValueAware);
};

}  // namespace ear

// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ear/blocks.hpp"
#include "ear/clustering.hpp"
#include "ear/linalg.hpp"

namespace ear {

enum class BudgetMode { kGlobalDensity, kPerClusterTopP };
enum class Overshoot { kStopAtFirstOverflow, kFillRemainder };

std::string to_string(BudgetMode mode);
BudgetMode budget_mode_from_string(const std::string& name);
std::string to_string(Overshoot policy);
Overshoot overshoot_from_string(const std::string& name);

/// Compute budget for a router. In global mode `rho` is the fraction of the
/// N_q * N_k entries that may be computed exactly; in per-cluster top-p mode
/// each query cluster gets the entry count its top-p key clusters would use.
struct DensityBudget {
  BudgetMode mode = BudgetMode::kGlobalDensity;
  double rho = 1.0;
  double p = 0.85;
  Overshoot overshoot = Overshoot::kFillRemainder;
  /// Compare the greedy selection with the best single fitting block and keep
  /// the better one.
  bool single_item_fallback = true;
  /// Score key clusters by logit + ln|k_c| when deriving top-p budgets.
  bool size_weighted_scores = true;

  static DensityBudget global(double rho) {
    DensityBudget b;
    b.rho = rho;
    return b;
  }
  static DensityBudget per_cluster_top_p(double p) {
    DensityBudget b;
    b.mode = BudgetMode::kPerClusterTopP;
    b.p = p;
    return b;
  }

  /// Throws ConfigError when the active parameter is out of range.
  void validate() const;
  /// Entry capacity of a global budget: floor(rho * total) (with a 1e-9 guard).
  std::int64_t capacity(std::int64_t total_entries) const;
};

/// Centroids and sizes of both clusterings; everything the score-based
/// routers need.
struct ClusterSummary {
  Matrix q_centroids;
  Matrix k_centroids;
  std::vector<std::size_t> q_sizes;
  std::vector<std::size_t> k_sizes;

  static ClusterSummary from_models(const ClusterModel& q, const ClusterModel& k) {
    return {q.centroids, k.centroids, q.sizes, k.sizes};
  }
  BlockLayout layout() const { return {q_sizes, k_sizes}; }
};

/// Softmax over key clusters of qbar_c kbar^T / sqrt(d) (+ ln|k| when size
/// weighted), one row per query cluster.
Matrix centroid_scores(const ClusterSummary& summary, bool size_weighted = true);

/// Per query cluster, the shortest prefix of key clusters by descending score
/// whose cumulative probability reaches p. Ties go to the lower key index.
BlockMask score_top_p(const ClusterSummary& summary, double p, bool size_weighted = true);

/// Entry budget per query cluster: sum of |q_c| * |k| over the key clusters
/// score_top_p selects for that row.
std::vector<std::int64_t> score_top_p_budget(const ClusterSummary& summary, double p, bool size_weighted = true);

/// Largest-density top-p mask whose density does not exceed `target`
/// (bisection on p). Falls back to the smallest reachable density when every
/// p overshoots. Returns the mask and the p used.
struct TopPFit {
  BlockMask mask;
  double p = 1.0;
};
TopPFit fit_top_p_to_density(const ClusterSummary& summary, double target, bool size_weighted = true);

/// Greedy error-to-cost routing. `summary` is required in per-cluster top-p
/// mode and ignored otherwise.
BlockMask route_error_aware(const BlockErrorTable& table, const DensityBudget& budget,
                            const ClusterSummary* summary = nullptr);

/// Greedy routing with explicit per-query-cluster entry budgets.
BlockMask route_error_aware_rows(const BlockErrorTable& table, const std::vector<std::int64_t>& row_budgets,
                                 const DensityBudget& policy = {});

/// Global greedy with an explicit entry capacity.
BlockMask route_error_aware_capacity(const BlockErrorTable& table, std::int64_t capacity,
                                     const DensityBudget& policy = {});

/// Uniformly random block order, same filling rule (no fallback).
BlockMask route_random(const BlockErrorTable& table, const DensityBudget& budget, std::uint64_t seed,
                       const ClusterSummary* summary = nullptr);

/// Sum of error_sum over unselected blocks.
double relaxed_objective(const BlockErrorTable& table, const BlockMask& mask);

}  // namespace ear

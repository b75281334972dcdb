// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ear/error.hpp"
#include "ear/estimator.hpp"

namespace ear {

std::string to_string(BudgetMode mode) {
  return mode == BudgetMode::kGlobalDensity ? "globalDensity" : "perClusterTopP";
}

BudgetMode budget_mode_from_string(const std::string& name) {
  if (name == "globalDensity") return BudgetMode::kGlobalDensity;
  if (name == "perClusterTopP") return BudgetMode::kPerClusterTopP;
  throw ConfigError("unknown budget mode '" + name + "' (expected globalDensity or perClusterTopP)");
}

std::string to_string(Overshoot policy) {
  return policy == Overshoot::kFillRemainder ? "fillRemainder" : "stopAtFirstOverflow";
}

Overshoot overshoot_from_string(const std::string& name) {
  if (name == "fillRemainder") return Overshoot::kFillRemainder;
  if (name == "stopAtFirstOverflow") return Overshoot::kStopAtFirstOverflow;
  throw ConfigError("unknown overshoot policy '" + name + "'");
}

void DensityBudget::validate() const {
  if (mode == BudgetMode::kGlobalDensity && !(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("rho must lie in [0, 1], got " + std::to_string(rho));
  if (mode == BudgetMode::kPerClusterTopP && !(p > 0.0 && p <= 1.0))
    throw ConfigError("p must lie in (0, 1], got " + std::to_string(p));
}

std::int64_t DensityBudget::capacity(std::int64_t total_entries) const {
  const double raw = rho * static_cast<double>(total_entries);
  return std::min(total_entries, static_cast<std::int64_t>(std::floor(raw + 1e-9)));
}

namespace {

void check_summary(const ClusterSummary& s) {
  if (s.q_centroids.cols() != s.k_centroids.cols())
    throw ShapeError("query and key centroids differ in head dimension");
  if (s.q_sizes.size() != s.q_centroids.rows() || s.k_sizes.size() != s.k_centroids.rows())
    throw ShapeError("cluster sizes do not match centroid counts");
}

std::vector<std::size_t> score_order(std::span<const double> probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return order;
}

// Greedy fill of one ranked list into a capacity; returns chosen positions.
std::vector<const RankedBlock*> greedy_fill(const std::vector<RankedBlock>& ranked, std::int64_t capacity,
                                            const DensityBudget& policy, bool allow_fallback) {
  std::vector<const RankedBlock*> chosen;
  std::int64_t used = 0;
  double value = 0.0;
  for (const auto& b : ranked) {
    if (used + b.size <= capacity) {
      chosen.push_back(&b);
      used += b.size;
      value += b.error;
    } else if (policy.overshoot == Overshoot::kStopAtFirstOverflow) {
      break;
    }
  }
  if (allow_fallback && policy.single_item_fallback) {
    const RankedBlock* single = nullptr;
    for (const auto& b : ranked)
      if (b.size <= capacity && (!single || b.error > single->error)) single = &b;
    if (single && single->error > value) chosen = {single};
  }
  return chosen;
}

void select_into(BlockMask& mask, const std::vector<const RankedBlock*>& chosen) {
  for (const auto* b : chosen) mask.set(b->q_cluster, b->k_cluster, true);
}

}  // namespace

Matrix centroid_scores(const ClusterSummary& summary, bool size_weighted) {
  check_summary(summary);
  const double scale = 1.0 / std::sqrt(static_cast<double>(summary.q_centroids.cols()));
  Matrix logits = matmul_transposed(summary.q_centroids, summary.k_centroids);
  for (std::size_t qc = 0; qc < logits.rows(); ++qc) {
    for (std::size_t kc = 0; kc < logits.cols(); ++kc) {
      logits(qc, kc) *= scale;
      if (size_weighted) logits(qc, kc) += std::log(static_cast<double>(summary.k_sizes[kc]));
    }
  }
  return row_softmax(logits);
}

BlockMask score_top_p(const ClusterSummary& summary, double p, bool size_weighted) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("p must lie in (0, 1], got " + std::to_string(p));
  const Matrix probs = centroid_scores(summary, size_weighted);
  BlockMask mask(summary.layout());
  for (std::size_t qc = 0; qc < probs.rows(); ++qc) {
    const auto row = probs.row(qc);
    double cum = 0.0;
    for (std::size_t kc : score_order(row)) {
      mask.set(qc, kc, true);
      cum += row[kc];
      if (p < 1.0 && cum >= p - 1e-12) break;
    }
  }
  return mask;
}

std::vector<std::int64_t> score_top_p_budget(const ClusterSummary& summary, double p, bool size_weighted) {
  const BlockMask mask = score_top_p(summary, p, size_weighted);
  std::vector<std::int64_t> budgets(mask.q_clusters(), 0);
  for (std::size_t qc = 0; qc < mask.q_clusters(); ++qc)
    for (std::size_t kc = 0; kc < mask.k_clusters(); ++kc)
      if (mask.selected(qc, kc)) budgets[qc] += mask.layout().block_size(qc, kc);
  return budgets;
}

TopPFit fit_top_p_to_density(const ClusterSummary& summary, double target, bool size_weighted) {
  TopPFit full{score_top_p(summary, 1.0, size_weighted), 1.0};
  if (full.mask.density() <= target) return full;
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 64; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= 0.0) break;
    if (score_top_p(summary, mid, size_weighted).density() <= target)
      lo = mid;
    else
      hi = mid;
  }
  if (lo > 0.0) return {score_top_p(summary, lo, size_weighted), lo};
  return {score_top_p(summary, hi, size_weighted), hi};
}

BlockMask route_error_aware_capacity(const BlockErrorTable& table, std::int64_t capacity,
                                     const DensityBudget& policy) {
  BlockMask mask(table.layout);
  const auto ranked = rank_blocks(table);
  select_into(mask, greedy_fill(ranked, capacity, policy, true));
  return mask;
}

BlockMask route_error_aware_rows(const BlockErrorTable& table, const std::vector<std::int64_t>& row_budgets,
                                 const DensityBudget& policy) {
  if (row_budgets.size() != table.q_clusters()) throw ShapeError("need one entry budget per query cluster");
  BlockMask mask(table.layout);
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc) {
    const auto ranked = rank_row(table, qc);
    select_into(mask, greedy_fill(ranked, row_budgets[qc], policy, true));
  }
  return mask;
}

BlockMask route_error_aware(const BlockErrorTable& table, const DensityBudget& budget,
                            const ClusterSummary* summary) {
  budget.validate();
  if (budget.mode == BudgetMode::kGlobalDensity)
    return route_error_aware_capacity(table, budget.capacity(table.layout.total_entries()), budget);
  if (!summary) throw ConfigError("per-cluster top-p routing needs the cluster centroids");
  if (summary->layout() != table.layout) throw ShapeError("cluster summary does not match the error table");
  return route_error_aware_rows(table, score_top_p_budget(*summary, budget.p, budget.size_weighted_scores), budget);
}

BlockMask route_random(const BlockErrorTable& table, const DensityBudget& budget, std::uint64_t seed,
                       const ClusterSummary* summary) {
  budget.validate();
  std::mt19937_64 rng(seed);
  BlockMask mask(table.layout);
  auto to_ranked = [&](std::size_t qc, std::size_t kc) {
    return RankedBlock{qc, kc, table.ratios(qc, kc), table.error_sum(qc, kc), table.layout.block_size(qc, kc)};
  };
  if (budget.mode == BudgetMode::kGlobalDensity) {
    std::vector<RankedBlock> order;
    for (std::size_t qc = 0; qc < table.q_clusters(); ++qc)
      for (std::size_t kc = 0; kc < table.k_clusters(); ++kc) order.push_back(to_ranked(qc, kc));
    std::shuffle(order.begin(), order.end(), rng);
    select_into(mask, greedy_fill(order, budget.capacity(table.layout.total_entries()), budget, false));
    return mask;
  }
  if (!summary) throw ConfigError("per-cluster top-p routing needs the cluster centroids");
  const auto budgets = score_top_p_budget(*summary, budget.p, budget.size_weighted_scores);
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc) {
    std::vector<RankedBlock> order;
    for (std::size_t kc = 0; kc < table.k_clusters(); ++kc) order.push_back(to_ranked(qc, kc));
    std::shuffle(order.begin(), order.end(), rng);
    select_into(mask, greedy_fill(order, budgets[qc], budget, false));
  }
  return mask;
}

double relaxed_objective(const BlockErrorTable& table, const BlockMask& mask) {
  if (mask.layout() != table.layout) throw ShapeError("mask does not match the error table");
  double total = 0.0;
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc)
    for (std::size_t kc = 0; kc < table.k_clusters(); ++kc)
      if (!mask.selected(qc, kc)) total += table.error_sum(qc, kc);
  return total;
}

}  // namespace ear

// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

// Experiment logic: synthetic instances, routing-policy sweeps, error-bound
// checks and the clustering-quality study.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ear/blocks.hpp"
#include "ear/clustering.hpp"
#include "ear/estimator.hpp"
#include "ear/oracle.hpp"
#include "ear/router.hpp"
#include "ear/sparse_attention.hpp"

namespace ear {

struct Instance {
  Matrix q;
  Matrix k;
  Matrix v;
};

/// Gaussian blob mixture. Blob centers are N(0, center_scale^2) per
/// coordinate, tokens are center + N(0, sigma^2) noise. Values share the key
/// blob of their key, with independent centers and the same sigma.
struct BlobSpec {
  std::size_t n_q = 256;
  std::size_t n_k = 256;
  std::size_t d = 16;
  std::size_t q_blobs = 2;
  std::size_t k_blobs = 4;
  double sigma = 0.1;
  double center_scale = 1.0;
  std::uint64_t seed = 0;
};

Instance generate_blobs(const BlobSpec& spec);

/// Copies every query cluster's centroid into all of its members so the
/// query clustering error is exactly zero.
Matrix collapse_to_centroids(const Matrix& tokens, const ClusterModel& model);

enum class Policy { kTopPDrop, kTopPCompensated, kErrorAwareCompensated, kRandom, kOracleKnapsack };

std::string to_string(Policy policy);
Policy policy_from_string(const std::string& name);

struct PipelineOptions {
  std::size_t q_clusters = 16;
  std::size_t k_clusters = 32;
  std::size_t kmeans_restarts = 1;
  std::size_t kmeans_iters = 25;
  EstimatorMode estimator = EstimatorMode::kValueAware;
  std::size_t tile_size = 64;
  Precision precision = Precision::kDouble;
  /// Routing budget. In global mode the sweep density overrides rho; in
  /// per-cluster top-p mode the sweep density picks p for the top-p baseline
  /// and the other policies inherit its per-cluster budgets.
  DensityBudget budget = DensityBudget::global(0.25);
  KnapsackLimits knapsack;
};

/// Both clusterings plus the routing error table for one instance.
struct Prepared {
  ClusterModel q_model;
  ClusterModel k_model;
  BlockErrorTable table;
  ClusterSummary summary;
};

Prepared prepare(const Instance& instance, const PipelineOptions& options, std::uint64_t seed);

struct PolicyOutcome {
  BlockMask mask;
  AttentionResult result;
};

/// Builds the mask for `policy` at the given density target and executes it.
/// Dropping policies run only the exact pass.
PolicyOutcome run_policy(const Instance& instance, const Prepared& prepared, Policy policy, double density,
                         const PipelineOptions& options, std::uint64_t seed);

/// Same, but with an explicit budget instead of a density target.
PolicyOutcome run_policy(const Instance& instance, const Prepared& prepared, Policy policy,
                         const DensityBudget& budget, const PipelineOptions& options, std::uint64_t seed);

struct SweepRecord {
  Policy policy = Policy::kErrorAwareCompensated;
  double density = 0.0;
  double relaxed_objective = 0.0;
  double map_mse = 0.0;
  double output_mse = 0.0;
  std::uint64_t flops_total = 0;
  FlopCounters flops;
  std::uint64_t seed = 0;
  std::size_t c_q = 0;
  std::size_t c_k = 0;
};

/// One record per (policy, density, seed), ordered policy-major, then
/// density, then seed. `workers` > 1 evaluates seeds concurrently; the
/// output does not depend on it.
std::vector<SweepRecord> policy_sweep(const Instance& instance, const std::vector<Policy>& policies,
                                      const std::vector<double>& densities, const std::vector<std::uint64_t>& seeds,
                                      const PipelineOptions& options, std::size_t workers = 1);

/// Evaluates a single cell against the full-attention oracle.
SweepRecord evaluate_cell(const Instance& instance, const Prepared& prepared, const FullAttention& full,
                          Policy policy, double density, const PipelineOptions& options, std::uint64_t seed);
SweepRecord evaluate_cell(const Instance& instance, const Prepared& prepared, const FullAttention& full,
                          Policy policy, const DensityBudget& budget, const PipelineOptions& options,
                          std::uint64_t seed);

/// Both sides of the map-MSE bound
///   lhs <= (2 / (N_q N_k)) sum (1 - M) ehat^2 / Z_i^2 + 8 delta_q^2 K_max^2 / (N_k d).
/// The bound assumes routing leaves the softmax normalizers nearly unchanged;
/// `normalizer_perturbation` (max_i |Z'_i / Z_i - 1|) reports how far that
/// assumption held.
struct BoundReport {
  double lhs_mse = 0.0;
  double estimated_term = 0.0;
  double residual_term = 0.0;
  double rhs = 0.0;
  bool holds = false;
  double slack = 0.0;
  double delta_sq = 0.0;
  double k_max = 0.0;
  double normalizer_perturbation = 0.0;
};

BoundReport verify_bound(const Instance& instance, const ClusterModel& q_model, const ClusterModel& k_model,
                         const BlockMask& mask);

struct ClusteringStudyPoint {
  std::size_t c_q = 0;
  double delta_sq = 0.0;
  double map_mse = 0.0;
  double density = 0.0;
};

/// Runs the compensated error-aware pipeline with per-cluster top-p budgets
/// at each query cluster count (best-of-`restarts` k-means), keeping the key
/// clustering fixed.
std::vector<ClusteringStudyPoint> clustering_study(const Instance& instance,
                                                   const std::vector<std::size_t>& q_cluster_counts,
                                                   std::size_t k_clusters, double p, std::uint64_t seed,
                                                   std::size_t restarts = 5);

struct KnapsackCase {
  BlockErrorTable table;
  std::int64_t budget = 0;
};

struct RegretReport {
  std::vector<double> ratios;  ///< greedy value / oracle value (1 when oracle is 0)
  double min_ratio = 1.0;
  double mean_ratio = 1.0;
};

RegretReport greedy_vs_oracle(const std::vector<KnapsackCase>& cases, const DensityBudget& policy = {},
                              const KnapsackLimits& limits = {});

}  // namespace ear

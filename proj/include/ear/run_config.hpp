// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ear/analysis.hpp"
#include "ear/tensor_file.hpp"

namespace ear {

/// Everything the harness needs for one invocation. JSON field names are
/// given next to each member; unknown JSON fields are rejected.
struct RunConfig {
  std::size_t n_q = 256;                            // nQ
  std::size_t n_k = 256;                            // nK
  std::size_t d = 16;                               // d
  std::optional<std::size_t> c_q;                   // cQ, default max(4, nQ / 12)
  std::optional<std::size_t> c_k;                   // cK, default max(8, nK / 3.6)
  BudgetMode budget_mode = BudgetMode::kPerClusterTopP;  // budgetMode
  double rho = 0.25;                                // rho
  double p = 0.85;                                  // p
  EstimatorMode estimator_mode = EstimatorMode::kValueAware;  // estimatorMode
  Policy policy = Policy::kErrorAwareCompensated;   // policy
  std::vector<std::uint64_t> seeds{0};              // seeds
  Precision precision = Precision::kDouble;         // precision
  std::size_t kmeans_restarts = 1;                  // kmeansRestarts

  std::size_t kmeans_iters = 25;                    // kmeansIters
  std::size_t tile_size = 64;                       // tileSize
  std::size_t q_blobs = 16;                         // qBlobs
  std::size_t k_blobs = 4;                          // kBlobs
  double sigma = 0.1;                               // sigma
  double center_scale = 1.0;                        // centerScale
  DType dtype = DType::kFloat64;                    // dtype: "float64" | "float32"
  std::vector<double> density_grid{0.1, 0.25, 0.5, 0.75, 1.0};  // densityGrid
  std::vector<Policy> sweep_policies{Policy::kTopPDrop, Policy::kTopPCompensated,
                                     Policy::kErrorAwareCompensated};  // sweepPolicies
  std::size_t oracle_max_blocks = 24;               // oracleMaxBlocks
  std::int64_t oracle_max_capacity = 1'000'000;     // oracleMaxCapacity
  std::uint64_t oracle_max_entries = 1ull << 24;    // oracleMaxEntries

  /// Overlays the fields present in `json_text`. Throws ConfigError naming
  /// every offending field.
  void merge_json(const std::string& json_text);

  /// Reference configuration: per-cluster top-p 0.85, value-aware
  /// estimates, error-aware routing and size-scaled cluster counts.
  void apply_paper_preset();

  /// Throws ConfigError listing every violated constraint.
  void validate() const;

  std::size_t resolved_c_q() const;
  std::size_t resolved_c_k() const;

  DensityBudget budget() const;
  PipelineOptions pipeline() const;
  BlobSpec blob_spec(std::uint64_t seed) const;

  /// Canonical JSON echo with resolved cluster counts.
  std::string to_json() const;
};

std::size_t default_q_clusters(std::size_t n_q);
std::size_t default_k_clusters(std::size_t n_k);

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

}  // namespace ear

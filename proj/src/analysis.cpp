// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

#include "ear/error.hpp"

namespace ear {
namespace {

Matrix random_centers(std::size_t count, std::size_t d, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> data(count * d);
  for (double& x : data) x = normal(rng);
  return Matrix(count, d, std::move(data));
}

Matrix sample_tokens(const Matrix& centers, std::span<const std::size_t> labels, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t d = centers.cols();
  std::vector<double> data(labels.size() * d);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = centers.row(labels[i]);
    for (std::size_t j = 0; j < d; ++j) data[i * d + j] = c[j] + sigma * noise(rng);
  }
  return Matrix(labels.size(), d, std::move(data));
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t blobs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, blobs - 1);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = pick(rng);
  return labels;
}

// Mixes the run seed into distinct streams for the two clusterings.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

AttentionResult dropped_result(const Instance& in, const Prepared& prep, const BlockMask& mask,
                               const PipelineOptions& options) {
  PartialAttention partial = exact_block_pass(in.q, in.k, in.v, prep.q_model, prep.k_model, mask,
                                              ExecutorOptions{options.precision});
  AttentionResult r;
  r.output = std::move(partial.output);
  r.lse = std::move(partial.lse);
  r.flops.exact_block = partial.flops;
  r.density_used = mask.density();
  return r;
}

BlockMask oracle_mask(const Prepared& prep, const DensityBudget& budget, const PipelineOptions& options) {
  const BlockErrorTable& table = prep.table;
  if (budget.mode == BudgetMode::kGlobalDensity)
    return knapsack_oracle(table, budget.capacity(table.layout.total_entries()), options.knapsack);
  const auto budgets = score_top_p_budget(prep.summary, budget.p, budget.size_weighted_scores);
  BlockMask mask(table.layout);
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc) {
    BlockLayout row_layout{{table.layout.q_sizes[qc]}, table.layout.k_sizes};
    std::vector<double> row(table.error_sum.row(qc).begin(), table.error_sum.row(qc).end());
    const auto row_table =
        BlockErrorTable::from_values(row_layout, Matrix(1, table.k_clusters(), std::move(row)), table.mode);
    const BlockMask row_mask = knapsack_oracle(row_table, budgets[qc], options.knapsack);
    for (std::size_t kc = 0; kc < table.k_clusters(); ++kc)
      if (row_mask.selected(0, kc)) mask.set(qc, kc, true);
  }
  return mask;
}

DensityBudget budget_for_density(const Prepared& prep, double density, const PipelineOptions& options) {
  DensityBudget b = options.budget;
  if (b.mode == BudgetMode::kGlobalDensity) {
    b.rho = density;
  } else {
    b.p = fit_top_p_to_density(prep.summary, density, b.size_weighted_scores).p;
  }
  return b;
}

PolicyOutcome run_with_budget(const Instance& in, const Prepared& prep, Policy policy, const DensityBudget& budget,
                              const PipelineOptions& options, std::uint64_t seed) {
  budget.validate();
  const std::size_t d = in.q.cols();
  const std::uint64_t scoring_flops = 2ull * prep.q_model.num_clusters * prep.k_model.num_clusters * d;
  const ExecutorOptions exec{options.precision};

  BlockMask mask;
  std::uint64_t estimation = 0;
  switch (policy) {
    case Policy::kTopPDrop:
    case Policy::kTopPCompensated:
      mask = budget.mode == BudgetMode::kGlobalDensity
                 ? fit_top_p_to_density(prep.summary, budget.rho, budget.size_weighted_scores).mask
                 : score_top_p(prep.summary, budget.p, budget.size_weighted_scores);
      estimation = scoring_flops;
      break;
    case Policy::kErrorAwareCompensated:
      mask = route_error_aware(prep.table, budget, &prep.summary);
      estimation = prep.table.flops + (budget.mode == BudgetMode::kPerClusterTopP ? scoring_flops : 0);
      break;
    case Policy::kRandom:
      mask = route_random(prep.table, budget, seed, &prep.summary);
      break;
    case Policy::kOracleKnapsack:
      mask = oracle_mask(prep, budget, options);
      estimation = prep.table.flops;
      break;
  }

  AttentionResult result = policy == Policy::kTopPDrop
                               ? dropped_result(in, prep, mask, options)
                               : sparse_attend(in.q, in.k, in.v, prep.q_model, prep.k_model, mask, exec);
  result.flops.estimation = estimation;
  result.flops.clustering = prep.q_model.flops + prep.k_model.flops;
  return {std::move(mask), std::move(result)};
}

}  // namespace

Instance generate_blobs(const BlobSpec& spec) {
  if (spec.n_q == 0 || spec.n_k == 0 || spec.d == 0 || spec.q_blobs == 0 || spec.k_blobs == 0)
    throw ConfigError("blob spec counts must be at least 1");
  if (!(spec.sigma >= 0.0) || !(spec.center_scale >= 0.0)) throw ConfigError("blob spec scales must be >= 0");
  std::mt19937_64 rng(spec.seed);
  const Matrix q_centers = random_centers(spec.q_blobs, spec.d, spec.center_scale, rng);
  const Matrix k_centers = random_centers(spec.k_blobs, spec.d, spec.center_scale, rng);
  const Matrix v_centers = random_centers(spec.k_blobs, spec.d, spec.center_scale, rng);
  const auto q_labels = random_labels(spec.n_q, spec.q_blobs, rng);
  const auto k_labels = random_labels(spec.n_k, spec.k_blobs, rng);
  Instance out;
  out.q = sample_tokens(q_centers, q_labels, spec.sigma, rng);
  out.k = sample_tokens(k_centers, k_labels, spec.sigma, rng);
  out.v = sample_tokens(v_centers, k_labels, spec.sigma, rng);
  return out;
}

Matrix collapse_to_centroids(const Matrix& tokens, const ClusterModel& model) {
  return expand_centroids(model, tokens);
}

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::kTopPDrop: return "topPDrop";
    case Policy::kTopPCompensated: return "topPCompensated";
    case Policy::kErrorAwareCompensated: return "errorAwareCompensated";
    case Policy::kRandom: return "random";
    case Policy::kOracleKnapsack: return "oracleKnapsack";
  }
  return "unknown";
}

Policy policy_from_string(const std::string& name) {
  for (Policy p : {Policy::kTopPDrop, Policy::kTopPCompensated, Policy::kErrorAwareCompensated, Policy::kRandom,
                   Policy::kOracleKnapsack})
    if (to_string(p) == name) return p;
  throw ConfigError("unknown policy '" + name + "'");
}

Prepared prepare(const Instance& in, const PipelineOptions& options, std::uint64_t seed) {
  Prepared prep;
  prep.q_model = kmeans_best_of(in.q, options.q_clusters, options.kmeans_restarts,
                                KMeansOptions{options.kmeans_iters, stream_seed(seed, 0)});
  prep.k_model = kmeans_best_of(in.k, options.k_clusters, options.kmeans_restarts,
                                KMeansOptions{options.kmeans_iters, stream_seed(seed, 1)});
  EstimatorOptions est;
  est.tile_size = options.tile_size;
  est.precision = options.precision;
  prep.table = options.estimator == EstimatorMode::kPlain
                   ? estimate_errors(prep.q_model, prep.k_model, in.k, est)
                   : estimate_errors_streaming(prep.q_model, prep.k_model, in.k, in.v, est);
  prep.summary = ClusterSummary::from_models(prep.q_model, prep.k_model);
  return prep;
}

PolicyOutcome run_policy(const Instance& in, const Prepared& prep, Policy policy, double density,
                         const PipelineOptions& options, std::uint64_t seed) {
  return run_with_budget(in, prep, policy, budget_for_density(prep, density, options), options, seed);
}

PolicyOutcome run_policy(const Instance& in, const Prepared& prep, Policy policy, const DensityBudget& budget,
                         const PipelineOptions& options, std::uint64_t seed) {
  return run_with_budget(in, prep, policy, budget, options, seed);
}

SweepRecord evaluate_cell(const Instance& in, const Prepared& prep, const FullAttention& full, Policy policy,
                          double density, const PipelineOptions& options, std::uint64_t seed) {
  return evaluate_cell(in, prep, full, policy, budget_for_density(prep, density, options), options, seed);
}

SweepRecord evaluate_cell(const Instance& in, const Prepared& prep, const FullAttention& full, Policy policy,
                          const DensityBudget& budget, const PipelineOptions& options, std::uint64_t seed) {
  const PolicyOutcome out = run_with_budget(in, prep, policy, budget, options, seed);
  const AttentionMap map = policy == Policy::kTopPDrop
                               ? dropped_map(in.q, in.k, prep.q_model, prep.k_model, out.mask)
                               : sparse_map_direct(in.q, in.k, prep.q_model, prep.k_model, out.mask);
  SweepRecord r;
  r.policy = policy;
  r.density = out.mask.density();
  r.relaxed_objective = relaxed_objective(prep.table, out.mask);
  r.map_mse = map_mse(map, full.map);
  r.output_mse = matrix_mse(out.result.output, full.output);
  r.flops_total = out.result.flops.total();
  r.flops = out.result.flops;
  r.seed = seed;
  r.c_q = prep.q_model.num_clusters;
  r.c_k = prep.k_model.num_clusters;
  return r;
}

std::vector<SweepRecord> policy_sweep(const Instance& in, const std::vector<Policy>& policies,
                                      const std::vector<double>& densities, const std::vector<std::uint64_t>& seeds,
                                      const PipelineOptions& options, std::size_t workers) {
  if (densities.empty()) throw ConfigError("density grid is empty");
  for (double rho : densities)
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("density grid values must lie in [0, 1]");
  const FullAttention full = full_attention(in.q, in.k, in.v);
  const std::size_t np = policies.size();
  const std::size_t nd = densities.size();
  const std::size_t ns = seeds.size();
  std::vector<SweepRecord> records(np * nd * ns);

  auto run_seed = [&](std::size_t s) {
    const Prepared prep = prepare(in, options, seeds[s]);
    for (std::size_t p = 0; p < np; ++p)
      for (std::size_t di = 0; di < nd; ++di)
        records[(p * nd + di) * ns + s] = evaluate_cell(in, prep, full, policies[p], densities[di], options, seeds[s]);
  };

  workers = std::max<std::size_t>(1, std::min(workers, ns));
  if (workers == 1) {
    for (std::size_t s = 0; s < ns; ++s) run_seed(s);
    return records;
  }
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t s = w; s < ns; s += workers) {
        try {
          run_seed(s);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return records;
}

BoundReport verify_bound(const Instance& in, const ClusterModel& qm, const ClusterModel& km, const BlockMask& mask) {
  const std::size_t nq = in.q.rows();
  const std::size_t nk = in.k.rows();
  const std::size_t d = in.q.cols();
  const FullAttention full = full_attention(in.q, in.k, in.v);
  const AttentionMap sparse = sparse_map_direct(in.q, in.k, qm, km, mask);
  const BlockErrorTable table = estimate_errors(qm, km, in.k);

  BoundReport r;
  r.lhs_mse = map_mse(sparse, full.map);

  double sum = 0.0;
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t qc = qm.assignments[i];
    const double inv_size = 1.0 / static_cast<double>(qm.sizes[qc]);
    const double rescale = std::exp(2.0 * (table.stabilizers[qc] - full.map.row_max[i]));
    const double z = full.map.normalizers[i];
    double row = 0.0;
    for (std::size_t kc = 0; kc < km.num_clusters; ++kc)
      if (!mask.selected(qc, kc)) row += table.error_sum(qc, kc) * inv_size;
    sum += row * rescale / (z * z);

    const double ratio = sparse.normalizers[i] / z * std::exp(sparse.row_max[i] - full.map.row_max[i]);
    r.normalizer_perturbation = std::max(r.normalizer_perturbation, std::abs(ratio - 1.0));
  }
  r.estimated_term = 2.0 * sum / (static_cast<double>(nq) * static_cast<double>(nk));

  r.delta_sq = quality(qm, in.q).delta_sq;
  r.k_max = quality(km, in.k).k_max;
  r.residual_term = 8.0 * r.delta_sq * r.k_max * r.k_max / (static_cast<double>(nk) * static_cast<double>(d));
  r.rhs = r.estimated_term + r.residual_term;
  r.holds = r.lhs_mse <= r.rhs;
  r.slack = r.rhs - r.lhs_mse;
  return r;
}

std::vector<ClusteringStudyPoint> clustering_study(const Instance& in, const std::vector<std::size_t>& counts,
                                                   std::size_t k_clusters, double p, std::uint64_t seed,
                                                   std::size_t restarts) {
  const FullAttention full = full_attention(in.q, in.k, in.v);
  const ClusterModel km = kmeans_best_of(in.k, k_clusters, restarts, KMeansOptions{25, stream_seed(seed, 1)});
  std::vector<ClusteringStudyPoint> points;
  for (std::size_t cq : counts) {
    const ClusterModel qm = kmeans_best_of(in.q, cq, restarts, KMeansOptions{25, stream_seed(seed, 0)});
    const BlockErrorTable table = estimate_errors_streaming(qm, km, in.k, in.v);
    const ClusterSummary summary = ClusterSummary::from_models(qm, km);
    const BlockMask mask = route_error_aware(table, DensityBudget::per_cluster_top_p(p), &summary);
    ClusteringStudyPoint pt;
    pt.c_q = cq;
    pt.delta_sq = quality(qm, in.q).delta_sq;
    pt.map_mse = map_mse(sparse_map_direct(in.q, in.k, qm, km, mask), full.map);
    pt.density = mask.density();
    points.push_back(pt);
  }
  return points;
}

RegretReport greedy_vs_oracle(const std::vector<KnapsackCase>& cases, const DensityBudget& policy,
                              const KnapsackLimits& limits) {
  RegretReport report;
  double total = 0.0;
  for (const auto& c : cases) {
    const double greedy = selected_value(c.table, route_error_aware_capacity(c.table, c.budget, policy));
    const double best = selected_value(c.table, knapsack_oracle(c.table, c.budget, limits));
    const double ratio = best > 0.0 ? greedy / best : 1.0;
    report.ratios.push_back(ratio);
    total += ratio;
    report.min_ratio = std::min(report.min_ratio, ratio);
  }
  report.mean_ratio = cases.empty() ? 1.0 : total / static_cast<double>(cases.size());
  return report;
}

}  // namespace ear

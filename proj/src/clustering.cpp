// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/clustering.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "ear/error.hpp"

namespace ear {
namespace {

// Means are accumulated as offsets from each cluster's first member so a
// cluster of identical rows reproduces that row exactly.
Matrix means_of(const Matrix& tokens, std::span<const std::size_t> labels, std::size_t k,
                std::vector<std::size_t>* sizes_out = nullptr) {
  const std::size_t d = tokens.cols();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> anchor(k, kUnset);
  std::vector<double> sums(k * d, 0.0);
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    if (anchor[c] == kUnset) anchor[c] = i;
    const auto row = tokens.row(i);
    const auto base = tokens.row(anchor[c]);
    double* dst = sums.data() + c * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += row[j] - base[j];
    ++sizes[c];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(sizes[c]);
    const auto base = tokens.row(anchor[c]);
    for (std::size_t j = 0; j < d; ++j) sums[c * d + j] = base[j] + sums[c * d + j] * inv;
  }
  if (sizes_out) *sizes_out = std::move(sizes);
  return Matrix(k, d, std::move(sums));
}

double inertia_of(const Matrix& tokens, std::span<const std::size_t> labels, const Matrix& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total += squared_distance(tokens.row(i), centroids.row(labels[i]));
  return total;
}

Matrix seed_plus_plus(const Matrix& tokens, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = tokens.rows();
  const std::size_t d = tokens.cols();
  std::vector<double> centers(k * d);
  std::vector<double> best(n);

  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  auto copy_center = [&](std::size_t c, std::size_t token) {
    const auto src = tokens.row(token);
    std::copy(src.begin(), src.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * d));
  };

  copy_center(0, pick(rng));
  for (std::size_t i = 0; i < n; ++i)
    best[i] = squared_distance(tokens.row(i), {centers.data(), d});

  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(best.begin(), best.end(), 0.0);
    std::size_t next = 0;
    if (total <= 0.0) {
      next = pick(rng);
    } else {
      std::uniform_real_distribution<double> unif(0.0, total);
      const double r = unif(rng);
      double cum = 0.0;
      next = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cum += best[i];
        if (r < cum && best[i] > 0.0) {
          next = i;
          break;
        }
      }
    }
    copy_center(c, next);
    const std::span<const double> center{centers.data() + c * d, d};
    for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], squared_distance(tokens.row(i), center));
  }
  return Matrix(k, d, std::move(centers));
}

// Batched assignment: |x|^2 - 2 x.c + |c|^2 from one token x centroid product.
std::vector<std::size_t> assign(const Matrix& tokens, const Matrix& centroids, std::uint64_t& flops) {
  const Matrix cross = matmul_transposed(tokens, centroids);
  flops += 2ull * tokens.rows() * centroids.rows() * tokens.cols();
  std::vector<double> cnorm(centroids.rows());
  for (std::size_t c = 0; c < centroids.rows(); ++c) cnorm[c] = squared_norm(centroids.row(c));

  std::vector<std::size_t> labels(tokens.rows(), 0);
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    const double tn = squared_norm(tokens.row(i));
    double best = tn - 2.0 * cross(i, 0) + cnorm[0];
    for (std::size_t c = 1; c < centroids.rows(); ++c) {
      const double dist = tn - 2.0 * cross(i, c) + cnorm[c];
      if (dist < best) {
        best = dist;
        labels[i] = c;
      }
    }
  }
  return labels;
}

// Moves the farthest-from-centroid token of a splittable cluster into each
// empty cluster; the moved token becomes that cluster's centroid.
void repair_empty(const Matrix& tokens, std::vector<std::size_t>& labels, Matrix& centroids) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t l : labels) ++sizes[l];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t victim = labels.size();
    double far = -1.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (sizes[labels[i]] < 2) continue;
      const double dist = squared_distance(tokens.row(i), centroids.row(labels[i]));
      if (dist > far) {
        far = dist;
        victim = i;
      }
    }
    // k <= n guarantees some cluster holds at least two tokens.
    --sizes[labels[victim]];
    labels[victim] = c;
    sizes[c] = 1;
    const auto src = tokens.row(victim);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
  }
}

void build_layout(ClusterModel& model) {
  const std::size_t k = model.num_clusters;
  model.sizes.assign(k, 0);
  for (std::size_t l : model.assignments) ++model.sizes[l];
  model.offsets.assign(k, 0);
  for (std::size_t c = 1; c < k; ++c) model.offsets[c] = model.offsets[c - 1] + model.sizes[c - 1];
  model.permutation.assign(model.assignments.size(), 0);
  std::vector<std::size_t> cursor = model.offsets;
  for (std::size_t i = 0; i < model.assignments.size(); ++i)
    model.permutation[cursor[model.assignments[i]]++] = i;
}

}  // namespace

ClusterModel ClusterModel::from_assignments(const Matrix& tokens, std::vector<std::size_t> assignments,
                                            std::size_t num_clusters) {
  if (assignments.size() != tokens.rows())
    throw ShapeError("cluster assignments cover " + std::to_string(assignments.size()) + " tokens, matrix has " +
                     std::to_string(tokens.rows()));
  std::vector<std::size_t> sizes(num_clusters, 0);
  for (std::size_t l : assignments) {
    if (l >= num_clusters) throw ConfigError("cluster index " + std::to_string(l) + " out of range");
    ++sizes[l];
  }
  for (std::size_t c = 0; c < num_clusters; ++c)
    if (sizes[c] == 0) throw ConfigError("cluster " + std::to_string(c) + " is empty");

  ClusterModel model;
  model.num_clusters = num_clusters;
  model.assignments = std::move(assignments);
  model.centroids = means_of(tokens, model.assignments, num_clusters);
  build_layout(model);
  model.inertia_history.push_back(inertia_of(tokens, model.assignments, model.centroids));
  return model;
}

ClusterModel kmeans(const Matrix& tokens, std::size_t num_clusters, const KMeansOptions& options) {
  const std::size_t n = tokens.rows();
  if (num_clusters == 0) throw ConfigError("kmeans: number of clusters must be at least 1");
  if (num_clusters > n)
    throw ConfigError("kmeans: " + std::to_string(num_clusters) + " clusters requested for " + std::to_string(n) +
                      " tokens");
  if (options.max_iters == 0) throw ConfigError("kmeans: max_iters must be at least 1");

  std::mt19937_64 rng(options.seed);
  ClusterModel model;
  model.num_clusters = num_clusters;

  Matrix centroids = seed_plus_plus(tokens, num_clusters, rng);
  std::vector<std::size_t> labels = assign(tokens, centroids, model.flops);
  repair_empty(tokens, labels, centroids);
  centroids = means_of(tokens, labels, num_clusters);
  model.inertia_history.push_back(inertia_of(tokens, labels, centroids));

  for (std::size_t it = 0; it < options.max_iters; ++it) {
    std::vector<std::size_t> next = assign(tokens, centroids, model.flops);
    repair_empty(tokens, next, centroids);
    ++model.iterations;
    if (next == labels) break;
    labels = std::move(next);
    centroids = means_of(tokens, labels, num_clusters);
    model.inertia_history.push_back(inertia_of(tokens, labels, centroids));
  }

  model.assignments = std::move(labels);
  model.centroids = std::move(centroids);
  build_layout(model);
  return model;
}

ClusterModel kmeans_best_of(const Matrix& tokens, std::size_t num_clusters, std::size_t restarts,
                            const KMeansOptions& options) {
  if (restarts == 0) throw ConfigError("kmeans_best_of: restarts must be at least 1");
  ClusterModel best;
  std::uint64_t spent = 0;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansOptions opt = options;
    opt.seed = options.seed + r;
    ClusterModel candidate = kmeans(tokens, num_clusters, opt);
    spent += candidate.flops;
    if (r == 0 || candidate.inertia_history.back() < best.inertia_history.back()) best = std::move(candidate);
  }
  best.flops = spent;
  return best;
}

Matrix expand_centroids(const ClusterModel& model, const Matrix& tokens) {
  if (tokens.rows() != model.num_tokens() || tokens.cols() != model.dim())
    throw ShapeError("expand_centroids: tokens " + tokens.shape_string() + " do not match model of " +
                     std::to_string(model.num_tokens()) + " tokens, centroids " + model.centroids.shape_string());
  Matrix out(tokens.rows(), tokens.cols());
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    const auto src = model.centroids.row(model.assignments[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix cluster_means(const ClusterModel& model, const Matrix& values) {
  if (values.rows() != model.num_tokens())
    throw ShapeError("cluster_means: values " + values.shape_string() + " do not match model of " +
                     std::to_string(model.num_tokens()) + " tokens");
  return means_of(values, model.assignments, model.num_clusters);
}

ClusteringQuality quality(const ClusterModel& model, const Matrix& tokens) {
  if (tokens.rows() != model.num_tokens())
    throw ShapeError("quality: tokens " + tokens.shape_string() + " do not match model");
  ClusteringQuality q;
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    q.inertia += squared_distance(tokens.row(i), model.centroids.row(model.assignments[i]));
    q.k_max = std::max(q.k_max, std::sqrt(squared_norm(tokens.row(i))));
  }
  q.delta_sq = tokens.rows() ? q.inertia / static_cast<double>(tokens.rows()) : 0.0;
  return q;
}

Matrix permute_rows(const Matrix& tokens, const ClusterModel& model) {
  if (tokens.rows() != model.permutation.size())
    throw ShapeError("permute_rows: " + std::to_string(tokens.rows()) + " rows vs permutation of length " +
                     std::to_string(model.permutation.size()));
  Matrix out(tokens.rows(), tokens.cols());
  for (std::size_t p = 0; p < model.permutation.size(); ++p) {
    const auto src = tokens.row(model.permutation[p]);
    std::copy(src.begin(), src.end(), out.row(p).begin());
  }
  return out;
}

Matrix inverse_permute_rows(const Matrix& permuted, const ClusterModel& model) {
  if (permuted.rows() != model.permutation.size())
    throw ShapeError("inverse_permute_rows: " + std::to_string(permuted.rows()) + " rows vs permutation of length " +
                     std::to_string(model.permutation.size()));
  Matrix out(permuted.rows(), permuted.cols());
  for (std::size_t p = 0; p < model.permutation.size(); ++p) {
    const auto src = permuted.row(p);
    std::copy(src.begin(), src.end(), out.row(model.permutation[p]).begin());
  }
  return out;
}

}  // namespace ear

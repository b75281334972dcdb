// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "ear/error.hpp"

namespace ear {
namespace {

void check_qkv(const Matrix& q, const Matrix& k, const Matrix* v) {
  if (q.cols() != k.cols())
    throw ShapeError("query/key head dimensions differ: q=" + q.shape_string() + " k=" + k.shape_string());
  if (v && v->rows() != k.rows())
    throw ShapeError("values " + v->shape_string() + " do not match keys " + k.shape_string());
}

void check_models(const Matrix& q, const Matrix& k, const ClusterModel& qm, const ClusterModel& km,
                  const BlockMask* mask) {
  if (qm.num_tokens() != q.rows() || km.num_tokens() != k.rows())
    throw ShapeError("cluster models do not cover the token matrices");
  if (mask && (mask->q_clusters() != qm.num_clusters || mask->k_clusters() != km.num_clusters))
    throw ShapeError("mask is " + std::to_string(mask->q_clusters()) + "x" + std::to_string(mask->k_clusters()) +
                     " but clusterings are " + std::to_string(qm.num_clusters) + "x" +
                     std::to_string(km.num_clusters));
}

AttentionMap normalize_rows(std::vector<double> logits, std::size_t rows, std::size_t cols) {
  AttentionMap map;
  map.row_max.assign(rows, -std::numeric_limits<double>::infinity());
  map.normalizers.assign(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = logits.data() + i * cols;
    const double m = *std::max_element(row, row + cols);
    map.row_max[i] = m;
    if (m == -std::numeric_limits<double>::infinity()) {
      std::fill(row, row + cols, 0.0);
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= z;
    map.normalizers[i] = z;
  }
  map.probs = Matrix(rows, cols, std::move(logits));
  return map;
}

}  // namespace

Matrix attention_logits(const Matrix& q, const Matrix& k) {
  check_qkv(q, k, nullptr);
  Matrix s = matmul_transposed(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (double& x : s.row(i)) x *= scale;
  return s;
}

FullAttention full_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  check_qkv(q, k, &v);
  const Matrix logits = attention_logits(q, k);
  FullAttention out{normalize_rows(logits.data(), logits.rows(), logits.cols()), Matrix(q.rows(), v.cols())};
  for (std::size_t i = 0; i < q.rows(); ++i) {
    auto dst = out.output.row(i);
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const double p = out.map.probs(i, j);
      const auto vj = v.row(j);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += p * vj[c];
    }
  }
  return out;
}

AttentionMap sparse_map_direct(const Matrix& q, const Matrix& k, const ClusterModel& qm, const ClusterModel& km,
                               const BlockMask& mask) {
  check_qkv(q, k, nullptr);
  check_models(q, k, qm, km, &mask);
  const Matrix exact = attention_logits(q, k);
  const Matrix approx = attention_logits(q, km.centroids);
  std::vector<double> logits(q.rows() * k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t qc = qm.assignments[i];
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const std::size_t kc = km.assignments[j];
      logits[i * k.rows() + j] = mask.selected(qc, kc) ? exact(i, j) : approx(i, kc);
    }
  }
  return normalize_rows(std::move(logits), q.rows(), k.rows());
}

AttentionMap dropped_map(const Matrix& q, const Matrix& k, const ClusterModel& qm, const ClusterModel& km,
                         const BlockMask& mask) {
  check_qkv(q, k, nullptr);
  check_models(q, k, qm, km, &mask);
  const Matrix exact = attention_logits(q, k);
  std::vector<double> logits(q.rows() * k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t qc = qm.assignments[i];
    for (std::size_t j = 0; j < k.rows(); ++j)
      logits[i * k.rows() + j] =
          mask.selected(qc, km.assignments[j]) ? exact(i, j) : -std::numeric_limits<double>::infinity();
  }
  return normalize_rows(std::move(logits), q.rows(), k.rows());
}

EntryErrors exact_entry_errors(const Matrix& q, const Matrix& k, const ClusterModel& km,
                               std::optional<std::span<const double>> stabilizers) {
  check_qkv(q, k, nullptr);
  if (km.num_tokens() != k.rows()) throw ShapeError("key clustering does not cover the key matrix");
  if (stabilizers && stabilizers->size() != q.rows())
    throw ShapeError("exact_entry_errors: need one stabilizer per query");
  const Matrix exact = attention_logits(q, k);
  const Matrix approx = attention_logits(q, km.centroids);

  EntryErrors out;
  out.stabilizers.resize(q.rows());
  std::vector<double> errors(q.rows() * k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto row = exact.row(i);
    const double c = stabilizers ? (*stabilizers)[i] : *std::max_element(row.begin(), row.end());
    out.stabilizers[i] = c;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const double diff = std::exp(approx(i, km.assignments[j]) - c) - std::exp(row[j] - c);
      errors[i * k.rows() + j] = diff * diff;
    }
  }
  out.errors = Matrix(q.rows(), k.rows(), std::move(errors));
  return out;
}

Matrix aggregate_blocks(const Matrix& entries, const ClusterModel& qm, const ClusterModel& km) {
  if (entries.rows() != qm.num_tokens() || entries.cols() != km.num_tokens())
    throw ShapeError("aggregate_blocks: entry matrix " + entries.shape_string() + " does not match clusterings");
  Matrix out(qm.num_clusters, km.num_clusters);
  for (std::size_t i = 0; i < entries.rows(); ++i)
    for (std::size_t j = 0; j < entries.cols(); ++j) out(qm.assignments[i], km.assignments[j]) += entries(i, j);
  return out;
}

BlockErrorTable exact_error_table(const Matrix& q, const Matrix& k, const ClusterModel& qm,
                                  const ClusterModel& km) {
  check_models(q, k, qm, km, nullptr);
  const EntryErrors e = exact_entry_errors(q, k, km);
  return BlockErrorTable::from_values(BlockLayout::from_models(qm, km), aggregate_blocks(e.errors, qm, km),
                                      EstimatorMode::kPlain);
}

double selected_value(const BlockErrorTable& table, const BlockMask& mask) {
  double total = 0.0;
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc)
    for (std::size_t kc = 0; kc < table.k_clusters(); ++kc)
      if (mask.selected(qc, kc)) total += table.error_sum(qc, kc);
  return total;
}

namespace {

struct Item {
  double value;
  std::int64_t weight;
};

std::vector<Item> items_of(const BlockErrorTable& table) {
  std::vector<Item> items;
  items.reserve(table.layout.num_blocks());
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc)
    for (std::size_t kc = 0; kc < table.k_clusters(); ++kc)
      items.push_back({table.error_sum(qc, kc), table.layout.block_size(qc, kc)});
  return items;
}

BlockMask mask_from_bits(const BlockErrorTable& table, const std::vector<std::uint8_t>& bits) {
  return BlockMask(table.layout, bits);
}

BlockMask exhaustive(const BlockErrorTable& table, std::int64_t budget) {
  const auto items = items_of(table);
  const std::size_t n = items.size();
  std::uint64_t best_set = 0;
  double best_value = -1.0;
  for (std::uint64_t set = 0; set < (1ull << n); ++set) {
    std::int64_t weight = 0;
    double value = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (!(set >> b & 1u)) continue;
      weight += items[b].weight;
      value += items[b].value;
    }
    if (weight > budget) continue;
    bool take = value > best_value;
    if (!take && value == best_value) {
      const std::uint64_t diff = set ^ best_set;
      take = diff != 0 && (set >> std::countr_zero(diff) & 1u);
    }
    if (take) {
      best_value = value;
      best_set = set;
    }
  }
  std::vector<std::uint8_t> bits(n);
  for (std::size_t b = 0; b < n; ++b) bits[b] = best_set >> b & 1u;
  return mask_from_bits(table, bits);
}

}  // namespace

BlockMask knapsack_dp(const BlockErrorTable& table, std::int64_t budget, const KnapsackLimits& limits) {
  if (budget < 0) throw ConfigError("knapsack budget must be non-negative");
  const auto items = items_of(table);
  const std::size_t n = items.size();
  std::int64_t total = 0;
  for (const auto& it : items) total += it.weight;
  if (budget >= total) return BlockMask::all(table.layout, true);

  const auto cap = static_cast<std::size_t>(budget);
  if (budget > limits.max_dp_capacity || static_cast<std::uint64_t>(n) * (cap + 1) > limits.max_dp_cells)
    throw CapabilityError("knapsack oracle: capacity " + std::to_string(budget) + " over " + std::to_string(n) +
                          " blocks exceeds the DP limit; use the greedy router");

  // best[w] = optimal value of items i..n-1 within capacity w; take[i][w]
  // records whether item i is part of that optimum (ties include it).
  std::vector<double> best(cap + 1, 0.0);
  std::vector<std::uint8_t> take(n * (cap + 1), 0);
  for (std::size_t ii = n; ii-- > 0;) {
    const auto w_i = static_cast<std::size_t>(items[ii].weight);
    for (std::size_t w = cap + 1; w-- > 0;) {
      if (w < w_i) continue;
      const double with = best[w - w_i] + items[ii].value;
      if (with >= best[w]) {
        best[w] = with;
        take[ii * (cap + 1) + w] = 1;
      }
    }
  }
  std::vector<std::uint8_t> bits(n, 0);
  std::size_t w = cap;
  for (std::size_t i = 0; i < n; ++i) {
    if (take[i * (cap + 1) + w]) {
      bits[i] = 1;
      w -= static_cast<std::size_t>(items[i].weight);
    }
  }
  return mask_from_bits(table, bits);
}

BlockMask knapsack_oracle(const BlockErrorTable& table, std::int64_t budget, const KnapsackLimits& limits) {
  if (budget < 0) throw ConfigError("knapsack budget must be non-negative");
  const std::size_t n = table.layout.num_blocks();
  if (n <= limits.max_exhaustive_blocks && n < 63) return exhaustive(table, budget);
  return knapsack_dp(table, budget, limits);
}

double matrix_mse(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mse: shapes differ, " + a.shape_string() + " vs " + b.shape_string());
  if (a.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double diff = a.data()[i] - b.data()[i];
    total += diff * diff;
  }
  return total / static_cast<double>(a.data().size());
}

double map_mse(const AttentionMap& a, const AttentionMap& b) { return matrix_mse(a.probs, b.probs); }

}  // namespace ear

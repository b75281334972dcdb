// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ear/error.hpp"

namespace ear {
namespace {

void check_inputs(const ClusterModel& qm, const ClusterModel& km, const Matrix& k, const Matrix* v,
                  const EstimatorOptions& options) {
  if (km.num_tokens() != k.rows()) throw ShapeError("key clustering does not cover " + k.shape_string());
  if (qm.dim() != k.cols())
    throw ShapeError("query centroids " + qm.centroids.shape_string() + " and keys " + k.shape_string() +
                     " differ in head dimension");
  if (v && (v->rows() != k.rows() || v->cols() != k.cols()))
    throw ShapeError("values " + v->shape_string() + " do not match keys " + k.shape_string());
  if (options.stabilizers && options.stabilizers->size() != qm.num_clusters)
    throw ShapeError("estimator: need one stabilizer per query cluster");
  if (options.tile_size == 0) throw ConfigError("estimator: tile size must be at least 1");
}

// Centroid logits of one query-cluster centroid against every key centroid,
// plus the stabilizer for that row.
template <typename T>
T centroid_logits(std::span<const T> qbar, std::span<const T> kbar, std::size_t kc_count, std::size_t d, T scale,
                  std::vector<T>& out) {
  out.resize(kc_count);
  T m = -std::numeric_limits<T>::infinity();
  for (std::size_t kc = 0; kc < kc_count; ++kc) {
    out[kc] = dot(qbar, kbar.subspan(kc * d, d)) * scale;
    m = std::max(m, out[kc]);
  }
  return m;
}

BlockErrorTable finish(const ClusterModel& qm, const ClusterModel& km, std::vector<double> per_query_sums,
                       std::vector<double> stabilizers, EstimatorMode mode, std::size_t num_keys, std::size_t d) {
  for (std::size_t qc = 0; qc < qm.num_clusters; ++qc)
    for (std::size_t kc = 0; kc < km.num_clusters; ++kc)
      per_query_sums[qc * km.num_clusters + kc] *= static_cast<double>(qm.sizes[qc]);
  BlockErrorTable table = BlockErrorTable::from_values(
      BlockLayout::from_models(qm, km), Matrix(qm.num_clusters, km.num_clusters, std::move(per_query_sums)), mode);
  table.stabilizers = std::move(stabilizers);
  table.flops = estimation_flops(mode, qm.num_clusters, km.num_clusters, num_keys, d);
  return table;
}

// Two-pass estimate of one block: the block max is found first, then every
// term is accumulated against it and the sum rescaled to the stabilizer.
// Mirrors the single-tile path of the streaming kernel operation for
// operation.
double block_error(std::span<const double> qbar, double centroid_logit, double stabilizer,
                   std::span<const std::size_t> members, const Matrix& k, const Matrix* v,
                   std::span<const double> vbar, double scale, std::vector<double>& logits) {
  logits.resize(members.size());
  double m_local = stabilizer;
  for (std::size_t t = 0; t < members.size(); ++t) {
    logits[t] = dot(qbar, k.row(members[t])) * scale;
    m_local = std::max(m_local, logits[t]);
  }
  const double alpha = std::exp(stabilizer - m_local);
  double e = 0.0;
  if (v == nullptr) {
    const double y = std::exp(centroid_logit - stabilizer) * alpha;
    for (std::size_t t = 0; t < members.size(); ++t) {
      const double diff = std::exp(logits[t] - m_local) - y;
      e += diff * diff;
    }
  } else {
    const std::size_t d = vbar.size();
    std::vector<double> y(d);
    const double w = std::exp(centroid_logit - stabilizer);
    for (std::size_t c = 0; c < d; ++c) y[c] = w * vbar[c] * alpha;
    for (std::size_t t = 0; t < members.size(); ++t) {
      const double p = std::exp(logits[t] - m_local);
      const auto vj = v->row(members[t]);
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = p * vj[c] - y[c];
        sq += diff * diff;
      }
      e += sq;
    }
  }
  return e * std::exp(2.0 * (m_local - stabilizer));
}

BlockErrorTable estimate_dense(const ClusterModel& qm, const ClusterModel& km, const Matrix& k, const Matrix* v,
                               const EstimatorOptions& options) {
  check_inputs(qm, km, k, v, options);
  const std::size_t d = k.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix vbar = v ? cluster_means(km, *v) : Matrix();

  std::vector<double> sums(qm.num_clusters * km.num_clusters, 0.0);
  std::vector<double> stabilizers(qm.num_clusters);
  std::vector<double> s;
  std::vector<double> logits;
  for (std::size_t qc = 0; qc < qm.num_clusters; ++qc) {
    const auto qbar = qm.centroids.row(qc);
    const double m = centroid_logits<double>(qbar, km.centroids.data(), km.num_clusters, d, scale, s);
    stabilizers[qc] = options.stabilizers ? (*options.stabilizers)[qc] : m;
    for (std::size_t kc = 0; kc < km.num_clusters; ++kc) {
      sums[qc * km.num_clusters + kc] = block_error(qbar, s[kc], stabilizers[qc], km.members(kc), k, v,
                                                    v ? vbar.row(kc) : std::span<const double>{}, scale, logits);
    }
  }
  return finish(qm, km, std::move(sums), std::move(stabilizers),
                v ? EstimatorMode::kValueAware : EstimatorMode::kPlain, k.rows(), d);
}

template <typename T>
std::vector<T> cast_copy(const std::vector<double>& src) {
  return std::vector<T>(src.begin(), src.end());
}

template <typename T>
BlockErrorTable streaming_kernel(const ClusterModel& qm, const ClusterModel& km, const Matrix& k, const Matrix& v,
                                 const EstimatorOptions& options) {
  const std::size_t d = k.cols();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto qbar_all = cast_copy<T>(qm.centroids.data());
  const auto kbar_all = cast_copy<T>(km.centroids.data());
  const auto vbar_all = cast_copy<T>(cluster_means(km, v).data());
  const auto k_all = cast_copy<T>(k.data());
  const auto v_all = cast_copy<T>(v.data());
  const std::size_t tile = options.tile_size;

  std::vector<double> sums(qm.num_clusters * km.num_clusters, 0.0);
  std::vector<double> stabilizers(qm.num_clusters);
  std::vector<T> s;
  std::vector<T> y(d);
  std::vector<T> tile_logits(tile);
  for (std::size_t qc = 0; qc < qm.num_clusters; ++qc) {
    const std::span<const T> qbar{qbar_all.data() + qc * d, d};
    const T m_row = centroid_logits<T>(qbar, kbar_all, km.num_clusters, d, scale, s);
    const T m_i = options.stabilizers ? static_cast<T>((*options.stabilizers)[qc]) : m_row;
    stabilizers[qc] = static_cast<double>(m_i);

    for (std::size_t kc = 0; kc < km.num_clusters; ++kc) {
      const T w = std::exp(s[kc] - m_i);
      for (std::size_t c = 0; c < d; ++c) y[c] = w * vbar_all[kc * d + c];
      T e = 0;
      T m_local = m_i;
      const auto members = km.members(kc);
      for (std::size_t start = 0; start < members.size(); start += tile) {
        const std::size_t len = std::min(tile, members.size() - start);
        T m_new = m_local;
        for (std::size_t t = 0; t < len; ++t) {
          tile_logits[t] = dot(qbar, std::span<const T>{k_all.data() + members[start + t] * d, d}) * scale;
          m_new = std::max(m_new, tile_logits[t]);
        }
        const T alpha = std::exp(m_local - m_new);
        e = e * (alpha * alpha);
        for (std::size_t c = 0; c < d; ++c) y[c] = y[c] * alpha;
        for (std::size_t t = 0; t < len; ++t) {
          const T p = std::exp(tile_logits[t] - m_new);
          const T* vj = v_all.data() + members[start + t] * d;
          T sq = 0;
          for (std::size_t c = 0; c < d; ++c) {
            const T diff = p * vj[c] - y[c];
            sq += diff * diff;
          }
          e += sq;
        }
        m_local = m_new;
      }
      sums[qc * km.num_clusters + kc] = static_cast<double>(e * std::exp(T(2) * (m_local - m_i)));
    }
  }
  return finish(qm, km, std::move(sums), std::move(stabilizers), EstimatorMode::kValueAware, k.rows(), d);
}

}  // namespace

std::uint64_t estimation_flops(EstimatorMode mode, std::size_t q_clusters, std::size_t k_clusters,
                               std::size_t num_keys, std::size_t dim) {
  const std::uint64_t cq = q_clusters;
  const std::uint64_t ck = k_clusters;
  const std::uint64_t nk = num_keys;
  const std::uint64_t d = dim;
  if (mode == EstimatorMode::kPlain) return cq * (ck + nk) * 2 * d;
  // centroid logit + scaled centroid value per block; key logit + residual
  // (scale-subtract, square-accumulate) per key.
  return cq * (ck * 3 * d + nk * 6 * d);
}

BlockErrorTable estimate_errors(const ClusterModel& qm, const ClusterModel& km, const Matrix& k,
                                const EstimatorOptions& options) {
  return estimate_dense(qm, km, k, nullptr, options);
}

BlockErrorTable estimate_errors_value_aware(const ClusterModel& qm, const ClusterModel& km, const Matrix& k,
                                            const Matrix& v, const EstimatorOptions& options) {
  return estimate_dense(qm, km, k, &v, options);
}

BlockErrorTable estimate_errors_streaming(const ClusterModel& qm, const ClusterModel& km, const Matrix& k,
                                          const Matrix& v, const EstimatorOptions& options) {
  check_inputs(qm, km, k, &v, options);
  if (options.precision == Precision::kSingle) return streaming_kernel<float>(qm, km, k, v, options);
  return streaming_kernel<double>(qm, km, k, v, options);
}

namespace {

bool ranks_before(const RankedBlock& a, const RankedBlock& b) {
  if (a.ratio != b.ratio) return a.ratio > b.ratio;
  if (a.error != b.error) return a.error > b.error;
  if (a.q_cluster != b.q_cluster) return a.q_cluster < b.q_cluster;
  return a.k_cluster < b.k_cluster;
}

}  // namespace

std::vector<RankedBlock> rank_blocks(const BlockErrorTable& table) {
  std::vector<RankedBlock> out;
  out.reserve(table.layout.num_blocks());
  for (std::size_t qc = 0; qc < table.q_clusters(); ++qc)
    for (std::size_t kc = 0; kc < table.k_clusters(); ++kc)
      out.push_back({qc, kc, table.ratios(qc, kc), table.error_sum(qc, kc), table.layout.block_size(qc, kc)});
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

std::vector<RankedBlock> rank_row(const BlockErrorTable& table, std::size_t qc) {
  std::vector<RankedBlock> out;
  out.reserve(table.k_clusters());
  for (std::size_t kc = 0; kc < table.k_clusters(); ++kc)
    out.push_back({qc, kc, table.ratios(qc, kc), table.error_sum(qc, kc), table.layout.block_size(qc, kc)});
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

}  // namespace ear

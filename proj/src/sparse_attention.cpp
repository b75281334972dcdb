// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/sparse_attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ear/error.hpp"
#include "ear/oracle.hpp"

namespace ear {
namespace {

template <typename T>
std::vector<T> cast_copy(const std::vector<double>& src) {
  return std::vector<T>(src.begin(), src.end());
}

void check_executor_inputs(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& qm,
                           const ClusterModel& km, const BlockMask& mask) {
  if (q.cols() != k.cols()) throw ShapeError("q " + q.shape_string() + " and k " + k.shape_string() + " differ in d");
  if (v.rows() != k.rows()) throw ShapeError("v " + v.shape_string() + " does not match k " + k.shape_string());
  if (qm.num_tokens() != q.rows() || km.num_tokens() != k.rows())
    throw ShapeError("cluster models do not cover the token matrices");
  if (mask.q_clusters() != qm.num_clusters || mask.k_clusters() != km.num_clusters)
    throw ShapeError("mask does not match the clusterings");
}

template <typename T>
PartialAttention exact_pass_impl(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& qm,
                                 const ClusterModel& km, const BlockMask& mask) {
  const std::size_t d = q.cols();
  const std::size_t dv = v.cols();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto qs = cast_copy<T>(q.data());
  const auto ks = cast_copy<T>(k.data());
  const auto vs = cast_copy<T>(v.data());

  PartialAttention out{Matrix(q.rows(), dv), std::vector<double>(q.rows()), exact_block_flops(mask, d)};
  std::vector<T> row_out(dv);
  for (std::size_t qc = 0; qc < qm.num_clusters; ++qc) {
    for (std::size_t i : qm.members(qc)) {
      const std::span<const T> qi{qs.data() + i * d, d};
      OnlineSoftmax<T> state(dv);
      for (std::size_t kc = 0; kc < km.num_clusters; ++kc) {
        if (!mask.selected(qc, kc)) continue;
        for (std::size_t j : km.members(kc)) {
          const T s = dot(qi, std::span<const T>{ks.data() + j * d, d}) * scale;
          state.merge(s, std::span<const T>{vs.data() + j * dv, dv});
        }
      }
      if (state.empty()) {
        out.lse[i] = -std::numeric_limits<double>::infinity();
        continue;
      }
      state.write_output(row_out);
      auto dst = out.output.row(i);
      for (std::size_t c = 0; c < dv; ++c) dst[c] = static_cast<double>(row_out[c]);
      out.lse[i] = static_cast<double>(state.lse());
    }
  }
  return out;
}

template <typename T>
AttentionResult compensation_impl(const Matrix& q, const ClusterModel& qm, const KeyCompensation& keys,
                                  const BlockMask& mask, const PartialAttention& partial,
                                  const std::vector<std::size_t>& order) {
  const std::size_t d = q.cols();
  const std::size_t dv = keys.v_centroids.cols();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const auto qs = cast_copy<T>(q.data());
  const auto kbar = cast_copy<T>(keys.k_centroids.data());
  const auto vbar = cast_copy<T>(keys.v_centroids.data());
  std::vector<T> log_w(keys.sizes.size());
  for (std::size_t kc = 0; kc < keys.sizes.size(); ++kc) log_w[kc] = std::log(static_cast<T>(keys.sizes[kc]));

  AttentionResult result{Matrix(q.rows(), dv), std::vector<double>(q.rows()), {}, mask.density()};
  std::vector<T> seed_out(dv);
  std::vector<T> row_out(dv);
  for (std::size_t qc = 0; qc < qm.num_clusters; ++qc) {
    for (std::size_t i : qm.members(qc)) {
      const std::span<const T> qi{qs.data() + i * d, d};
      const auto po = partial.output.row(i);
      for (std::size_t c = 0; c < dv; ++c) seed_out[c] = static_cast<T>(po[c]);
      auto state = OnlineSoftmax<T>::seeded(static_cast<T>(partial.lse[i]), seed_out);
      for (std::size_t kc : order) {
        if (mask.selected(qc, kc)) continue;
        const T s = dot(qi, std::span<const T>{kbar.data() + kc * d, d}) * scale + log_w[kc];
        state.merge(s, std::span<const T>{vbar.data() + kc * dv, dv});
      }
      if (state.empty())
        throw ConfigError("query " + std::to_string(i) + " has neither exact nor compensated key clusters");
      state.write_output(row_out);
      auto dst = result.output.row(i);
      for (std::size_t c = 0; c < dv; ++c) dst[c] = static_cast<double>(row_out[c]);
      result.lse[i] = static_cast<double>(state.lse());
    }
  }
  result.flops.exact_block = partial.flops;
  result.flops.compensation = compensation_flops(mask, d);
  return result;
}

}  // namespace

KeyCompensation KeyCompensation::from_model(const ClusterModel& k_model, const Matrix& v) {
  return {k_model.centroids, cluster_means(k_model, v), k_model.sizes};
}

std::uint64_t exact_block_flops(const BlockMask& mask, std::size_t dim) {
  return 4ull * static_cast<std::uint64_t>(mask.density_entries()) * dim;
}

std::uint64_t compensation_flops(const BlockMask& mask, std::size_t dim) {
  std::uint64_t pairs = 0;
  for (std::size_t qc = 0; qc < mask.q_clusters(); ++qc)
    pairs += static_cast<std::uint64_t>(mask.layout().q_sizes[qc]) * mask.compensated_in_row(qc);
  return 4ull * pairs * dim;
}

PartialAttention exact_block_pass(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& qm,
                                  const ClusterModel& km, const BlockMask& mask, const ExecutorOptions& options) {
  check_executor_inputs(q, k, v, qm, km, mask);
  if (options.precision == Precision::kSingle) return exact_pass_impl<float>(q, k, v, qm, km, mask);
  return exact_pass_impl<double>(q, k, v, qm, km, mask);
}

AttentionResult compensation_pass(const Matrix& q, const ClusterModel& qm, const KeyCompensation& keys,
                                  const BlockMask& mask, const PartialAttention& partial,
                                  const ExecutorOptions& options, const std::vector<std::size_t>* order) {
  if (qm.num_tokens() != q.rows()) throw ShapeError("query clustering does not cover q");
  if (keys.k_centroids.cols() != q.cols()) throw ShapeError("key centroids differ from q in head dimension");
  if (mask.q_clusters() != qm.num_clusters || mask.k_clusters() != keys.sizes.size())
    throw ShapeError("mask does not match the clusterings");
  if (partial.output.rows() != q.rows() || partial.lse.size() != q.rows() ||
      partial.output.cols() != keys.v_centroids.cols())
    throw ShapeError("partial state does not match the queries");

  std::vector<std::size_t> ascending;
  if (order == nullptr) {
    ascending.resize(keys.sizes.size());
    for (std::size_t kc = 0; kc < ascending.size(); ++kc) ascending[kc] = kc;
    order = &ascending;
  } else {
    std::vector<std::uint8_t> seen(keys.sizes.size(), 0);
    for (std::size_t kc : *order) {
      if (kc >= seen.size() || seen[kc]) throw ConfigError("compensation order is not a permutation");
      seen[kc] = 1;
    }
    if (order->size() != seen.size()) throw ConfigError("compensation order is not a permutation");
  }
  if (options.precision == Precision::kSingle)
    return compensation_impl<float>(q, qm, keys, mask, partial, *order);
  return compensation_impl<double>(q, qm, keys, mask, partial, *order);
}

AttentionResult sparse_attend(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& qm,
                              const ClusterModel& km, const BlockMask& mask, const ExecutorOptions& options) {
  const PartialAttention partial = exact_block_pass(q, k, v, qm, km, mask, options);
  return compensation_pass(q, qm, KeyCompensation::from_model(km, v), mask, partial, options);
}

Matrix reference_sparse_output(const Matrix& q, const Matrix& k, const Matrix& v, const ClusterModel& qm,
                               const ClusterModel& km, const BlockMask& mask) {
  check_executor_inputs(q, k, v, qm, km, mask);
  const AttentionMap map = sparse_map_direct(q, k, qm, km, mask);
  const Matrix vbar = cluster_means(km, v);
  Matrix out(q.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t qc = qm.assignments[i];
    auto dst = out.row(i);
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const std::size_t kc = km.assignments[j];
      const auto src = mask.selected(qc, kc) ? v.row(j) : vbar.row(kc);
      const double p = map.probs(i, j);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += p * src[c];
    }
  }
  return out;
}

}  // namespace ear

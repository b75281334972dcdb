// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/blocks.hpp"

#include "ear/error.hpp"

namespace ear {

std::int64_t BlockLayout::total_entries() const {
  std::int64_t nq = 0;
  std::int64_t nk = 0;
  for (auto s : q_sizes) nq += static_cast<std::int64_t>(s);
  for (auto s : k_sizes) nk += static_cast<std::int64_t>(s);
  return nq * nk;
}

BlockMask::BlockMask(BlockLayout layout) : layout_(std::move(layout)), selected_(layout_.num_blocks(), 0) {}

BlockMask::BlockMask(BlockLayout layout, std::vector<std::uint8_t> selected)
    : layout_(std::move(layout)), selected_(std::move(selected)) {
  if (selected_.size() != layout_.num_blocks())
    throw ShapeError("block mask has " + std::to_string(selected_.size()) + " entries, layout has " +
                     std::to_string(layout_.num_blocks()) + " blocks");
  for (std::size_t qc = 0; qc < layout_.q_clusters(); ++qc) {
    for (std::size_t kc = 0; kc < layout_.k_clusters(); ++kc) {
      auto& bit = selected_[layout_.index(qc, kc)];
      bit = bit ? 1 : 0;
      if (bit) density_entries_ += layout_.block_size(qc, kc);
    }
  }
}

BlockMask BlockMask::all(BlockLayout layout, bool value) {
  const std::size_t n = layout.num_blocks();
  return BlockMask(std::move(layout), std::vector<std::uint8_t>(n, value ? 1 : 0));
}

void BlockMask::set(std::size_t qc, std::size_t kc, bool value) {
  auto& bit = selected_[layout_.index(qc, kc)];
  if ((bit != 0) == value) return;
  bit = value ? 1 : 0;
  density_entries_ += value ? layout_.block_size(qc, kc) : -layout_.block_size(qc, kc);
}

double BlockMask::density() const {
  const auto total = layout_.total_entries();
  return total == 0 ? 0.0 : static_cast<double>(density_entries_) / static_cast<double>(total);
}

std::size_t BlockMask::compensated_in_row(std::size_t qc) const {
  std::size_t n = 0;
  for (std::size_t kc = 0; kc < layout_.k_clusters(); ++kc) n += selected(qc, kc) ? 0 : 1;
  return n;
}

std::string to_string(EstimatorMode mode) { return mode == EstimatorMode::kPlain ? "plain" : "valueAware"; }

EstimatorMode estimator_mode_from_string(const std::string& name) {
  if (name == "plain") return EstimatorMode::kPlain;
  if (name == "valueAware") return EstimatorMode::kValueAware;
  throw ConfigError("unknown estimator mode '" + name + "' (expected plain or valueAware)");
}

double BlockErrorTable::total_error() const {
  double total = 0.0;
  for (double v : error_sum.data()) total += v;
  return total;
}

BlockErrorTable BlockErrorTable::from_values(BlockLayout layout, Matrix error_sum, EstimatorMode mode) {
  if (error_sum.rows() != layout.q_clusters() || error_sum.cols() != layout.k_clusters())
    throw ShapeError("error table " + error_sum.shape_string() + " does not match layout " +
                     std::to_string(layout.q_clusters()) + "x" + std::to_string(layout.k_clusters()));
  BlockErrorTable table;
  table.ratios = Matrix(error_sum.rows(), error_sum.cols());
  for (std::size_t qc = 0; qc < layout.q_clusters(); ++qc) {
    for (std::size_t kc = 0; kc < layout.k_clusters(); ++kc) {
      if (error_sum(qc, kc) < 0.0) throw ConfigError("error table entries must be non-negative");
      const auto size = layout.block_size(qc, kc);
      if (size < 1) throw ConfigError("block sizes must be at least 1");
      table.ratios(qc, kc) = error_sum(qc, kc) / static_cast<double>(size);
    }
  }
  table.stabilizers.assign(layout.q_clusters(), 0.0);
  table.layout = std::move(layout);
  table.error_sum = std::move(error_sum);
  table.mode = mode;
  return table;
}

}  // namespace ear

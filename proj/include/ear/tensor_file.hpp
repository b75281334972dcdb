// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

// Binary container for one (Q, K, V) instance.
//
//   offset  size  field
//   0       4     magic "QKVT"
//   4       2     version, u16 little-endian (currently 1)
//   6       1     dtype, 0 = float64, 1 = float32
//   7       1     reserved, must be 0
//   8       24    (rows u32 LE, cols u32 LE) for Q, K, V
//   32      ...   row-major little-endian payloads for Q, K, V
//
// Readers reject a wrong magic, an unknown version, a payload shorter than
// the header declares and trailing bytes, each with its own message.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ear/analysis.hpp"

namespace ear {

enum class DType : std::uint8_t { kFloat64 = 0, kFloat32 = 1 };

inline constexpr std::uint16_t kTensorFileVersion = 1;
inline constexpr std::size_t kTensorFileHeaderBytes = 32;

struct TensorBundle {
  Instance instance;
  DType dtype = DType::kFloat64;
};

/// Float32 encoding rounds each entry to the nearest float.
std::vector<std::uint8_t> encode_tensor_file(const Instance& instance, DType dtype = DType::kFloat64);

/// Throws InputError on any malformed byte string.
TensorBundle decode_tensor_file(std::span<const std::uint8_t> bytes);

void write_tensor_file(const std::string& path, const Instance& instance, DType dtype = DType::kFloat64);
TensorBundle read_tensor_file(const std::string& path);

}  // namespace ear

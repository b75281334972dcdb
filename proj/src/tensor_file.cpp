// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/tensor_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <iterator>

#include "ear/error.hpp"

namespace ear {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'Q', 'K', 'V', 'T'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<std::uint8_t>(value >> (8 * b)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) value |= static_cast<U>(p[b]) << (8 * b);
  return value;
}

std::uint32_t checked_dim(std::size_t n, const char* what) {
  if (n > UINT32_MAX) throw InputError(std::string(what) + " dimension does not fit in u32");
  return static_cast<std::uint32_t>(n);
}

void put_payload(std::vector<std::uint8_t>& out, const Matrix& m, DType dtype) {
  for (double x : m.data()) {
    if (dtype == DType::kFloat64)
      put_le(out, std::bit_cast<std::uint64_t>(x));
    else
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
}

Matrix get_payload(const std::uint8_t*& p, std::uint32_t rows, std::uint32_t cols, DType dtype, const char* name) {
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& x : data) {
    if (dtype == DType::kFloat64) {
      x = std::bit_cast<double>(get_le<std::uint64_t>(p));
      p += 8;
    } else {
      x = std::bit_cast<float>(get_le<std::uint32_t>(p));
      p += 4;
    }
  }
  try {
    return Matrix(rows, cols, std::move(data));
  } catch (const InputError& e) {
    throw InputError(std::string(name) + " payload: " + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_tensor_file(const Instance& in, DType dtype) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_le(out, kTensorFileVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(0);
  for (const Matrix* m : {&in.q, &in.k, &in.v}) {
    put_le(out, checked_dim(m->rows(), "row"));
    put_le(out, checked_dim(m->cols(), "column"));
  }
  for (const Matrix* m : {&in.q, &in.k, &in.v}) put_payload(out, *m, dtype);
  return out;
}

TensorBundle decode_tensor_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw InputError("bad magic: not a QKVT tensor file");
  if (bytes.size() < kTensorFileHeaderBytes)
    throw InputError("size mismatch: header truncated at " + std::to_string(bytes.size()) + " bytes");
  const std::uint8_t* p = bytes.data();
  const auto version = get_le<std::uint16_t>(p + 4);
  if (version != kTensorFileVersion) throw InputError("unsupported version " + std::to_string(version));
  const std::uint8_t dtype_byte = p[6];
  if (dtype_byte > 1) throw InputError("unknown dtype code " + std::to_string(dtype_byte));
  if (p[7] != 0) throw InputError("reserved header byte is " + std::to_string(p[7]) + ", expected 0");
  const auto dtype = static_cast<DType>(dtype_byte);
  const std::uint64_t width = dtype == DType::kFloat64 ? 8 : 4;

  std::array<std::uint32_t, 6> dims{};
  std::uint64_t payload = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) dims[i] = get_le<std::uint32_t>(p + 8 + 4 * i);
  for (std::size_t t = 0; t < 3; ++t) payload += static_cast<std::uint64_t>(dims[2 * t]) * dims[2 * t + 1] * width;

  const std::uint64_t expected = kTensorFileHeaderBytes + payload;
  if (bytes.size() < expected)
    throw InputError("size mismatch: header declares " + std::to_string(expected) + " bytes, file has " +
                     std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw InputError("trailing bytes: " + std::to_string(bytes.size() - expected) + " bytes after the V payload");

  for (std::uint32_t dim : dims)
    if (dim == 0) throw InputError("tensor dimensions must be at least 1");
  if (dims[1] != dims[3] || dims[3] != dims[5])
    throw InputError("q, k and v must share the head dimension");
  if (dims[2] != dims[4]) throw InputError("k and v must have the same number of rows");

  p += kTensorFileHeaderBytes;
  TensorBundle bundle;
  bundle.dtype = dtype;
  bundle.instance.q = get_payload(p, dims[0], dims[1], dtype, "q");
  bundle.instance.k = get_payload(p, dims[2], dims[3], dtype, "k");
  bundle.instance.v = get_payload(p, dims[4], dims[5], dtype, "v");
  return bundle;
}

void write_tensor_file(const std::string& path, const Instance& in, DType dtype) {
  const auto bytes = encode_tensor_file(in, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing '" + path + "'");
}

TensorBundle read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor_file(bytes);
}

}  // namespace ear

// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

// Tensor dump format (little-endian):
//   u32 rank | u32 extent x rank | u32 dtype tag (1 = f32, 2 = f64) | raw data

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "avsr/tensor.hpp"

namespace avsr {

enum class DType : uint32_t { kF32 = 1, kF64 = 2 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }

void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

/// Reads one dump; a stored dtype different from T is converted.
template <class T>
Tensor<T> read_tensor(std::istream& is);

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path);

/// Size in bytes of the dump of a tensor with this shape and dtype.
uint64_t dump_size(const Shape& shape, DType dtype);

}  // namespace avsr

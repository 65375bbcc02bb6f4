// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace avsr {

namespace {

template <class U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
}

template <class U>
void write_raw(std::ostream& os, U v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_raw(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw InputError("tensor dump truncated");
  return to_le(v);
}

}  // namespace

void write_u32(std::ostream& os, uint32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, uint64_t v) { write_raw(os, v); }
uint32_t read_u32(std::istream& is) { return read_raw<uint32_t>(is); }
uint64_t read_u64(std::istream& is) { return read_raw<uint64_t>(is); }

uint64_t dump_size(const Shape& shape, DType dtype) {
  const uint64_t elem = dtype == DType::kF32 ? 4 : 8;
  return 4 + 4 * shape.size() + 4 + elem * static_cast<uint64_t>(shape_numel(shape));
}

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  write_u32(os, static_cast<uint32_t>(t.rank()));
  for (auto e : t.shape()) write_u32(os, static_cast<uint32_t>(e));
  write_u32(os, static_cast<uint32_t>(dtype_of<T>()));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.vec().data()),
             static_cast<std::streamsize>(t.vec().size() * sizeof(T)));
  } else {
    for (T v : t.vec()) write_raw(os, v);
  }
  if (!os) throw InputError("failed writing tensor dump");
}

template <class T>
Tensor<T> read_tensor(std::istream& is) {
  const uint32_t rank = read_u32(is);
  if (rank == 0 || rank > 8) throw InputError("tensor dump: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = read_u32(is);
  const auto tag = static_cast<DType>(read_u32(is));
  const int64_t n = shape_numel(shape);
  std::vector<T> data(static_cast<size_t>(n));
  if (tag == DType::kF32) {
    for (auto& v : data) v = static_cast<T>(read_raw<float>(is));
  } else if (tag == DType::kF64) {
    for (auto& v : data) v = static_cast<T>(read_raw<double>(is));
  } else {
    throw InputError("tensor dump: unknown dtype tag");
  }
  return Tensor<T>::from(std::move(shape), std::move(data));
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  return read_tensor<T>(is);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace avsr

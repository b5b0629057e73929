#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stseg/tensor.hpp"

namespace stseg {

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError(std::string("truncated stream while reading ") + what);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  put_bytes(os, b, 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  put_bytes(os, b, 2);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  get_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8));
}

template <class S>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? 0 : 1;
}

template <class S>
void put_scalar_le(std::ostream& os, S v) {
  if constexpr (std::is_same_v<S, float>) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
  } else {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u32(os, static_cast<std::uint32_t>(u));
    put_u32(os, static_cast<std::uint32_t>(u >> 32));
  }
}

template <class S>
S get_scalar_le(std::istream& is) {
  S v;
  if constexpr (std::is_same_v<S, float>) {
    std::uint32_t u = get_u32(is, "tensor values");
    std::memcpy(&v, &u, 4);
  } else {
    std::uint64_t lo = get_u32(is, "tensor values");
    std::uint64_t hi = get_u32(is, "tensor values");
    std::uint64_t u = lo | (hi << 32);
    std::memcpy(&v, &u, 8);
  }
  return v;
}

}  // namespace detail

// "STT1": magic, u8 dtype (0=f32, 1=f64), u8 rank, rank x u32 LE dims,
// then raw little-endian values in row-major order.
template <class S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  os.write("STT1", 4);
  const std::uint8_t tag = detail::dtype_tag<S>();
  detail::put_bytes(os, &tag, 1);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  detail::put_bytes(os, &rank, 1);
  for (std::size_t d = 0; d < t.rank(); ++d)
    detail::put_u32(os, static_cast<std::uint32_t>(t.dim(d)));
  for (S v : t.data()) detail::put_scalar_le(os, v);
}

template <class S>
Tensor<S> read_tensor(std::istream& is) {
  char magic[4];
  detail::get_bytes(is, magic, 4, "STT1 magic");
  if (std::memcmp(magic, "STT1", 4) != 0) throw FormatError("bad STT1 magic");
  std::uint8_t tag, rank;
  detail::get_bytes(is, &tag, 1, "dtype tag");
  detail::get_bytes(is, &rank, 1, "rank");
  if (tag != detail::dtype_tag<S>())
    throw FormatError("STT1 dtype tag " + std::to_string(int(tag)) +
                      " does not match requested precision");
  std::vector<std::int64_t> shape(rank);
  for (auto& d : shape) d = detail::get_u32(is, "dims");
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw FormatError("STT1 dim must be positive");
    n *= d;
  }
  std::vector<S> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = detail::get_scalar_le<S>(is);
  return Tensor<S>::from_data(std::move(shape), std::move(data));
}

template <class S>
void save_tensor(const std::string& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, t);
  if (!os) throw IoError("write failed: " + path);
}

template <class S>
Tensor<S> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_tensor<S>(is);
}

// "STCK1": magic, u32 count, then per entry u16 name length, UTF-8 name,
// embedded STT1 record.
template <class S>
void write_checkpoint(std::ostream& os,
                      const std::vector<std::pair<std::string, Tensor<S>>>& entries) {
  os.write("STCK1", 5);
  detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(os, name.data(), name.size());
    write_tensor(os, t);
  }
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> read_checkpoint(std::istream& is) {
  char magic[5];
  detail::get_bytes(is, magic, 5, "STCK1 magic");
  if (std::memcmp(magic, "STCK1", 5) != 0) throw FormatError("bad STCK1 magic");
  const std::uint32_t count = detail::get_u32(is, "entry count");
  std::vector<std::pair<std::string, Tensor<S>>> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = detail::get_u16(is, "name length");
    std::string name(len, '\0');
    detail::get_bytes(is, name.data(), len, "name");
    entries.emplace_back(std::move(name), read_tensor<S>(is));
  }
  return entries;
}

template <class S>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<S>>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_checkpoint(os, entries);
  if (!os) throw IoError("write failed: " + path);
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_checkpoint<S>(is);
}

}  // namespace stseg

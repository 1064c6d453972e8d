#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "evpose/error.hpp"

namespace evpose::detail {

// Little-endian scalar I/O on std::fstream. Each reader throws FormatError
// carrying the byte offset where the value should have started.

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  if constexpr (std::is_floating_point_v<T>) {
    std::memcpy(buf, &value, sizeof(T));  // host is little-endian for IEEE754 here
  } else {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  static_assert(std::is_trivially_copyable_v<T>);
  const std::uint64_t offset = static_cast<std::uint64_t>(in.tellg());
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw FormatError("truncated " + what, offset);
  if constexpr (std::is_floating_point_v<T>) {
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  } else {
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
    return static_cast<T>(u);
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

}  // namespace evpose::detail

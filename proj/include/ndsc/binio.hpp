#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ndsc/error.hpp"

// Little-endian primitives shared by the model and dataset file formats.
namespace ndsc::binio {

template <class T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_le<std::uint32_t>(out, bits);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  const auto pos = in.tellg();
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw DataError(std::string("truncated input while reading ") + what + " at byte offset " +
                    std::to_string(static_cast<long long>(pos)));
}

template <class T>
T get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  read_exact(in, buf, sizeof(T), what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

inline float get_f32(std::istream& in, const char* what) {
  const auto bits = get_le<std::uint32_t>(in, what);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

inline std::string get_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 24) {
  const auto len = get_le<std::uint32_t>(in, what);
  if (len > max_len)
    throw DataError(std::string("implausible length ") + std::to_string(len) + " for " + what);
  std::string s(len, '\0');
  if (len) read_exact(in, s.data(), len, what);
  return s;
}

}  // namespace ndsc::binio

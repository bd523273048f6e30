#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

// Little-endian scalar IO shared by the .vten and checkpoint formats.

namespace lmft::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_arithmetic_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  static_assert(std::is_arithmetic_v<T>);
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw TruncatedError(std::string("truncated while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char got[4];
  if (!is.read(got, 4)) throw TruncatedError(what + ": missing magic bytes");
  if (std::memcmp(got, magic, 4) != 0) throw FormatError(what + ": bad magic, expected " + magic);
}

}  // namespace lmft::io

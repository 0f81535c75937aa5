#pragma once

// Little-endian fixed-width reads/writes for the binary snapshot formats.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "herp/error.hpp"

namespace herp::io {

template <typename T>
  requires std::is_integral_v<T>
void write_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFFu);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
  requires std::is_integral_v<T>
T read_le(std::istream& in) {
  using U = std::make_unsigned_t<T>;
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), bytes.size())) {
    throw InputError("binary snapshot truncated");
  }
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  }
  return static_cast<T>(u);
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::array<char, 8> buf{};
  if (magic.size() > buf.size() ||
      !in.read(buf.data(), static_cast<std::streamsize>(magic.size())) ||
      std::string_view(buf.data(), magic.size()) != magic) {
    throw InputError("bad magic: expected '" + std::string(magic) + "'");
  }
}

}  // namespace herp::io

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "occworld/core/error.hpp"

namespace occworld::io {

// Little-endian primitives, independent of host byte order.

template <typename U>
  requires std::is_unsigned_v<U>
void write_uint(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  }
  os.write(bytes.data(), bytes.size());
}

inline void write_f32(std::ostream& os, float value) {
  write_uint(os, std::bit_cast<std::uint32_t>(value));
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_uint(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

/// Reads with a context string that ends up in error messages.
class Reader {
 public:
  Reader(std::istream& is, std::string context)
      : is_(is), context_(std::move(context)) {}

  const std::string& context() const { return context_; }

  void read_exact(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw DataError(context_ + ": unexpected end of file");
    }
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  U read_uint() {
    std::array<unsigned char, sizeof(U)> bytes{};
    read_exact(bytes.data(), bytes.size());
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return value;
  }

  float read_f32() { return std::bit_cast<float>(read_uint<std::uint32_t>()); }

  std::string read_string(std::size_t max_len = 1u << 20) {
    const auto n = read_uint<std::uint32_t>();
    if (n > max_len) throw DataError(context_ + ": string length out of range");
    std::string s(n, '\0');
    read_exact(s.data(), n);
    return s;
  }

  void expect_magic(const std::string& magic) {
    std::string got(magic.size(), '\0');
    read_exact(got.data(), got.size());
    if (got != magic) {
      throw DataError(context_ + ": bad magic bytes, expected '" + magic + "'");
    }
  }

  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) {
      throw DataError(context_ + ": trailing bytes after payload");
    }
  }

 private:
  std::istream& is_;
  std::string context_;
};

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return is;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  auto is = open_input(path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace occworld::io

#pragma once

// Little-endian binary helpers for the checkpoint and feature formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "weakcap/errors.hpp"

namespace weakcap::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

template <class T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_u8(std::ostream& out, std::uint8_t v) { write_pod(out, v); }
inline void write_u32(std::ostream& out, std::uint32_t v) { write_pod(out, v); }
inline void write_f32(std::ostream& out, float v) { write_pod(out, v); }
inline void write_f64(std::ostream& out, double v) { write_pod(out, v); }

inline void write_string(std::ostream& out, std::string_view s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IngestError(std::string("truncated binary input while reading ") + what);
  return value;
}

inline std::uint8_t read_u8(std::istream& in, const char* what) {
  return read_pod<std::uint8_t>(in, what);
}
inline std::uint32_t read_u32(std::istream& in, const char* what) {
  return read_pod<std::uint32_t>(in, what);
}
inline float read_f32(std::istream& in, const char* what) { return read_pod<float>(in, what); }
inline double read_f64(std::istream& in, const char* what) {
  return read_pod<double>(in, what);
}

inline std::string read_string(std::istream& in, const char* what) {
  const std::uint32_t n = read_u32(in, what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IngestError(std::string("truncated string while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::array<char, 8> buf{};
  in.read(buf.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || std::string_view(buf.data(), magic.size()) != magic) {
    throw IngestError("bad magic, expected \"" + std::string(magic) + "\"");
  }
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path);
  return out;
}

}  // namespace weakcap::binio

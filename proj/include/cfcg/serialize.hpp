#pragma once

// Binary tensor format ("NTSR"):
//   magic "NTSR" | version u32 | dtype u32 (1 = f32, 2 = f64) |
//   n, c, h, w as u64 | raw payload
// All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cfcg/tensor.hpp"

namespace cfcg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kTensorFormatVersion = 1;

enum class DType : std::uint32_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace io {

template <class U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  os.write(buf.data(), buf.size());
}

template <class U>
U read_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw FormatError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }
inline void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<std::uint32_t>(is)); }

template <class T>
void write_scalar(std::ostream& os, T v) {
  if constexpr (std::is_same_v<T, float>)
    write_f32(os, v);
  else
    write_f64(os, v);
}

template <class T>
T read_scalar(std::istream& is) {
  if constexpr (std::is_same_v<T, float>)
    return read_f32(is);
  else
    return read_f64(is);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t max_len = (1ull << 32)) {
  const auto n = read_le<std::uint64_t>(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("unexpected end of stream in string");
  return s;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
}

template <class T>
void write_vector(std::ostream& os, const std::vector<T>& v) {
  write_le<std::uint64_t>(os, v.size());
  for (T x : v) write_scalar<T>(os, x);
}

template <class T>
std::vector<T> read_vector(std::istream& is) {
  const auto n = read_le<std::uint64_t>(is);
  if (n > (1ull << 34)) throw FormatError("vector length too large");
  std::vector<T> v(n);
  for (auto& x : v) x = read_scalar<T>(is);
  return v;
}

// Reads a value stored in `stored` precision and converts it to T.
template <class T>
T read_scalar_as(std::istream& is, DType stored) {
  return stored == DType::f32 ? static_cast<T>(read_f32(is)) : static_cast<T>(read_f64(is));
}

template <class T>
std::vector<T> read_vector_as(std::istream& is, DType stored) {
  const auto n = read_le<std::uint64_t>(is);
  if (n > (1ull << 34)) throw FormatError("vector length too large");
  std::vector<T> v(n);
  for (auto& x : v) x = read_scalar_as<T>(is, stored);
  return v;
}

}  // namespace io

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("NTSR", 4);
  io::write_le<std::uint32_t>(os, kTensorFormatVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dtype_of<T>()));
  const Shape& s = t.shape();
  for (std::uint64_t d : {s.n, s.c, s.h, s.w}) io::write_le<std::uint64_t>(os, d);
  for (T x : t.data()) io::write_scalar<T>(os, x);
}

// Reads a tensor stored in either dtype and converts it to T.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
  io::expect_magic(is, "NTSR");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  }
  const auto dtype = static_cast<DType>(io::read_le<std::uint32_t>(is));
  if (dtype != DType::f32 && dtype != DType::f64) throw FormatError("unknown tensor dtype code");
  Shape s;
  s.n = io::read_le<std::uint64_t>(is);
  s.c = io::read_le<std::uint64_t>(is);
  s.h = io::read_le<std::uint64_t>(is);
  s.w = io::read_le<std::uint64_t>(is);
  if (s.numel() > (1ull << 32)) throw FormatError("tensor too large: " + s.str());
  std::vector<T> v(s.numel());
  for (auto& x : v) {
    x = dtype == DType::f32 ? static_cast<T>(io::read_f32(is)) : static_cast<T>(io::read_f64(is));
  }
  return Tensor<T>(s, std::move(v));
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  write_tensor(os, t);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  return read_tensor<T>(is);
}

}  // namespace cfcg

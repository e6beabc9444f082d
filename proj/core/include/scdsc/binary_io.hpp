#pragma once

// Little-endian array encoding shared by the file formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <type_traits>
#include <vector>

#include "scdsc/errors.hpp"

namespace scdsc::io {

template <typename T>
concept LittleEndianScalar = std::is_arithmetic_v<T> && (sizeof(T) == 2 || sizeof(T) == 4 || sizeof(T) == 8);

namespace detail {
template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out |= ((v >> (8 * i)) & 0xFF) << (8 * (sizeof(U) - 1 - i));
    return out;
  }
}

template <std::size_t N>
using UintOf = std::conditional_t<N == 2, std::uint16_t, std::conditional_t<N == 4, std::uint32_t, std::uint64_t>>;
}  // namespace detail

template <LittleEndianScalar T>
void write_array(std::ostream& out, std::span<const T> values) {
  using U = detail::UintOf<sizeof(T)>;
  std::vector<char> buffer(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const U raw = detail::to_le(std::bit_cast<U>(values[i]));
    std::memcpy(buffer.data() + i * sizeof(T), &raw, sizeof(T));
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw IoError("write failed");
}

/// Reads exactly `count` values; returns false if the stream ends early.
template <LittleEndianScalar T>
bool read_array(std::istream& in, std::size_t count, std::vector<T>& values) {
  using U = detail::UintOf<sizeof(T)>;
  std::vector<char> buffer(count * sizeof(T));
  in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (static_cast<std::size_t>(in.gcount()) != buffer.size()) return false;
  values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    U raw;
    std::memcpy(&raw, buffer.data() + i * sizeof(T), sizeof(T));
    values[i] = std::bit_cast<T>(detail::to_le(raw));
  }
  return true;
}

/// Whole-file helpers for headerless columns (labels.u16, partition.i32).
template <LittleEndianScalar T>
void write_column(const std::filesystem::path& path, std::span<const T> values);

template <LittleEndianScalar T>
std::vector<T> read_column(const std::filesystem::path& path);

}  // namespace scdsc::io

#include <fstream>

namespace scdsc::io {

template <LittleEndianScalar T>
void write_column(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_array(out, values);
}

template <LittleEndianScalar T>
std::vector<T> read_column(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(T) != 0) throw IoError(path.string() + ": size is not a multiple of " + std::to_string(sizeof(T)));
  in.seekg(0);
  std::vector<T> values;
  if (!read_array(in, bytes / sizeof(T), values)) throw IoError(path.string() + ": short read");
  return values;
}

}  // namespace scdsc::io

#pragma once

#include "bardip/common.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

namespace bardip::io {

static_assert(std::endian::native == std::endian::little, "containers are written in host order");

inline constexpr std::uint32_t kContainerVersion = 1;

/// Sequential little-endian writer for the MRF* binary containers. Every
/// container starts with a four-byte magic and a u32 version.
class BinaryWriter {
public:
  BinaryWriter(const std::filesystem::path& path, std::string_view magic);

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
  void complexes(std::span<const Complex> v) { raw(v.data(), v.size_bytes()); }
  void string(std::string_view s);
  void close();

private:
  void raw(const void* data, std::size_t bytes);

  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
public:
  BinaryReader(const std::filesystem::path& path, std::string_view magic);

  std::uint32_t version() const { return version_; }
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> v) { raw(v.data(), v.size_bytes()); }
  void complexes(std::span<Complex> v) { raw(v.data(), v.size_bytes()); }
  std::string string();
  /// Throws if bytes remain after the expected payload.
  void expect_end();

private:
  void raw(void* data, std::size_t bytes);

  std::filesystem::path path_;
  std::ifstream in_;
  std::uint32_t version_ = 0;
};

} // namespace bardip::io

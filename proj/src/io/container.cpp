#include "bardip/io/container.hpp"

#include <fmt/format.h>

namespace bardip::io {

BinaryWriter::BinaryWriter(const std::filesystem::path& path, std::string_view magic)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  if (magic.size() != 4) {
    throw std::invalid_argument("container magic must be four bytes");
  }
  raw(magic.data(), 4);
  u32(kContainerVersion);
}

void BinaryWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void BinaryWriter::raw(const void* data, std::size_t bytes) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out_) {
    throw FormatError("write failed on " + path_.string());
  }
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) {
    throw FormatError("close failed on " + path_.string());
  }
}

BinaryReader::BinaryReader(const std::filesystem::path& path, std::string_view magic)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) {
    throw FormatError("cannot open " + path.string());
  }
  std::array<char, 4> m{};
  raw(m.data(), 4);
  if (std::string_view(m.data(), 4) != magic) {
    throw FormatError(fmt::format("{}: expected magic {}", path.string(), magic));
  }
  version_ = u32();
  if (version_ != kContainerVersion) {
    throw FormatError(fmt::format("{}: unsupported version {}", path.string(), version_));
  }
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v = 0;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v = 0;
  raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v = 0;
  raw(&v, sizeof v);
  return v;
}

std::string BinaryReader::string() {
  const auto n = u32();
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

void BinaryReader::expect_end() {
  if (in_.peek() != std::ifstream::traits_type::eof()) {
    throw FormatError(path_.string() + ": trailing bytes after payload");
  }
}

void BinaryReader::raw(void* data, std::size_t bytes) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!in_) {
    throw FormatError(path_.string() + ": truncated container");
  }
}

} // namespace bardip::io

// SPDX-License-Identifier: Apache-2.0
#include "ta2n/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "ta2n/error.hpp"

namespace ta2n::io {

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  require(fs::is_directory(parent), ErrorCode::kIo, "output directory does not exist: " + parent.string());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      fail(ErrorCode::kIo, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::kIo, "cannot rename into " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

std::string_view ByteReader::bytes(std::size_t n) {
  require(n <= remaining(), ErrorCode::kTruncated,
          "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
  const auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

namespace {
template <typename T>
T read_le(ByteReader& r) {
  const auto raw = r.bytes(sizeof(T));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(raw[i])) << (8 * i);
  return v;
}
}  // namespace

std::uint16_t ByteReader::u16() { return read_le<std::uint16_t>(*this); }
std::uint32_t ByteReader::u32() { return read_le<std::uint32_t>(*this); }
std::uint64_t ByteReader::u64() { return read_le<std::uint64_t>(*this); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

}  // namespace ta2n::io

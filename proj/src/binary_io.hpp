#pragma once

// Little-endian primitives shared by the embedding and checkpoint formats.

#include "mian/io_error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mian::detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename UInt>
  void uint(UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return data_.size() - pos_; }

  void require(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw ParseError(pos_, std::string("truncated input while reading ") + what + " (need " +
                                 std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
    }
  }

  std::string bytes(std::size_t n, const char* what) {
    require(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  template <typename UInt>
  UInt uint(const char* what) {
    require(sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(UInt);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }

 private:
  std::span<const std::uint8_t> data_;
  std::uint64_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mian::detail

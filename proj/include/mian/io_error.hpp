#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mian {

/// Malformed binary input. `offset` is the byte position where decoding failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::uint64_t offset, const std::string& what)
      : std::runtime_error("parse error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace mian

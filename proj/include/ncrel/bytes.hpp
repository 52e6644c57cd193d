#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncrel {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

enum class DecodeReason {
  kTruncated,
  kBadChecksum,
  kUnknownType,
  kBadLength,
  kBadPadding,
  kMalformed,
};

inline const char* to_string(DecodeReason r) {
  switch (r) {
    case DecodeReason::kTruncated: return "truncated";
    case DecodeReason::kBadChecksum: return "bad_checksum";
    case DecodeReason::kUnknownType: return "unknown_type";
    case DecodeReason::kBadLength: return "bad_length";
    case DecodeReason::kBadPadding: return "bad_padding";
    case DecodeReason::kMalformed: return "malformed";
  }
  return "unknown";
}

/// Raised when received bytes cannot be interpreted. Callers on the data
/// path catch it, count the reason and drop the packet.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeReason reason, const std::string& what)
      : std::runtime_error(what), reason_(reason) {}
  DecodeReason reason() const noexcept { return reason_; }

 private:
  DecodeReason reason_;
};

inline std::uint16_t load_be16(ByteView b, std::size_t off) {
  return static_cast<std::uint16_t>((b[off] << 8) | b[off + 1]);
}

inline void store_be16(std::span<std::uint8_t> b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v >> 8);
  b[off + 1] = static_cast<std::uint8_t>(v & 0xFF);
}

inline std::uint32_t load_be32(ByteView b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void store_be32(std::span<std::uint8_t> b, std::size_t off, std::uint32_t v) {
  b[off] = static_cast<std::uint8_t>(v >> 24);
  b[off + 1] = static_cast<std::uint8_t>(v >> 16);
  b[off + 2] = static_cast<std::uint8_t>(v >> 8);
  b[off + 3] = static_cast<std::uint8_t>(v);
}

}  // namespace ncrel

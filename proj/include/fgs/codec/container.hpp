#pragma once

// Truncatable bitstream container.
//
//   header (16 bytes): "FGS1" | u8 version | u8 flags | u16 width | u16 height
//                      | u16 c1 | u16 c2 | u16 hyper_channels
//   table:  u32 len_z_b | u32 len_l_b | u32 len_z_s
//           | N x (i16 symbol_min | i16 symbol_max | u32 length)
//   payloads in table order.
//
// Integers are big-endian; N = c2, or 2 * c2 when flags bit 0 (half-channel
// units) is set. The three mandatory payloads start with their own i16 min
// and i16 max before the range-coded bytes. A unit length of 0 marks a
// segment removed by truncation; coded segments are never shorter than
// five bytes.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fgs::codec {

inline constexpr std::uint8_t kContainerVersion = 1;
inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::uint8_t kFlagHalfChannel = 0x01;

struct StreamHeader {
  std::uint8_t version = kContainerVersion;
  std::uint8_t flags = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint16_t c1 = 0;
  std::uint16_t c2 = 0;
  std::uint16_t hyper_channels = 0;

  bool half_channel() const { return (flags & kFlagHalfChannel) != 0; }
  int unit_count() const { return half_channel() ? 2 * c2 : c2; }
  bool operator==(const StreamHeader&) const = default;
};

struct UnitEntry {
  std::int16_t symbol_min = 0;
  std::int16_t symbol_max = 0;
  std::uint32_t length = 0;
};

struct SegmentTable {
  std::uint32_t len_z_b = 0;
  std::uint32_t len_l_b = 0;
  std::uint32_t len_z_s = 0;
  std::vector<UnitEntry> units;
};

// A parsed (possibly truncated or cut) container. Payload spans view the
// caller's buffer.
struct ParsedContainer {
  StreamHeader header;
  SegmentTable table;
  std::size_t payload_offset = 0;  // header + table
  std::span<const std::uint8_t> z_b, l_b, z_s;
  // Units whose declared bytes are fully present, in order, stopping at the
  // first dropped (length 0) or incomplete one.
  std::vector<std::span<const std::uint8_t>> units;
  int declared_units = 0;  // entries with non-zero length
  std::size_t payload_bytes = 0;  // bytes after the table
  std::size_t mandatory_end = 0;  // offset where unit payloads begin

  // Offset just after the first `k` present units.
  std::size_t unit_end(int k) const;
};

std::size_t table_bytes(int units);

std::vector<std::uint8_t> write_container(const StreamHeader& header,
                                          const SegmentTable& table,
                                          std::span<const std::uint8_t> payload);

// Throws FormatError for a bad magic/version, a short header or table, or a
// mandatory segment that is not fully present (naming the segment).
ParsedContainer parse_container(std::span<const std::uint8_t> bytes);

}  // namespace fgs::codec

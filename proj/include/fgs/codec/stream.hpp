#pragma once

// Whole-image encode/decode over the container, and byte-level truncation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fgs/codec/container.hpp"
#include "fgs/codec/kernel_protocol.hpp"
#include "fgs/fgs_model.hpp"
#include "fgs/image.hpp"

namespace fgs::codec {

struct EncodeOptions {
  bool half_channel = false;
};

// One forward pass, then segments z_b, l_b, z_s and one independently
// flushed segment per scalable unit. `backend` defaults to the reference
// coder.
std::vector<std::uint8_t> encode_stream(const Image& image, const FgsModel& model,
                                        const EncodeOptions& options = {},
                                        CoderBackend* backend = nullptr);

struct DecodeResult {
  Image image;
  int units_decoded = 0;
  LatentPack pack;  // l_s_hat holds zeros beyond the decoded units
};

// Decodes every complete unit present (at most `max_units` when >= 0),
// zero-filling the rest.
DecodeResult decode_stream(std::span<const std::uint8_t> bytes, const FgsModel& model,
                           int max_units = -1, CoderBackend* backend = nullptr);

// Size of header, table and mandatory segments.
std::size_t mandatory_prefix_bytes(std::span<const std::uint8_t> bytes);

// Keeps exactly `units` units. Throws RangeError if fewer are present.
std::vector<std::uint8_t> truncate_to_units(std::span<const std::uint8_t> bytes, int units);

// Longest unit prefix whose output fits in `budget` bytes. Throws RangeError
// listing the minimum when the budget is below the mandatory prefix.
std::vector<std::uint8_t> truncate_to_budget(std::span<const std::uint8_t> bytes,
                                             std::size_t budget);

struct UnitInfo {
  int index = 0;
  std::uint32_t length = 0;
  std::int16_t symbol_min = 0;
  std::int16_t symbol_max = 0;
  bool present = false;
  double bpp = 0.0;  // length * 8 / pixels
};

struct TruncationPoint {
  int units = 0;
  std::size_t byte_offset = 0;
};

struct StreamReport {
  StreamHeader header;
  std::size_t total_bytes = 0;
  std::size_t header_and_table_bytes = 0;
  std::uint32_t len_z_b = 0, len_l_b = 0, len_z_s = 0;
  std::vector<UnitInfo> units;
  int declared_units = 0;
  int present_units = 0;
  double base_bpp = 0.0;      // header, table and mandatory segments
  double scalable_bpp = 0.0;  // sum over present units
  std::vector<TruncationPoint> truncation_points;

  std::string text() const;
};

StreamReport inspect_stream(std::span<const std::uint8_t> bytes);

}  // namespace fgs::codec

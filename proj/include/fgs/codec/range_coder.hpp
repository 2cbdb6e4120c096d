#pragma once

// 32-bit range coder over 16-bit quantized CDF tables.
//
// The byte format is normative: the encoder keeps a 64-bit low (carry in
// bit 32) and a 32-bit range, narrows with r = range >> 16, renormalizes
// while range < 2^24 by shifting out the top byte of low with carry
// propagation, and flushes with five byte shifts. A segment with no symbols
// encodes to five zero bytes.

#include <cstdint>
#include <span>
#include <vector>

namespace fgs::codec {

inline constexpr int kCdfBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfBits;

// Cumulative frequencies for symbols lo..hi; cum has (hi - lo + 2) entries,
// cum[0] = 0, cum.back() = kCdfTotal, strictly increasing.
struct CdfTable {
  int lo = 0;
  int hi = 0;
  std::vector<std::uint32_t> cum;

  int size() const { return hi - lo + 1; }
  std::uint32_t start(int symbol) const { return cum[symbol - lo]; }
  std::uint32_t freq(int symbol) const { return cum[symbol - lo + 1] - cum[symbol - lo]; }
  // Throws FormatError when the invariants above do not hold.
  void check() const;
  bool operator==(const CdfTable&) const = default;
};

// Renormalizes non-negative bin masses to kCdfTotal with every bin >= 1.
// Bins are rounded to nearest, empty bins raised to 1, and the difference
// settled on the largest bin. All-zero masses give a uniform table.
CdfTable cdf_from_masses(int lo, std::span<const double> masses);

// Unit-bin Gaussian masses over [lo, hi].
CdfTable build_cdf(double mu, double sigma, int lo, int hi);

// Table from explicit frequencies (each >= 1, summing to kCdfTotal).
CdfTable cdf_from_freqs(int lo, std::span<const std::uint32_t> freqs);

class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t freq);
  void encode(const CdfTable& table, int symbol);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  // Throws FormatError if the data is shorter than the five-byte preamble.
  explicit RangeDecoder(std::span<const std::uint8_t> data);
  // Throws FormatError on data that cannot come from the encoder.
  int decode(const CdfTable& table);

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

// One independently flushed segment: symbol i is coded with
// tables[table_index[i]].
struct CodingJob {
  std::vector<CdfTable> tables;
  std::vector<std::uint32_t> table_index;
  std::vector<std::int16_t> symbols;
};

// Throws RangeError when a symbol lies outside its table.
std::vector<std::uint8_t> rc_encode(const CodingJob& job);
// Decodes job.table_index.size() symbols; job.symbols is ignored.
std::vector<std::int16_t> rc_decode(std::span<const std::uint8_t> bytes,
                                    const CodingJob& job);

}  // namespace fgs::codec

#include "fgs/codec/range_coder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fgs/autodiff.hpp"
#include "fgs/error.hpp"

namespace fgs::codec {
namespace {

constexpr std::uint32_t kTop = 1u << 24;

}  // namespace

void CdfTable::check() const {
  if (lo > hi) throw FormatError("cdf table has lo > hi");
  if (cum.size() != static_cast<std::size_t>(size()) + 1) {
    throw FormatError("cdf table has " + std::to_string(cum.size()) +
                      " entries for " + std::to_string(size()) + " symbols");
  }
  if (cum.front() != 0 || cum.back() != kCdfTotal) {
    throw FormatError("cdf table does not span [0, 65536]");
  }
  for (std::size_t i = 1; i < cum.size(); ++i) {
    if (cum[i] <= cum[i - 1]) throw FormatError("cdf table has an empty bin");
  }
}

CdfTable cdf_from_masses(int lo, std::span<const double> masses) {
  const std::size_t n = masses.size();
  if (n == 0) throw RangeError("cdf needs at least one symbol");
  if (n > kCdfTotal) throw RangeError("cdf symbol range exceeds 65536");
  double total = 0.0;
  for (double m : masses) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw RangeError("cdf masses must be finite and >= 0");
    total += m;
  }

  std::vector<std::int64_t> freq(n);
  if (total <= 0.0) {
    for (std::size_t i = 0; i < n; ++i) freq[i] = kCdfTotal / n + (i < kCdfTotal % n ? 1 : 0);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      freq[i] = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::llround(masses[i] / total * kCdfTotal)));
    }
    std::int64_t sum = 0;
    for (auto f : freq) sum += f;
    std::int64_t diff = static_cast<std::int64_t>(kCdfTotal) - sum;
    // Settle on the largest bin; repeat in the rare case it would drop below 1.
    while (diff != 0) {
      const auto largest = std::max_element(freq.begin(), freq.end()) - freq.begin();
      const std::int64_t take = std::max<std::int64_t>(diff, 1 - freq[largest]);
      freq[largest] += take;
      diff -= take;
    }
  }

  CdfTable t;
  t.lo = lo;
  t.hi = lo + static_cast<int>(n) - 1;
  t.cum.resize(n + 1);
  t.cum[0] = 0;
  for (std::size_t i = 0; i < n; ++i) t.cum[i + 1] = t.cum[i] + static_cast<std::uint32_t>(freq[i]);
  return t;
}

CdfTable build_cdf(double mu, double sigma, int lo, int hi) {
  if (lo > hi) {
    throw RangeError("build_cdf: lo " + std::to_string(lo) + " > hi " + std::to_string(hi));
  }
  if (!(sigma > 0.0)) throw RangeError("build_cdf: sigma must be positive");
  std::vector<double> masses(static_cast<std::size_t>(hi - lo + 1));
  for (int s = lo; s <= hi; ++s) masses[s - lo] = ad::gaussian_bin_mass(s, mu, sigma);
  return cdf_from_masses(lo, masses);
}

CdfTable cdf_from_freqs(int lo, std::span<const std::uint32_t> freqs) {
  CdfTable t;
  t.lo = lo;
  t.hi = lo + static_cast<int>(freqs.size()) - 1;
  t.cum.resize(freqs.size() + 1);
  t.cum[0] = 0;
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    acc += freqs[i];
    if (acc > kCdfTotal) throw FormatError("cdf frequencies exceed 65536");
    t.cum[i + 1] = static_cast<std::uint32_t>(acc);
  }
  t.check();
  return t;
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t freq) {
  const std::uint32_t r = range_ >> kCdfBits;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode(const CdfTable& table, int symbol) {
  if (symbol < table.lo || symbol > table.hi) {
    throw RangeError("symbol " + std::to_string(symbol) + " outside table [" +
                     std::to_string(table.lo) + ", " + std::to_string(table.hi) + "]");
  }
  encode(table.start(symbol), table.freq(symbol));
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
  if (data.size() < 5) throw FormatError("range-coded segment shorter than 5 bytes");
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= data_.size()) throw FormatError("range decoder ran past the segment end");
  return data_[pos_++];
}

int RangeDecoder::decode(const CdfTable& table) {
  const std::uint32_t r = range_ >> kCdfBits;
  const std::uint32_t value = code_ / r;
  if (value >= kCdfTotal) throw FormatError("corrupt range-coded data");
  const auto it = std::upper_bound(table.cum.begin(), table.cum.end(), value);
  const auto idx = static_cast<int>(it - table.cum.begin()) - 1;
  code_ -= r * table.cum[idx];
  range_ = r * (table.cum[idx + 1] - table.cum[idx]);
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return table.lo + idx;
}

std::vector<std::uint8_t> rc_encode(const CodingJob& job) {
  if (job.symbols.size() != job.table_index.size()) {
    throw ShapeError("rc_encode: symbol and table-index counts differ");
  }
  RangeEncoder enc;
  for (std::size_t i = 0; i < job.symbols.size(); ++i) {
    if (job.table_index[i] >= job.tables.size()) throw RangeError("rc_encode: bad table index");
    enc.encode(job.tables[job.table_index[i]], job.symbols[i]);
  }
  return enc.finish();
}

std::vector<std::int16_t> rc_decode(std::span<const std::uint8_t> bytes,
                                    const CodingJob& job) {
  RangeDecoder dec(bytes);
  std::vector<std::int16_t> out;
  out.reserve(job.table_index.size());
  for (std::uint32_t idx : job.table_index) {
    if (idx >= job.tables.size()) throw RangeError("rc_decode: bad table index");
    out.push_back(static_cast<std::int16_t>(dec.decode(job.tables[idx])));
  }
  return out;
}

}  // namespace fgs::codec

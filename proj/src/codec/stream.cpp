#include "fgs/codec/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fgs/codec/bytes.hpp"
#include "fgs/error.hpp"

namespace fgs::codec {
namespace {

struct SymbolBounds {
  std::int16_t min = 0;
  std::int16_t max = 0;
};

std::int16_t to_symbol(double v) {
  if (!(std::abs(v) <= 32767.0)) {
    throw RangeError("latent value " + std::to_string(v) + " does not fit a 16-bit symbol");
  }
  return static_cast<std::int16_t>(v);
}

SymbolBounds bounds_of(const std::vector<std::int16_t>& symbols) {
  if (symbols.empty()) return {};
  const auto [lo, hi] = std::minmax_element(symbols.begin(), symbols.end());
  return {*lo, *hi};
}

// Element index range [begin, end) of unit u within its channel plane.
std::pair<std::size_t, std::size_t> unit_span(int u, bool half, std::size_t plane) {
  if (!half) return {0, plane};
  const std::size_t split = static_cast<std::size_t>(first_half_size(static_cast<int>(plane)));
  return u % 2 == 0 ? std::pair{std::size_t{0}, split} : std::pair{split, plane};
}

int unit_channel(int u, bool half) { return half ? u / 2 : u; }

// Per-channel tables of a factorized prior over [lo, hi].
CodingJob prior_job(const FactorizedPrior& prior, const SymbolBounds& b, const Shape& s) {
  CodingJob job;
  std::vector<double> masses(static_cast<std::size_t>(b.max - b.min + 1));
  for (int c = 0; c < s.c; ++c) {
    for (int v = b.min; v <= b.max; ++v) masses[v - b.min] = prior.bin_mass(c, v);
    job.tables.push_back(cdf_from_masses(b.min, masses));
  }
  const std::size_t plane = s.plane();
  job.table_index.resize(static_cast<std::size_t>(s.c) * plane);
  for (int c = 0; c < s.c; ++c) {
    std::fill_n(job.table_index.begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                static_cast<std::uint32_t>(c));
  }
  return job;
}

// One table per element in [begin, end) of the flattened params.
CodingJob gaussian_job(const EntropyParams& params, std::size_t begin, std::size_t end,
                       const SymbolBounds& b) {
  CodingJob job;
  job.tables.reserve(end - begin);
  job.table_index.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    job.tables.push_back(build_cdf(params.mu[i], params.sigma[i], b.min, b.max));
    job.table_index.push_back(static_cast<std::uint32_t>(i - begin));
  }
  return job;
}

std::vector<std::int16_t> symbols_of(const Tensor& t, std::size_t begin, std::size_t end) {
  std::vector<std::int16_t> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(to_symbol(t[i]));
  return out;
}

// Mandatory payload: i16 min | i16 max | coded bytes.
std::vector<std::uint8_t> with_bounds(const SymbolBounds& b, const std::vector<std::uint8_t>& coded) {
  ByteWriter w;
  w.i16(b.min);
  w.i16(b.max);
  w.bytes(coded);
  return w.take();
}

std::pair<SymbolBounds, std::span<const std::uint8_t>> split_bounds(
    std::span<const std::uint8_t> payload, const char* name) {
  ByteReader r(payload, std::string("segment ") + name);
  SymbolBounds b{r.i16(), r.i16()};
  if (b.min > b.max) throw FormatError(std::string("segment ") + name + " has min > max");
  return {b, payload.subspan(4)};
}

void check_model(const StreamHeader& h, const ModelConfig& cfg) {
  if (h.c1 != cfg.c1 || h.c2 != cfg.c2 || h.hyper_channels != cfg.hyper_channels) {
    throw FormatError("stream was written for c1=" + std::to_string(h.c1) +
                      " c2=" + std::to_string(h.c2) + " hyper=" +
                      std::to_string(h.hyper_channels) + ", model has c1=" +
                      std::to_string(cfg.c1) + " c2=" + std::to_string(cfg.c2) +
                      " hyper=" + std::to_string(cfg.hyper_channels));
  }
  if (h.width % cfg.downsample != 0 || h.height % cfg.downsample != 0) {
    throw FormatError("stream dimensions are not multiples of the model downsampling");
  }
}

Tensor decode_into(CoderBackend& backend, std::span<const std::uint8_t> bytes,
                   const CodingJob& job, const Shape& shape, const char* name) {
  std::vector<std::int16_t> symbols;
  try {
    symbols = backend.decode(bytes, job);
  } catch (const FormatError& e) {
    throw FormatError(std::string("segment ") + name + ": " + e.what());
  }
  Tensor t(shape);
  for (std::size_t i = 0; i < symbols.size(); ++i) t[i] = symbols[i];
  return t;
}

std::vector<std::uint8_t> rebuild(std::span<const std::uint8_t> bytes,
                                  const ParsedContainer& p, int units) {
  SegmentTable table = p.table;
  for (int u = units; u < static_cast<int>(table.units.size()); ++u) table.units[u].length = 0;
  const std::size_t end = p.unit_end(units);
  return write_container(p.header, table, bytes.subspan(p.payload_offset, end - p.payload_offset));
}

}  // namespace

std::vector<std::uint8_t> encode_stream(const Image& image, const FgsModel& model,
                                        const EncodeOptions& options, CoderBackend* backend) {
  const ModelConfig& cfg = model.config();
  if (image.height() % cfg.downsample != 0 || image.width() % cfg.downsample != 0) {
    throw ShapeError("image " + std::to_string(image.width()) + "x" +
                     std::to_string(image.height()) + " is not a multiple of " +
                     std::to_string(cfg.downsample));
  }
  if (image.height() > 0xFFFF || image.width() > 0xFFFF) {
    throw ShapeError("image dimensions exceed 65535");
  }
  ReferenceBackend reference;
  CoderBackend& coder = backend ? *backend : reference;

  const Analysis a = model.analyze(image);
  const LatentPack& pack = a.pack;

  StreamHeader header;
  header.flags = options.half_channel ? kFlagHalfChannel : 0;
  header.width = static_cast<std::uint16_t>(image.width());
  header.height = static_cast<std::uint16_t>(image.height());
  header.c1 = static_cast<std::uint16_t>(cfg.c1);
  header.c2 = static_cast<std::uint16_t>(cfg.c2);
  header.hyper_channels = static_cast<std::uint16_t>(cfg.hyper_channels);

  SegmentTable table;
  std::vector<std::uint8_t> payload;

  auto code_prior = [&](const Tensor& z, const FactorizedPrior& prior) {
    CodingJob job;
    job.symbols = symbols_of(z, 0, z.size());
    const SymbolBounds b = bounds_of(job.symbols);
    CodingJob tables = prior_job(prior, b, z.shape());
    tables.symbols = std::move(job.symbols);
    return with_bounds(b, coder.encode(tables));
  };
  auto code_gaussian = [&](const Tensor& l, const EntropyParams& params) {
    std::vector<std::int16_t> symbols = symbols_of(l, 0, l.size());
    const SymbolBounds b = bounds_of(symbols);
    CodingJob job = gaussian_job(params, 0, l.size(), b);
    job.symbols = std::move(symbols);
    return with_bounds(b, coder.encode(job));
  };

  const auto seg_zb = code_prior(pack.z_b_hat, model.entropy().prior_basic());
  const auto seg_lb = code_gaussian(pack.l_b_hat, a.params_b);
  const auto seg_zs = code_prior(pack.z_s_hat, model.entropy().prior_scalable());
  table.len_z_b = static_cast<std::uint32_t>(seg_zb.size());
  table.len_l_b = static_cast<std::uint32_t>(seg_lb.size());
  table.len_z_s = static_cast<std::uint32_t>(seg_zs.size());
  for (const auto* seg : {&seg_zb, &seg_lb, &seg_zs}) {
    payload.insert(payload.end(), seg->begin(), seg->end());
  }

  const std::size_t plane = pack.l_s_hat.shape().plane();
  const bool half = options.half_channel;
  for (int u = 0; u < header.unit_count(); ++u) {
    const int c = unit_channel(u, half);
    const auto [b0, b1] = unit_span(u, half, plane);
    const std::size_t begin = static_cast<std::size_t>(c) * plane + b0;
    const std::size_t end = static_cast<std::size_t>(c) * plane + b1;
    std::vector<std::int16_t> symbols = symbols_of(pack.l_s_hat, begin, end);
    const SymbolBounds b = bounds_of(symbols);
    CodingJob job = gaussian_job(a.params_s, begin, end, b);
    job.symbols = std::move(symbols);
    const auto coded = coder.encode(job);
    table.units.push_back({b.min, b.max, static_cast<std::uint32_t>(coded.size())});
    payload.insert(payload.end(), coded.begin(), coded.end());
  }
  return write_container(header, table, payload);
}

DecodeResult decode_stream(std::span<const std::uint8_t> bytes, const FgsModel& model,
                           int max_units, CoderBackend* backend) {
  const ParsedContainer p = parse_container(bytes);
  const ModelConfig& cfg = model.config();
  check_model(p.header, cfg);
  ReferenceBackend reference;
  CoderBackend& coder = backend ? *backend : reference;

  const int h = p.header.height / cfg.downsample;
  const int w = p.header.width / cfg.downsample;
  const int zh = (((h + 1) / 2) + 1) / 2;
  const int zw = (((w + 1) / 2) + 1) / 2;
  const Shape z_shape{1, cfg.hyper_channels, zh, zw};

  DecodeResult out;
  LatentPack& pack = out.pack;
  {
    auto [b, coded] = split_bounds(p.z_b, "z_b");
    pack.z_b_hat = decode_into(coder, coded, prior_job(model.entropy().prior_basic(), b, z_shape),
                               z_shape, "z_b");
  }
  const EntropyParams params_b = model.base_params(pack.z_b_hat, h, w);
  {
    auto [b, coded] = split_bounds(p.l_b, "l_b");
    const Shape s{1, cfg.c1, h, w};
    pack.l_b_hat = decode_into(coder, coded, gaussian_job(params_b, 0, s.numel(), b), s, "l_b");
  }
  {
    auto [b, coded] = split_bounds(p.z_s, "z_s");
    pack.z_s_hat = decode_into(coder, coded,
                               prior_job(model.entropy().prior_scalable(), b, z_shape),
                               z_shape, "z_s");
  }
  const EntropyParams params_s = model.scalable_params(pack.z_s_hat, pack.l_b_hat);

  pack.l_s_hat = Tensor(Shape{1, cfg.c2, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const bool half = p.header.half_channel();
  int units = static_cast<int>(p.units.size());
  if (max_units >= 0) units = std::min(units, max_units);
  for (int u = 0; u < units; ++u) {
    const UnitEntry& e = p.table.units[u];
    const int c = unit_channel(u, half);
    const auto [b0, b1] = unit_span(u, half, plane);
    const std::size_t begin = static_cast<std::size_t>(c) * plane + b0;
    const std::size_t end = static_cast<std::size_t>(c) * plane + b1;
    const CodingJob job = gaussian_job(params_s, begin, end, {e.symbol_min, e.symbol_max});
    std::vector<std::int16_t> symbols;
    try {
      symbols = coder.decode(p.units[u], job);
    } catch (const FormatError& err) {
      throw FormatError("scalable segment " + std::to_string(u) + ": " + err.what());
    }
    for (std::size_t i = 0; i < symbols.size(); ++i) pack.l_s_hat[begin + i] = symbols[i];
  }
  out.units_decoded = units;
  out.image = model.reconstruct(pack.l_b_hat, pack.l_s_hat);
  return out;
}

std::size_t mandatory_prefix_bytes(std::span<const std::uint8_t> bytes) {
  return parse_container(bytes).mandatory_end;
}

std::vector<std::uint8_t> truncate_to_units(std::span<const std::uint8_t> bytes, int units) {
  const ParsedContainer p = parse_container(bytes);
  if (units < 0 || units > static_cast<int>(p.units.size())) {
    throw RangeError("cannot keep " + std::to_string(units) + " units; stream has " +
                     std::to_string(p.units.size()) + " complete units");
  }
  return rebuild(bytes, p, units);
}

std::vector<std::uint8_t> truncate_to_budget(std::span<const std::uint8_t> bytes,
                                             std::size_t budget) {
  const ParsedContainer p = parse_container(bytes);
  if (budget < p.mandatory_end) {
    throw RangeError("budget of " + std::to_string(budget) +
                     " bytes is below the mandatory prefix of " +
                     std::to_string(p.mandatory_end) + " bytes");
  }
  int units = 0;
  std::size_t end = p.mandatory_end;
  while (units < static_cast<int>(p.units.size()) && end + p.units[units].size() <= budget) {
    end += p.units[units].size();
    ++units;
  }
  return rebuild(bytes, p, units);
}

StreamReport inspect_stream(std::span<const std::uint8_t> bytes) {
  const ParsedContainer p = parse_container(bytes);
  StreamReport r;
  r.header = p.header;
  r.total_bytes = bytes.size();
  r.header_and_table_bytes = p.payload_offset;
  r.len_z_b = p.table.len_z_b;
  r.len_l_b = p.table.len_l_b;
  r.len_z_s = p.table.len_z_s;
  r.declared_units = p.declared_units;
  r.present_units = static_cast<int>(p.units.size());
  const double pixels = static_cast<double>(p.header.width) * p.header.height;
  r.base_bpp = static_cast<double>(p.mandatory_end) * 8.0 / pixels;
  std::size_t offset = p.mandatory_end;
  r.truncation_points.push_back({0, offset});
  for (int u = 0; u < static_cast<int>(p.table.units.size()); ++u) {
    const UnitEntry& e = p.table.units[u];
    UnitInfo info;
    info.index = u;
    info.length = e.length;
    info.symbol_min = e.symbol_min;
    info.symbol_max = e.symbol_max;
    info.present = u < r.present_units;
    info.bpp = e.length * 8.0 / pixels;
    if (info.present) {
      r.scalable_bpp += info.bpp;
      offset += e.length;
      r.truncation_points.push_back({u + 1, offset});
    }
    r.units.push_back(info);
  }
  return r;
}

std::string StreamReport::text() const {
  std::ostringstream os;
  os << "FGS1 v" << int(header.version) << "  " << header.width << "x" << header.height
     << "  c1=" << header.c1 << " c2=" << header.c2 << " hyper=" << header.hyper_channels
     << "  units=" << (header.half_channel() ? "half-channel" : "channel") << "\n";
  os << "total " << total_bytes << " bytes (header+table " << header_and_table_bytes << ")\n";
  os << "mandatory: z_b " << len_z_b << "  l_b " << len_l_b << "  z_s " << len_z_s
     << " bytes  (" << base_bpp << " bpp)\n";
  os << "scalable units: " << present_units << " present of " << header.unit_count()
     << " (" << declared_units << " declared), " << scalable_bpp << " bpp\n";
  os << "unit  bytes  min  max  bpp  status\n";
  for (const auto& u : units) {
    os << u.index << "  " << u.length << "  " << u.symbol_min << "  " << u.symbol_max << "  "
       << u.bpp << "  " << (u.present ? "present" : (u.length ? "missing" : "dropped")) << "\n";
  }
  os << "truncation points (units:offset):";
  for (const auto& t : truncation_points) os << " " << t.units << ":" << t.byte_offset;
  os << "\n";
  return os.str();
}

}  // namespace fgs::codec

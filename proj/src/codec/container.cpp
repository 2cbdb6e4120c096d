#include "fgs/codec/container.hpp"

#include <algorithm>

#include "fgs/codec/bytes.hpp"
#include "fgs/error.hpp"

namespace fgs::codec {
namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'G', 'S', '1'};

}  // namespace

std::size_t table_bytes(int units) { return 12 + 8 * static_cast<std::size_t>(units); }

std::size_t ParsedContainer::unit_end(int k) const {
  std::size_t end = mandatory_end;
  for (int i = 0; i < k; ++i) end += units.at(i).size();
  return end;
}

std::vector<std::uint8_t> write_container(const StreamHeader& header,
                                          const SegmentTable& table,
                                          std::span<const std::uint8_t> payload) {
  if (static_cast<int>(table.units.size()) != header.unit_count()) {
    throw FormatError("segment table has " + std::to_string(table.units.size()) +
                      " units, header implies " + std::to_string(header.unit_count()));
  }
  ByteWriter w;
  w.bytes(kMagic);
  w.u8(header.version);
  w.u8(header.flags);
  w.u16(header.width);
  w.u16(header.height);
  w.u16(header.c1);
  w.u16(header.c2);
  w.u16(header.hyper_channels);
  w.u32(table.len_z_b);
  w.u32(table.len_l_b);
  w.u32(table.len_z_s);
  for (const auto& u : table.units) {
    w.i16(u.symbol_min);
    w.i16(u.symbol_max);
    w.u32(u.length);
  }
  w.bytes(payload);
  return w.take();
}

ParsedContainer parse_container(std::span<const std::uint8_t> bytes) {
  ParsedContainer p;
  ByteReader r(bytes, "container header");
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw FormatError("bad magic: not an FGS1 stream");
  }
  p.header.version = r.u8();
  if (p.header.version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(p.header.version));
  }
  p.header.flags = r.u8();
  if ((p.header.flags & ~kFlagHalfChannel) != 0) {
    throw FormatError("unknown container flags " + std::to_string(p.header.flags));
  }
  p.header.width = r.u16();
  p.header.height = r.u16();
  p.header.c1 = r.u16();
  p.header.c2 = r.u16();
  p.header.hyper_channels = r.u16();
  if (p.header.width == 0 || p.header.height == 0 || p.header.c1 == 0 || p.header.c2 == 0 ||
      p.header.hyper_channels == 0) {
    throw FormatError("container header has a zero dimension");
  }

  ByteReader t(bytes.subspan(kHeaderBytes), "segment table");
  p.table.len_z_b = t.u32();
  p.table.len_l_b = t.u32();
  p.table.len_z_s = t.u32();
  const int n = p.header.unit_count();
  p.table.units.resize(n);
  for (auto& u : p.table.units) {
    u.symbol_min = t.i16();
    u.symbol_max = t.i16();
    u.length = t.u32();
    if (u.length > 0 && u.symbol_min > u.symbol_max) {
      throw FormatError("segment table entry has min > max");
    }
  }
  p.payload_offset = kHeaderBytes + table_bytes(n);
  p.payload_bytes = bytes.size() - p.payload_offset;

  std::size_t pos = p.payload_offset;
  auto take = [&](std::uint32_t len, const char* name) {
    if (bytes.size() - pos < len) {
      throw FormatError(std::string("mandatory segment ") + name + " is incomplete (" +
                        std::to_string(bytes.size() - pos) + " of " + std::to_string(len) +
                        " bytes present)");
    }
    auto s = bytes.subspan(pos, len);
    pos += len;
    return s;
  };
  p.z_b = take(p.table.len_z_b, "z_b");
  p.l_b = take(p.table.len_l_b, "l_b");
  p.z_s = take(p.table.len_z_s, "z_s");
  p.mandatory_end = pos;

  bool stopped = false;
  for (const auto& u : p.table.units) {
    if (u.length > 0) ++p.declared_units;
    if (stopped) continue;
    if (u.length == 0 || bytes.size() - pos < u.length) {
      stopped = true;
      continue;
    }
    p.units.push_back(bytes.subspan(pos, u.length));
    pos += u.length;
  }
  return p;
}

}  // namespace fgs::codec

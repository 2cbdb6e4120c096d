#include "fgs/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fgs/error.hpp"

namespace fgs {
namespace {

constexpr char kMagic[4] = {'F', 'G', 'S', 'A'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("archive truncated");
  return v;
}

}  // namespace

void Archive::save(const std::string& path) const {
  nlohmann::json header;
  header["kind"] = kind;
  header["meta"] = meta;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const Shape& s = t.shape();
    index.push_back({{"name", name},
                     {"shape", {s.n, s.c, s.h, s.w}},
                     {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw FormatError("write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw FormatError("cannot move archive into place at " + path);
  }
}

Archive Archive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + ": not an archive");
  }
  if (get<std::uint32_t>(in) != kVersion) {
    throw FormatError(path + ": unsupported archive version");
  }
  const auto len = get<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path + ": truncated header");

  Archive a;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad header: " + e.what());
  }
  a.kind = header.value("kind", "");
  a.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw FormatError(path + ": bad tensor shape");
    Shape s{dims[0], dims[1], dims[2], dims[3]};
    Tensor t(s);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw FormatError(path + ": truncated tensor data");
    a.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return a;
}

}  // namespace fgs

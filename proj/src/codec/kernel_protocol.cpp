#include "fgs/codec/kernel_protocol.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdlib>
#include <cstring>

#include "fgs/codec/bytes.hpp"

namespace fgs::codec {
namespace {

void write_tables(ByteWriter& w, const std::vector<CdfTable>& tables) {
  w.u32(static_cast<std::uint32_t>(tables.size()));
  for (const auto& t : tables) {
    w.i16(static_cast<std::int16_t>(t.lo));
    w.i16(static_cast<std::int16_t>(t.hi));
    for (int s = t.lo; s <= t.hi; ++s) w.u16(static_cast<std::uint16_t>(t.freq(s) - 1));
  }
}

std::vector<CdfTable> read_tables(ByteReader& r) {
  const std::uint32_t count = r.u32();
  std::vector<CdfTable> tables;
  tables.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    const int lo = r.i16();
    const int hi = r.i16();
    if (hi < lo) throw FormatError("table with hi < lo");
    std::vector<std::uint32_t> freqs(static_cast<std::size_t>(hi - lo + 1));
    for (auto& f : freqs) f = static_cast<std::uint32_t>(r.u16()) + 1;
    tables.push_back(cdf_from_freqs(lo, freqs));
  }
  return tables;
}

std::vector<std::uint32_t> read_indices(ByteReader& r, std::uint32_t n) {
  if (r.remaining() / 4 < n) throw FormatError("index array truncated");
  std::vector<std::uint32_t> idx(n);
  for (auto& v : idx) v = r.u32();
  return idx;
}

KernelResponse error_response(KernelStatus status, const std::string& msg) {
  KernelResponse resp;
  resp.status = status;
  resp.message = msg.substr(0, 0xFFFF);
  return resp;
}

bool read_exact(std::FILE* f, void* buf, std::size_t n) {
  return n == 0 || std::fread(buf, 1, n, f) == n;
}

void write_frame(std::FILE* f, const std::vector<std::uint8_t>& msg) {
  ByteWriter len;
  len.u32(static_cast<std::uint32_t>(msg.size()));
  if (std::fwrite(len.data().data(), 1, 4, f) != 4 ||
      std::fwrite(msg.data(), 1, msg.size(), f) != msg.size() || std::fflush(f) != 0) {
    throw Error("kernel pipe write failed");
  }
}

// Returns false on clean end of input.
bool read_frame(std::FILE* f, std::vector<std::uint8_t>& msg) {
  std::uint8_t len_bytes[4];
  const std::size_t got = std::fread(len_bytes, 1, 4, f);
  if (got == 0) return false;
  if (got != 4) throw Error("kernel pipe: truncated frame length");
  ByteReader r(len_bytes, "frame length");
  msg.resize(r.u32());
  if (!read_exact(f, msg.data(), msg.size())) throw Error("kernel pipe: truncated frame");
  return true;
}

}  // namespace

std::vector<std::uint8_t> serialize_request(const KernelRequest& req) {
  ByteWriter w;
  w.u8(kProtocolId);
  w.u8(static_cast<std::uint8_t>(req.op));
  switch (req.op) {
    case KernelOp::kEncode:
    case KernelOp::kDecode: {
      write_tables(w, req.job.tables);
      w.u32(static_cast<std::uint32_t>(req.job.table_index.size()));
      for (auto idx : req.job.table_index) w.u32(idx);
      if (req.op == KernelOp::kEncode) {
        if (req.job.symbols.size() != req.job.table_index.size()) {
          throw ShapeError("encode request: symbol and table-index counts differ");
        }
        for (auto s : req.job.symbols) w.i16(s);
      } else {
        w.u32(static_cast<std::uint32_t>(req.bytes.size()));
        w.bytes(req.bytes);
      }
      break;
    }
    case KernelOp::kBuildCdf:
      w.u32(static_cast<std::uint32_t>(req.cdf_specs.size()));
      for (const auto& s : req.cdf_specs) {
        w.f64(s.mu);
        w.f64(s.sigma);
        w.i16(s.lo);
        w.i16(s.hi);
      }
      break;
  }
  return w.take();
}

KernelRequest parse_request(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "kernel request");
  KernelRequest req;
  try {
    const std::uint8_t id = r.u8();
    if (id != kProtocolId) {
      throw KernelError(KernelStatus::kProtocolMismatch,
                        "protocol id " + std::to_string(id) + ", expected " +
                            std::to_string(kProtocolId));
    }
    const std::uint8_t op = r.u8();
    if (op > static_cast<std::uint8_t>(KernelOp::kBuildCdf)) {
      throw FormatError("unknown op " + std::to_string(op));
    }
    req.op = static_cast<KernelOp>(op);
    if (req.op == KernelOp::kBuildCdf) {
      const std::uint32_t n = r.u32();
      if (r.remaining() / 20 < n) throw FormatError("cdf spec array truncated");
      req.cdf_specs.resize(n);
      for (auto& s : req.cdf_specs) {
        s.mu = r.f64();
        s.sigma = r.f64();
        s.lo = r.i16();
        s.hi = r.i16();
      }
    } else {
      req.job.tables = read_tables(r);
      const std::uint32_t n = r.u32();
      req.job.table_index = read_indices(r, n);
      for (auto idx : req.job.table_index) {
        if (idx >= req.job.tables.size()) throw FormatError("table index out of range");
      }
      if (req.op == KernelOp::kEncode) {
        if (r.remaining() / 2 < n) throw FormatError("symbol array truncated");
        req.job.symbols.resize(n);
        for (auto& s : req.job.symbols) s = r.i16();
      } else {
        const std::uint32_t len = r.u32();
        const auto b = r.bytes(len);
        req.bytes.assign(b.begin(), b.end());
      }
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after request");
  } catch (const KernelError&) {
    throw;
  } catch (const Error& e) {
    throw KernelError(KernelStatus::kMalformed, e.what());
  }
  return req;
}

std::vector<std::uint8_t> serialize_response(const KernelResponse& resp, KernelOp op) {
  ByteWriter w;
  w.u8(kProtocolId);
  w.u8(static_cast<std::uint8_t>(resp.status));
  if (resp.status != KernelStatus::kOk) {
    const std::string msg = resp.message.substr(0, 0xFFFF);
    w.u16(static_cast<std::uint16_t>(msg.size()));
    w.bytes({reinterpret_cast<const std::uint8_t*>(msg.data()), msg.size()});
    return w.take();
  }
  switch (op) {
    case KernelOp::kEncode:
      w.u32(static_cast<std::uint32_t>(resp.bytes.size()));
      w.bytes(resp.bytes);
      break;
    case KernelOp::kDecode:
      w.u32(static_cast<std::uint32_t>(resp.symbols.size()));
      for (auto s : resp.symbols) w.i16(s);
      break;
    case KernelOp::kBuildCdf:
      write_tables(w, resp.tables);
      break;
  }
  return w.take();
}

KernelResponse parse_response(std::span<const std::uint8_t> bytes, KernelOp op) {
  ByteReader r(bytes, "kernel response");
  KernelResponse resp;
  const std::uint8_t id = r.u8();
  if (id != kProtocolId) {
    throw KernelError(KernelStatus::kProtocolMismatch,
                      "kernel answered with protocol id " + std::to_string(id));
  }
  const std::uint8_t status = r.u8();
  if (status > static_cast<std::uint8_t>(KernelStatus::kSymbolOutOfRange)) {
    throw KernelError(KernelStatus::kMalformed, "unknown kernel status " + std::to_string(status));
  }
  resp.status = static_cast<KernelStatus>(status);
  if (resp.status != KernelStatus::kOk) {
    const auto len = r.u16();
    const auto msg = r.bytes(len);
    resp.message.assign(msg.begin(), msg.end());
    return resp;
  }
  switch (op) {
    case KernelOp::kEncode: {
      const auto b = r.bytes(r.u32());
      resp.bytes.assign(b.begin(), b.end());
      break;
    }
    case KernelOp::kDecode: {
      const std::uint32_t n = r.u32();
      if (r.remaining() / 2 < n) throw FormatError("kernel response: symbols truncated");
      resp.symbols.resize(n);
      for (auto& s : resp.symbols) s = r.i16();
      break;
    }
    case KernelOp::kBuildCdf:
      resp.tables = read_tables(r);
      break;
  }
  if (r.remaining() != 0) throw FormatError("kernel response: trailing bytes");
  return resp;
}

KernelResponse handle_request(const KernelRequest& req) {
  KernelResponse resp;
  try {
    switch (req.op) {
      case KernelOp::kEncode:
        resp.bytes = rc_encode(req.job);
        break;
      case KernelOp::kDecode:
        resp.symbols = rc_decode(req.bytes, req.job);
        break;
      case KernelOp::kBuildCdf:
        for (const auto& s : req.cdf_specs) {
          resp.tables.push_back(build_cdf(s.mu, s.sigma, s.lo, s.hi));
        }
        break;
    }
  } catch (const RangeError& e) {
    return error_response(req.op == KernelOp::kEncode ? KernelStatus::kSymbolOutOfRange
                                                      : KernelStatus::kMalformed,
                          e.what());
  } catch (const Error& e) {
    return error_response(req.op == KernelOp::kDecode ? KernelStatus::kDecodeError
                                                      : KernelStatus::kMalformed,
                          e.what());
  }
  return resp;
}

std::vector<std::uint8_t> handle_request_bytes(std::span<const std::uint8_t> bytes) {
  try {
    const KernelRequest req = parse_request(bytes);
    return serialize_response(handle_request(req), req.op);
  } catch (const KernelError& e) {
    return serialize_response(error_response(e.status(), e.what()), KernelOp::kEncode);
  }
}

void serve_kernel(std::FILE* in, std::FILE* out) {
  std::vector<std::uint8_t> msg;
  while (read_frame(in, msg)) write_frame(out, handle_request_bytes(msg));
}

std::vector<std::uint8_t> ReferenceBackend::encode(const CodingJob& job) {
  return rc_encode(job);
}

std::vector<std::int16_t> ReferenceBackend::decode(std::span<const std::uint8_t> bytes,
                                                   const CodingJob& job) {
  return rc_decode(bytes, job);
}

SubprocessBackend::SubprocessBackend(const std::string& command) {
  int to_child[2];
  int from_child[2];
  if (pipe(to_child) != 0) throw Error("pipe failed");
  if (pipe(from_child) != 0) {
    close(to_child[0]);
    close(to_child[1]);
    throw Error("pipe failed");
  }
  // A dead kernel must surface as an error, not terminate the host.
  std::signal(SIGPIPE, SIG_IGN);
  pid_ = fork();
  if (pid_ < 0) throw Error("fork failed");
  if (pid_ == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);
  to_child_ = fdopen(to_child[1], "wb");
  from_child_ = fdopen(from_child[0], "rb");
  if (!to_child_ || !from_child_) throw Error("fdopen failed");
}

SubprocessBackend::~SubprocessBackend() {
  if (to_child_) std::fclose(to_child_);
  if (from_child_) std::fclose(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

KernelResponse SubprocessBackend::call(const KernelRequest& req) {
  write_frame(to_child_, serialize_request(req));
  std::vector<std::uint8_t> msg;
  if (!read_frame(from_child_, msg)) throw Error("kernel process closed its output");
  return parse_response(msg, req.op);
}

std::vector<std::uint8_t> SubprocessBackend::encode(const CodingJob& job) {
  KernelRequest req;
  req.op = KernelOp::kEncode;
  req.job = job;
  KernelResponse resp = call(req);
  if (resp.status != KernelStatus::kOk) throw KernelError(resp.status, resp.message);
  return std::move(resp.bytes);
}

std::vector<std::int16_t> SubprocessBackend::decode(std::span<const std::uint8_t> bytes,
                                                    const CodingJob& job) {
  KernelRequest req;
  req.op = KernelOp::kDecode;
  req.job.tables = job.tables;
  req.job.table_index = job.table_index;
  req.bytes.assign(bytes.begin(), bytes.end());
  KernelResponse resp = call(req);
  if (resp.status == KernelStatus::kDecodeError) throw FormatError(resp.message);
  if (resp.status != KernelStatus::kOk) throw KernelError(resp.status, resp.message);
  return std::move(resp.symbols);
}

std::unique_ptr<CoderBackend> make_coder_backend() {
  const char* coder = std::getenv("FGS_CODER");
  const std::string choice = coder ? coder : "reference";
  if (choice.empty() || choice == "reference") return std::make_unique<ReferenceBackend>();
  if (choice == "kernel") {
    const char* cmd = std::getenv("FGS_KERNEL_CMD");
    if (!cmd || !*cmd) throw Error("FGS_CODER=kernel requires FGS_KERNEL_CMD");
    return std::make_unique<SubprocessBackend>(cmd);
  }
  throw Error("FGS_CODER must be 'reference' or 'kernel', got '" + choice + "'");
}

}  // namespace fgs::codec

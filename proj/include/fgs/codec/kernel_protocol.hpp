#pragma once

// Binary request/response protocol shared with external coder kernels, and
// the backend abstraction the stream codec uses to run coding jobs.
//
// All integers are big-endian. A request is
//   u8 protocol id (1) | u8 op | op payload
// encode:    tables | u32 n | n x u32 table index | n x i16 symbol
// decode:    tables | u32 n | n x u32 table index | u32 len | len bytes
// build_cdf: u32 n | n x (f64 mu, f64 sigma, i16 lo, i16 hi)
// where tables = u32 count | per table: i16 lo, i16 hi, (hi-lo+1) x u16 (freq - 1).
// A response is
//   u8 protocol id | u8 status | payload
// with payload u32 len | bytes (encode), u32 n | n x i16 (decode), tables
// (build_cdf), or u16 len | message (any non-zero status).
//
// Over a pipe every message is framed by a u32 byte length.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fgs/codec/range_coder.hpp"
#include "fgs/error.hpp"

namespace fgs::codec {

inline constexpr std::uint8_t kProtocolId = 1;

enum class KernelOp : std::uint8_t { kEncode = 0, kDecode = 1, kBuildCdf = 2 };

enum class KernelStatus : std::uint8_t {
  kOk = 0,
  kProtocolMismatch = 1,
  kMalformed = 2,
  kDecodeError = 3,
  kSymbolOutOfRange = 4,
};

struct CdfSpec {
  double mu = 0;
  double sigma = 1;
  std::int16_t lo = 0;
  std::int16_t hi = 0;
};

struct KernelRequest {
  KernelOp op = KernelOp::kEncode;
  CodingJob job;                     // encode / decode
  std::vector<std::uint8_t> bytes;   // decode
  std::vector<CdfSpec> cdf_specs;    // build_cdf
};

struct KernelResponse {
  KernelStatus status = KernelStatus::kOk;
  std::vector<std::uint8_t> bytes;     // encode
  std::vector<std::int16_t> symbols;   // decode
  std::vector<CdfTable> tables;        // build_cdf
  std::string message;                 // non-ok status
};

class KernelError : public Error {
 public:
  KernelError(KernelStatus status, const std::string& what)
      : Error(what), status_(status) {}
  KernelStatus status() const { return status_; }

 private:
  KernelStatus status_;
};

std::vector<std::uint8_t> serialize_request(const KernelRequest& req);
// Throws KernelError (kProtocolMismatch or kMalformed).
KernelRequest parse_request(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_response(const KernelResponse& resp, KernelOp op);
KernelResponse parse_response(std::span<const std::uint8_t> bytes, KernelOp op);

// Executes a request with the reference coder; never throws, errors are
// reported through the status.
KernelResponse handle_request(const KernelRequest& req);
// Parses, executes and serializes one request.
std::vector<std::uint8_t> handle_request_bytes(std::span<const std::uint8_t> bytes);

// Reads framed requests from `in` and writes framed responses to `out`
// until end of input.
void serve_kernel(std::FILE* in, std::FILE* out);

class CoderBackend {
 public:
  virtual ~CoderBackend() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::uint8_t> encode(const CodingJob& job) = 0;
  virtual std::vector<std::int16_t> decode(std::span<const std::uint8_t> bytes,
                                           const CodingJob& job) = 0;
};

class ReferenceBackend : public CoderBackend {
 public:
  std::string name() const override { return "reference"; }
  std::vector<std::uint8_t> encode(const CodingJob& job) override;
  std::vector<std::int16_t> decode(std::span<const std::uint8_t> bytes,
                                   const CodingJob& job) override;
};

// Talks the framed protocol to a long-running child process started with
// /bin/sh -c `command`.
class SubprocessBackend : public CoderBackend {
 public:
  explicit SubprocessBackend(const std::string& command);
  ~SubprocessBackend() override;
  SubprocessBackend(const SubprocessBackend&) = delete;
  SubprocessBackend& operator=(const SubprocessBackend&) = delete;

  std::string name() const override { return "kernel"; }
  std::vector<std::uint8_t> encode(const CodingJob& job) override;
  std::vector<std::int16_t> decode(std::span<const std::uint8_t> bytes,
                                   const CodingJob& job) override;
  KernelResponse call(const KernelRequest& req);

 private:
  int pid_ = -1;
  std::FILE* to_child_ = nullptr;
  std::FILE* from_child_ = nullptr;
};

// FGS_CODER=reference (default) or FGS_CODER=kernel, in which case
// FGS_KERNEL_CMD names the command that serves the protocol on stdin/stdout.
std::unique_ptr<CoderBackend> make_coder_backend();

}  // namespace fgs::codec

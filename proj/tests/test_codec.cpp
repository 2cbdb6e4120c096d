#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "fgs/codec/bytes.hpp"
#include "fgs/codec/container.hpp"
#include "fgs/codec/kernel_protocol.hpp"
#include "fgs/codec/range_coder.hpp"
#include "fgs/codec/stream.hpp"
#include "fgs/error.hpp"
#include "fgs/image.hpp"

using namespace fgs;
using namespace fgs::codec;

namespace {

// Textbook carry-less LZMA-style encoder written independently of the
// library, used as a byte-exact oracle.
std::vector<std::uint8_t> oracle_encode(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& ops) {
  std::uint64_t low = 0;
  std::uint32_t range = 0xFFFFFFFFu;
  std::uint8_t cache = 0;
  std::uint64_t pending = 1;
  std::vector<std::uint8_t> out;
  auto shift = [&] {
    if (static_cast<std::uint32_t>(low) < 0xFF000000u || (low >> 32) != 0) {
      const std::uint8_t carry = static_cast<std::uint8_t>(low >> 32);
      std::uint8_t t = cache;
      do {
        out.push_back(static_cast<std::uint8_t>(t + carry));
        t = 0xFF;
      } while (--pending != 0);
      cache = static_cast<std::uint8_t>(low >> 24);
    }
    ++pending;
    low = (low & 0x00FFFFFFu) << 8;
  };
  for (auto [start, freq] : ops) {
    const std::uint32_t r = range >> 16;
    low += static_cast<std::uint64_t>(r) * start;
    range = r * freq;
    while (range < (1u << 24)) {
      range <<= 8;
      shift();
    }
  }
  for (int i = 0; i < 5; ++i) shift();
  return out;
}

CdfTable random_gaussian_table(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu(-20, 20), sigma(0.11, 30);
  std::uniform_int_distribution<int> lo(-60, 0), span(0, 80);
  const int l = lo(rng);
  return build_cdf(mu(rng), sigma(rng), l, l + span(rng));
}

double ideal_bits(const CodingJob& job) {
  double bits = 0;
  for (std::size_t i = 0; i < job.symbols.size(); ++i) {
    const CdfTable& t = job.tables[job.table_index[i]];
    bits -= std::log2(static_cast<double>(t.freq(job.symbols[i])) / kCdfTotal);
  }
  return bits;
}

CodingJob random_job(std::mt19937_64& rng, int symbols, int tables) {
  CodingJob job;
  for (int t = 0; t < tables; ++t) job.tables.push_back(random_gaussian_table(rng));
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < symbols; ++i) {
    const auto k = static_cast<std::uint32_t>(rng() % tables);
    const CdfTable& t = job.tables[k];
    // Sample from the table's own distribution.
    const auto target = static_cast<std::uint32_t>(u(rng) * kCdfTotal);
    int s = t.lo;
    while (t.cum[s - t.lo + 1] <= target) ++s;
    job.table_index.push_back(k);
    job.symbols.push_back(static_cast<std::int16_t>(s));
  }
  return job;
}

ModelConfig small_model_config() {
  ModelConfig c = ModelConfig::toy();
  c.c1 = 8;
  c.c2 = 6;
  c.hyper_channels = 4;
  c.base_width = 8;
  c.downsample = 4;
  return c;
}

}  // namespace

TEST(BuildCdf, StandardNormalCentralBin) {
  const CdfTable t = build_cdf(0, 1, -8, 8);
  EXPECT_NO_THROW(t.check());
  const double oracle = std::erf(0.5 / std::sqrt(2.0));
  EXPECT_NEAR(t.freq(0) / 65536.0, oracle, 1e-3);
  EXPECT_NEAR(oracle, 0.3829, 1e-4);
  for (int s = 1; s <= 8; ++s) EXPECT_EQ(t.freq(s), t.freq(-s));
}

TEST(BuildCdf, FloorSigmaConcentratesOnMean) {
  const CdfTable t = build_cdf(0, 0.11, -5, 5);
  // Ten other bins hold at least one count each.
  EXPECT_GE(t.freq(0), 0.999 * 65536 - 10);
  for (int s = -5; s <= 5; ++s) EXPECT_GE(t.freq(s), 1u);
}

TEST(BuildCdf, MeanFarOutsideRangeKeepsAllBins) {
  for (double mu : {-1000.0, 1000.0}) {
    const CdfTable t = build_cdf(mu, 0.5, -3, 3);
    EXPECT_NO_THROW(t.check());
    for (int s = -3; s <= 3; ++s) EXPECT_GE(t.freq(s), 1u);
  }
  EXPECT_THROW(build_cdf(0, 1, 2, 1), RangeError);
  EXPECT_NO_THROW(build_cdf(0, 1, 4, 4).check());
}

TEST(CdfFromMasses, RoundingAndSettlement) {
  const std::vector<double> m = {1, 1, 2};
  const CdfTable t = cdf_from_masses(-1, m);
  EXPECT_EQ(t.freq(-1), 16384u);
  EXPECT_EQ(t.freq(0), 16384u);
  EXPECT_EQ(t.freq(1), 32768u);
  const std::vector<double> zeros(4, 0.0);
  const CdfTable u = cdf_from_masses(0, zeros);
  for (int s = 0; s < 4; ++s) EXPECT_EQ(u.freq(s), 16384u);
  std::vector<std::uint32_t> bad = {1, 2};
  EXPECT_ANY_THROW(cdf_from_freqs(0, bad));
}

TEST(RangeCoder, EmptySegmentIsFlushOnly) {
  const CodingJob job;
  const auto bytes = rc_encode(job);
  EXPECT_EQ(bytes, std::vector<std::uint8_t>(5, 0));
  EXPECT_TRUE(rc_decode(bytes, job).empty());
}

TEST(RangeCoder, MatchesIndependentEncoderByteForByte) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const CodingJob job = random_job(rng, 1 + static_cast<int>(rng() % 400), 3);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> ops;
    for (std::size_t i = 0; i < job.symbols.size(); ++i) {
      const CdfTable& t = job.tables[job.table_index[i]];
      ops.emplace_back(t.start(job.symbols[i]), t.freq(job.symbols[i]));
    }
    ASSERT_EQ(rc_encode(job), oracle_encode(ops)) << "trial " << trial;
  }
}

TEST(RangeCoder, FuzzRoundTrip) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = static_cast<int>(rng() % 64);
    CodingJob job = random_job(rng, n, 1 + static_cast<int>(rng() % 4));
    // Mix in tail symbols with minimum-frequency bins.
    for (std::size_t i = 0; i < job.symbols.size(); i += 7) {
      const CdfTable& t = job.tables[job.table_index[i]];
      job.symbols[i] = static_cast<std::int16_t>(rng() % 2 ? t.lo : t.hi);
    }
    const auto bytes = rc_encode(job);
    ASSERT_EQ(rc_decode(bytes, job), job.symbols) << "trial " << trial;
  }
}

TEST(RangeCoder, LongSegmentNearIdealRate) {
  std::mt19937_64 rng(3);
  const CodingJob job = random_job(rng, 10000, 16);
  const auto bytes = rc_encode(job);
  const double ideal = ideal_bits(job);
  EXPECT_LE(bytes.size(), ideal / 8 + 8);
  EXPECT_LE(bytes.size() * 8.0, ideal * 1.01 + 64);
  EXPECT_EQ(rc_decode(bytes, job), job.symbols);
}

TEST(RangeCoder, UniformTableCostsEightBitsPerSymbol) {
  std::mt19937_64 rng(4);
  const std::vector<double> flat(256, 1.0);
  CodingJob job;
  job.tables.push_back(cdf_from_masses(-128, flat));
  for (int i = 0; i < 4096; ++i) {
    job.table_index.push_back(0);
    job.symbols.push_back(static_cast<std::int16_t>(static_cast<int>(rng() % 256) - 128));
  }
  const auto bytes = rc_encode(job);
  EXPECT_GE(bytes.size(), 4096u);
  EXPECT_LE(bytes.size(), 4096u + 8);
}

TEST(RangeCoder, RejectsOutOfRangeAndShortInput) {
  CodingJob job;
  job.tables.push_back(build_cdf(0, 1, -2, 2));
  job.table_index = {0};
  job.symbols = {3};
  EXPECT_THROW(rc_encode(job), RangeError);
  const std::vector<std::uint8_t> short_bytes = {0, 0};
  EXPECT_THROW(rc_decode(short_bytes, job), FormatError);
}

TEST(Bytes, BigEndianLayout) {
  ByteWriter w;
  w.u16(0x1234);
  w.i16(-2);
  w.u32(0xA1B2C3D4u);
  const auto b = w.take();
  EXPECT_EQ(b, (std::vector<std::uint8_t>{0x12, 0x34, 0xFF, 0xFE, 0xA1, 0xB2, 0xC3, 0xD4}));
  ByteReader r(b, "test");
  EXPECT_EQ(r.u16(), 0x1234);
  EXPECT_EQ(r.i16(), -2);
  EXPECT_EQ(r.u32(), 0xA1B2C3D4u);
  EXPECT_THROW(r.u8(), FormatError);
}

TEST(Container, WriteParseRoundTrip) {
  StreamHeader h;
  h.width = 32;
  h.height = 16;
  h.c1 = 4;
  h.c2 = 2;
  h.hyper_channels = 2;
  SegmentTable t;
  t.len_z_b = 6;
  t.len_l_b = 7;
  t.len_z_s = 8;
  t.units = {{-1, 1, 5}, {-3, 2, 6}};
  std::vector<std::uint8_t> payload(32);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i);
  const auto bytes = write_container(h, t, payload);
  EXPECT_EQ(bytes.size(), kHeaderBytes + table_bytes(2) + 32);
  EXPECT_EQ(table_bytes(2), 12u + 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FGS1");
  const ParsedContainer p = parse_container(bytes);
  EXPECT_EQ(p.header, h);
  EXPECT_EQ(p.units.size(), 2u);
  EXPECT_EQ(p.units[1][0], 26);
  EXPECT_EQ(p.payload_bytes, 32u);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_container(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(parse_container(bad), FormatError);
  // Cutting inside l_b names the segment.
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + kHeaderBytes + table_bytes(2) + 9);
  try {
    parse_container(cut);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("l_b"), std::string::npos) << e.what();
  }
  // A cut inside unit 1 keeps unit 0 only.
  const std::vector<std::uint8_t> mid(bytes.begin(), bytes.end() - 3);
  EXPECT_EQ(parse_container(mid).units.size(), 1u);
}

class StreamTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new FgsModel(small_model_config(), 21);
    image_ = new Image(synthesize_image(24, 32, 3));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete image_;
  }
  static FgsModel* model_;
  static Image* image_;
};
FgsModel* StreamTest::model_ = nullptr;
Image* StreamTest::image_ = nullptr;

TEST_F(StreamTest, FullDecodeMatchesDirectReconstruction) {
  for (bool half : {false, true}) {
    const PadUnit unit = half ? PadUnit::kHalfChannel : PadUnit::kChannel;
    const auto bytes = encode_stream(*image_, *model_, {half});
    const DecodeResult d = decode_stream(bytes, *model_);
    const Analysis a = model_->analyze(*image_);
    const int n = half ? 12 : 6;
    EXPECT_EQ(d.units_decoded, n);
    EXPECT_EQ(d.image, model_->reconstruct_prefix(a.pack, n, unit));
    EXPECT_EQ(d.pack.l_s_hat, a.pack.l_s_hat);
    const ParsedContainer p = parse_container(bytes);
    std::size_t declared = p.table.len_z_b + p.table.len_l_b + p.table.len_z_s;
    for (const auto& u : p.table.units) declared += u.length;
    EXPECT_EQ(declared, p.payload_bytes);
  }
}

TEST_F(StreamTest, EveryPrefixEqualsZeroPaddedDecode) {
  for (bool half : {false, true}) {
    const PadUnit unit = half ? PadUnit::kHalfChannel : PadUnit::kChannel;
    const auto bytes = encode_stream(*image_, *model_, {half});
    const Analysis a = model_->analyze(*image_);
    const int n = half ? 12 : 6;
    for (int j = 0; j <= n; ++j) {
      const auto cut = truncate_to_units(bytes, j);
      const DecodeResult d = decode_stream(cut, *model_);
      EXPECT_EQ(d.units_decoded, j);
      EXPECT_EQ(d.image, model_->reconstruct_prefix(a.pack, j, unit)) << "half " << half << " j " << j;
      EXPECT_EQ(decode_stream(bytes, *model_, j).image, d.image);
    }
    EXPECT_EQ(truncate_to_units(bytes, n), bytes);
    EXPECT_EQ(truncate_to_units(bytes, 0).size(), mandatory_prefix_bytes(bytes));
    EXPECT_THROW(truncate_to_units(bytes, n + 1), RangeError);
  }
}

TEST_F(StreamTest, RawCutsMatchCleanBoundaryCuts) {
  const auto bytes = encode_stream(*image_, *model_);
  const ParsedContainer p = parse_container(bytes);
  const std::size_t mandatory = mandatory_prefix_bytes(bytes);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t len = mandatory + rng() % (bytes.size() - mandatory + 1);
    const std::vector<std::uint8_t> raw(bytes.begin(), bytes.begin() + len);
    int complete = 0;
    while (complete < 6 && p.unit_end(complete + 1) <= len) ++complete;
    const DecodeResult d = decode_stream(raw, *model_);
    EXPECT_EQ(d.units_decoded, complete);
    EXPECT_EQ(d.image, decode_stream(truncate_to_units(bytes, complete), *model_).image);
  }
  const std::vector<std::uint8_t> short_prefix(bytes.begin(), bytes.begin() + mandatory - 1);
  EXPECT_THROW(decode_stream(short_prefix, *model_), FormatError);
}

TEST_F(StreamTest, BudgetTruncationEquivalence) {
  const auto bytes = encode_stream(*image_, *model_, {true});
  const std::size_t mandatory = mandatory_prefix_bytes(bytes);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t budget = mandatory + rng() % (bytes.size() - mandatory + 40);
    const auto t = truncate_to_budget(bytes, budget);
    EXPECT_LE(t.size(), budget);
    const DecodeResult d = decode_stream(t, *model_);
    // The same boundary reached by a raw cut of the original.
    const std::vector<std::uint8_t> raw(bytes.begin(),
                                        bytes.begin() + std::min(budget, bytes.size()));
    EXPECT_EQ(d.image, decode_stream(raw, *model_).image);
    // Longest: one more unit would not fit.
    if (d.units_decoded < 12) EXPECT_GT(truncate_to_units(bytes, d.units_decoded + 1).size(), budget);
  }
  try {
    truncate_to_budget(bytes, mandatory - 1);
    FAIL();
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(mandatory)), std::string::npos);
  }
}

TEST_F(StreamTest, InspectReportsSegments) {
  const auto bytes = encode_stream(*image_, *model_);
  const StreamReport full = inspect_stream(bytes);
  EXPECT_EQ(full.declared_units, 6);
  EXPECT_EQ(full.present_units, 6);
  EXPECT_EQ(full.units.size(), 6u);
  EXPECT_EQ(full.truncation_points.size(), 7u);
  EXPECT_EQ(full.truncation_points.back().byte_offset, bytes.size());
  double sum = 0;
  for (const auto& u : full.units) sum += u.bpp;
  EXPECT_NEAR(sum, full.scalable_bpp, 1e-12);
  EXPECT_NEAR(full.base_bpp + full.scalable_bpp, bytes.size() * 8.0 / (24 * 32), 1e-12);

  const StreamReport part = inspect_stream(truncate_to_units(bytes, 2));
  EXPECT_EQ(part.present_units, 2);
  for (int k = 0; k < 2; ++k) EXPECT_EQ(part.units[k].length, full.units[k].length);
  EXPECT_FALSE(part.units[2].present);
  EXPECT_NE(part.text().find("FGS1"), std::string::npos);
  EXPECT_THROW(inspect_stream(std::vector<std::uint8_t>(10, 0)), FormatError);
}

TEST_F(StreamTest, RejectsMismatchedModelAndImage) {
  const auto bytes = encode_stream(*image_, *model_);
  ModelConfig other = small_model_config();
  other.c2 = 5;
  FgsModel wrong(other, 1);
  EXPECT_ANY_THROW(decode_stream(bytes, wrong));
  EXPECT_ANY_THROW(encode_stream(synthesize_image(22, 32, 1), *model_));
}

TEST(KernelProtocol, RequestRoundTrip) {
  std::mt19937_64 rng(7);
  KernelRequest req;
  req.op = KernelOp::kEncode;
  req.job = random_job(rng, 50, 3);
  const auto bytes = serialize_request(req);
  EXPECT_EQ(bytes[0], kProtocolId);
  EXPECT_EQ(bytes[1], 0);
  const KernelRequest back = parse_request(bytes);
  EXPECT_EQ(back.job.tables, req.job.tables);
  EXPECT_EQ(back.job.symbols, req.job.symbols);
  EXPECT_EQ(back.job.table_index, req.job.table_index);
}

TEST(KernelProtocol, EncodeDecodeThroughHandler) {
  std::mt19937_64 rng(8);
  KernelRequest enc;
  enc.job = random_job(rng, 300, 5);
  const KernelResponse r1 = parse_response(handle_request_bytes(serialize_request(enc)), KernelOp::kEncode);
  ASSERT_EQ(r1.status, KernelStatus::kOk);
  EXPECT_EQ(r1.bytes, rc_encode(enc.job));
  KernelRequest dec;
  dec.op = KernelOp::kDecode;
  dec.job = enc.job;
  dec.job.symbols.clear();
  dec.bytes = r1.bytes;
  const KernelResponse r2 = parse_response(handle_request_bytes(serialize_request(dec)), KernelOp::kDecode);
  ASSERT_EQ(r2.status, KernelStatus::kOk);
  EXPECT_EQ(r2.symbols, enc.job.symbols);

  KernelRequest cdf;
  cdf.op = KernelOp::kBuildCdf;
  cdf.cdf_specs = {{0.0, 1.0, -8, 8}, {3.5, 0.2, 0, 9}};
  const KernelResponse r3 = parse_response(handle_request_bytes(serialize_request(cdf)), KernelOp::kBuildCdf);
  ASSERT_EQ(r3.tables.size(), 2u);
  EXPECT_EQ(r3.tables[0], build_cdf(0.0, 1.0, -8, 8));
  EXPECT_EQ(r3.tables[1], build_cdf(3.5, 0.2, 0, 9));
}

TEST(KernelProtocol, ErrorStatuses) {
  auto status_of = [](const std::vector<std::uint8_t>& req, KernelOp op) {
    return parse_response(handle_request_bytes(req), op).status;
  };
  EXPECT_EQ(status_of({2, 0}, KernelOp::kEncode), KernelStatus::kProtocolMismatch);
  EXPECT_EQ(status_of({1, 9}, KernelOp::kEncode), KernelStatus::kMalformed);
  EXPECT_EQ(status_of({1, 0, 0, 0}, KernelOp::kEncode), KernelStatus::kMalformed);

  KernelRequest bad;
  bad.job.tables.push_back(build_cdf(0, 1, -2, 2));
  bad.job.table_index = {0};
  bad.job.symbols = {7};
  const KernelResponse r = handle_request(bad);
  EXPECT_EQ(r.status, KernelStatus::kSymbolOutOfRange);
  EXPECT_FALSE(r.message.empty());

  KernelRequest dec;
  dec.op = KernelOp::kDecode;
  dec.job.tables.push_back(build_cdf(0, 1, -2, 2));
  dec.job.table_index = {0, 0, 0};
  dec.bytes = {0, 0};
  EXPECT_EQ(handle_request(dec).status, KernelStatus::kDecodeError);
  // Error payloads serialize as u16 length + message.
  const auto wire = serialize_response(r, KernelOp::kEncode);
  EXPECT_EQ(wire[1], static_cast<std::uint8_t>(KernelStatus::kSymbolOutOfRange));
  EXPECT_EQ(parse_response(wire, KernelOp::kEncode).message, r.message);
}

TEST(KernelProtocol, SubprocessBackendIsByteIdentical) {
  SubprocessBackend kernel(std::string(FGS_CLI_PATH) + " kernel-serve");
  ReferenceBackend reference;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const CodingJob job = random_job(rng, static_cast<int>(rng() % 500), 4);
    const auto bytes = kernel.encode(job);
    EXPECT_EQ(bytes, reference.encode(job));
    EXPECT_EQ(kernel.decode(bytes, job), job.symbols);
  }
  FgsModel model(small_model_config(), 4);
  const Image img = synthesize_image(16, 16, 4);
  EXPECT_EQ(encode_stream(img, model, {}, &kernel), encode_stream(img, model));
}

TEST(KernelProtocol, EnvironmentSelectsBackend) {
  unsetenv("FGS_CODER");
  EXPECT_EQ(make_coder_backend()->name(), "reference");
  setenv("FGS_CODER", "kernel", 1);
  setenv("FGS_KERNEL_CMD", (std::string(FGS_CLI_PATH) + " kernel-serve").c_str(), 1);
  EXPECT_EQ(make_coder_backend()->name(), "kernel");
  unsetenv("FGS_KERNEL_CMD");
  EXPECT_ANY_THROW(make_coder_backend());
  setenv("FGS_CODER", "turbo", 1);
  EXPECT_ANY_THROW(make_coder_backend());
  unsetenv("FGS_CODER");
}

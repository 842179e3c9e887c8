#pragma once

// Edge -> cloud payload: header plus MSB-first bit-packed codebook indices.
//
//   "AVQP" | version u8 | B u32 | N u32 | n u8 | g u8 | m u8 | n*g x u64 hash | body
//
// Multi-byte integers are little-endian. Body order is (batch, stage, token,
// group); the body is B*N*n*g*m bits, zero-padded to a whole byte.

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "avq/bytes.hpp"
#include "avq/vq.hpp"

namespace avq {

inline constexpr std::string_view kPayloadMagic = "AVQP";
inline constexpr std::uint8_t kPayloadVersion = 1;

enum class WireErrorCode { bad_magic, bad_version, hash_mismatch, truncated, index_overflow, trailing_bytes };

class WireError : public Error {
 public:
  WireError(WireErrorCode code, const std::string& what, int stage = -1)
      : Error(ErrorKind::protocol, what), code_(code), stage_(stage) {}
  WireErrorCode code() const noexcept { return code_; }
  // Offending stage for hash mismatches, -1 otherwise.
  int stage() const noexcept { return stage_; }

 private:
  WireErrorCode code_;
  int stage_;
};

struct PayloadHeader {
  std::uint32_t batch = 0, tokens = 0;
  std::uint8_t stages = 0, groups = 0, bits = 0;
  std::vector<std::uint64_t> hashes;  // n*g, stage-major

  std::size_t header_bytes() const { return 4 + 1 + 4 + 4 + 3 + 8 * hashes.size(); }
  std::uint64_t body_bits() const {
    return std::uint64_t{batch} * tokens * stages * groups * bits;
  }
};

class BitWriter {
 public:
  void put(std::uint32_t value, unsigned bits) {
    for (unsigned i = bits; i-- > 0;) {
      if (fill_ == 0) buf_.push_back(0);
      if ((value >> i) & 1u) buf_.back() |= static_cast<std::uint8_t>(0x80u >> fill_);
      fill_ = (fill_ + 1) & 7u;
    }
  }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
  unsigned fill_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint32_t get(unsigned bits) {
    std::uint32_t v = 0;
    for (unsigned i = 0; i < bits; ++i, ++pos_) v = (v << 1) | ((data_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1u);
    return v;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline Bytes encode_payload(const IndexGrid& grid, std::size_t bits, std::span<const std::uint64_t> hashes) {
  require(bits >= 1 && bits <= Codebook::kMaxIndexBits, ErrorKind::config, "index width must be in [1, 16]");
  require(hashes.size() == grid.stages * grid.groups, ErrorKind::config, "need one codebook hash per stage x group");
  require(grid.stages <= 255 && grid.groups <= 255, ErrorKind::config, "too many stages or groups for the header");
  ByteWriter w;
  w.raw(kPayloadMagic);
  w.u8(kPayloadVersion);
  w.u32(static_cast<std::uint32_t>(grid.batch));
  w.u32(static_cast<std::uint32_t>(grid.tokens));
  w.u8(static_cast<std::uint8_t>(grid.stages));
  w.u8(static_cast<std::uint8_t>(grid.groups));
  w.u8(static_cast<std::uint8_t>(bits));
  for (auto h : hashes) w.u64(h);
  BitWriter body;
  const std::uint32_t limit = 1u << bits;
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t s = 0; s < grid.stages; ++s)
      for (std::size_t t = 0; t < grid.tokens; ++t)
        for (std::size_t q = 0; q < grid.groups; ++q) {
          const std::uint32_t i = grid.at(b, t, s, q);
          if (i >= limit)
            throw WireError(WireErrorCode::index_overflow,
                            "index " + std::to_string(i) + " does not fit in " + std::to_string(bits) + " bits");
          body.put(i, static_cast<unsigned>(bits));
        }
  w.raw(std::move(body).take());
  return std::move(w).bytes();
}

struct DecodedPayload {
  PayloadHeader header;
  IndexGrid indices;
};

inline DecodedPayload decode_payload_indices(std::span<const std::uint8_t> bytes) {
  auto truncated = [] { return WireError(WireErrorCode::truncated, "payload truncated"); };
  if (bytes.size() < 4) throw truncated();
  if (!std::equal(kPayloadMagic.begin(), kPayloadMagic.end(), bytes.begin()))
    throw WireError(WireErrorCode::bad_magic, "payload magic mismatch");
  if (bytes.size() < 5) throw truncated();
  if (bytes[4] != kPayloadVersion)
    throw WireError(WireErrorCode::bad_version, "unsupported payload version " + std::to_string(bytes[4]));
  DecodedPayload out;
  auto& h = out.header;
  try {
    ByteReader r(bytes.subspan(5), ErrorKind::protocol, "payload");
    h.batch = r.u32();
    h.tokens = r.u32();
    h.stages = r.u8();
    h.groups = r.u8();
    h.bits = r.u8();
    if (h.bits < 1 || h.bits > Codebook::kMaxIndexBits || h.stages == 0 || h.groups == 0)
      throw WireError(WireErrorCode::bad_version, "payload header fields out of range");
    h.hashes.resize(std::size_t{h.stages} * h.groups);
    for (auto& x : h.hashes) x = r.u64();
  } catch (const WireError&) {
    throw;
  } catch (const Error&) {
    throw truncated();
  }
  const std::size_t body_bytes = static_cast<std::size_t>((h.body_bits() + 7) / 8);
  const std::size_t have = bytes.size() - h.header_bytes();
  if (have < body_bytes) throw truncated();
  if (have > body_bytes) throw WireError(WireErrorCode::trailing_bytes, "payload has trailing bytes");
  out.indices = IndexGrid(h.batch, h.tokens, h.stages, h.groups);
  BitReader br(bytes.subspan(h.header_bytes()));
  for (std::size_t b = 0; b < h.batch; ++b)
    for (std::size_t s = 0; s < h.stages; ++s)
      for (std::size_t t = 0; t < h.tokens; ++t)
        for (std::size_t q = 0; q < h.groups; ++q) out.indices.at(b, t, s, q) = br.get(h.bits);
  return out;
}

// Verifies the payload was produced with exactly these codebooks.
inline void check_payload_codebooks(const PayloadHeader& h, const VQConfig& cfg, std::span<const Codebook> books) {
  if (h.stages != cfg.num_codebooks || h.groups != cfg.num_groups || h.bits != cfg.index_bits() ||
      books.size() != h.hashes.size())
    throw WireError(WireErrorCode::hash_mismatch, "payload VQ layout does not match local codebooks");
  for (std::size_t i = 0; i < h.hashes.size(); ++i)
    if (h.hashes[i] != books[i].content_hash()) {
      const int stage = static_cast<int>(i / cfg.num_groups);
      throw WireError(WireErrorCode::hash_mismatch,
                      "codebook desync at stage " + std::to_string(stage) + " group " +
                          std::to_string(i % cfg.num_groups),
                      stage);
    }
}

inline Tensor decode_payload(std::span<const std::uint8_t> bytes, const VQConfig& cfg,
                             std::span<const Codebook> books) {
  auto d = decode_payload_indices(bytes);
  check_payload_codebooks(d.header, cfg, books);
  return dequantize(d.indices, cfg, books);
}

// Size arithmetic for raw vs. quantized features.
struct SizeModel {
  std::uint64_t channels = 1024;     // C
  std::uint64_t precision_bits = 16;  // bits per raw feature value
  std::uint64_t stages = 1;          // n
  std::uint64_t groups = 1;          // g
  std::uint64_t index_bits = 12;     // m
  std::uint64_t tokens = 577;        // N
  std::uint64_t batch = 1;           // B

  void validate() const {
    require(channels && precision_bits && stages && groups && index_bits && tokens && batch, ErrorKind::config,
            "size model fields must be positive");
    require(index_bits <= Codebook::kMaxIndexBits, ErrorKind::config, "index width must be <= 16 bits");
  }
  std::uint64_t raw_bits() const { return batch * tokens * channels * precision_bits; }
  std::uint64_t payload_bits() const { return batch * tokens * stages * groups * index_bits; }
};

inline constexpr double kBytesPerKB = 1024.0;

inline double bits_to_kb(std::uint64_t bits) { return static_cast<double>(bits) / 8.0 / kBytesPerKB; }

struct PayloadSize {
  double theoretical_kb;       // index bits only, KB = 1024 bytes
  std::uint64_t on_wire_bytes;  // header + padded body
};

inline PayloadSize payload_size(const SizeModel& m) {
  m.validate();
  const std::uint64_t header = 4 + 1 + 4 + 4 + 3 + 8 * m.stages * m.groups;
  return {bits_to_kb(m.payload_bits()), header + (m.payload_bits() + 7) / 8};
}

inline double raw_feature_kb(const SizeModel& m) {
  m.validate();
  return bits_to_kb(m.raw_bits());
}

inline double raw_image_kb(std::uint64_t height, std::uint64_t width, std::uint64_t channels) {
  return static_cast<double>(height * width * channels) / kBytesPerKB;
}

struct Ratio {
  std::uint64_t num, den;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

// C*K / (n*g*m) as a reduced fraction.
inline Ratio compression_ratio(const SizeModel& m) {
  m.validate();
  const std::uint64_t num = m.channels * m.precision_bits, den = m.stages * m.groups * m.index_bits;
  const std::uint64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

inline double compression_rate(const SizeModel& m) { return compression_ratio(m).value(); }

}  // namespace avq

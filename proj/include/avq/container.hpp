#pragma once

// Chunked container shared by checkpoints and dataset shards:
//   8-byte magic, then sections of
//   u16 LE name length | UTF-8 name | u64 LE payload length | payload bytes.
// Numeric payloads are little-endian f32 arrays.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avq/bytes.hpp"
#include "avq/tensor.hpp"

namespace avq {

class SectionFile {
 public:
  explicit SectionFile(std::string magic) : magic_(std::move(magic)) {}

  void put_bytes(const std::string& name, Bytes payload) {
    if (!sections_.count(name)) order_.push_back(name);
    sections_[name] = std::move(payload);
  }

  void put_floats(const std::string& name, std::span<const float> values) {
    ByteWriter w;
    w.f32s(values);
    put_bytes(name, std::move(w).bytes());
  }

  void put_u64s(const std::string& name, std::span<const std::uint64_t> values) {
    ByteWriter w;
    for (auto v : values) w.u64(v);
    put_bytes(name, std::move(w).bytes());
  }

  bool has(const std::string& name) const { return sections_.count(name) != 0; }

  const Bytes& bytes(const std::string& name) const {
    auto it = sections_.find(name);
    require(it != sections_.end(), ErrorKind::io, "missing section '" + name + "'");
    return it->second;
  }

  std::vector<float> floats(const std::string& name) const {
    const auto& b = bytes(name);
    require(b.size() % 4 == 0, ErrorKind::io, "section '" + name + "' is not a float array");
    ByteReader r(b, ErrorKind::io, name);
    return r.f32s(b.size() / 4);
  }

  // Reads a float section into a tensor of the expected shape.
  Tensor tensor(const std::string& name, const Shape& shape) const {
    auto v = floats(name);
    require(v.size() == shape_numel(shape), ErrorKind::io,
            "section '" + name + "' has " + std::to_string(v.size()) + " values, expected " + shape_str(shape));
    return Tensor::from_external(shape, std::move(v));
  }

  std::vector<std::uint64_t> u64s(const std::string& name) const {
    const auto& b = bytes(name);
    require(b.size() % 8 == 0, ErrorKind::io, "section '" + name + "' is not a u64 array");
    ByteReader r(b, ErrorKind::io, name);
    std::vector<std::uint64_t> out(b.size() / 8);
    for (auto& v : out) v = r.u64();
    return out;
  }

  const std::vector<std::string>& names() const { return order_; }

  Bytes encode() const {
    ByteWriter w;
    w.raw(magic_);
    for (const auto& name : order_) {
      w.u16(static_cast<std::uint16_t>(name.size()));
      w.raw(name);
      const auto& payload = sections_.at(name);
      w.u64(payload.size());
      w.raw(payload);
    }
    return std::move(w).bytes();
  }

  static SectionFile decode(std::span<const std::uint8_t> data, const std::string& magic) {
    ByteReader r(data, ErrorKind::io, "container");
    require(r.str(magic.size()) == magic, ErrorKind::io, "container: expected magic " + magic);
    SectionFile f(magic);
    while (!r.at_end()) {
      const std::size_t len = r.u16();
      std::string name = r.str(len);
      const std::uint64_t size = r.u64();
      require(size <= r.remaining(), ErrorKind::io, "container: section '" + name + "' is truncated");
      auto payload = r.take(static_cast<std::size_t>(size));
      f.put_bytes(name, Bytes(payload.begin(), payload.end()));
    }
    return f;
  }

 private:
  std::string magic_;
  std::vector<std::string> order_;
  std::map<std::string, Bytes> sections_;
};

}  // namespace avq

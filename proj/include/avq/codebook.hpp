#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "avq/bytes.hpp"
#include "avq/error.hpp"
#include "avq/kernels.hpp"

namespace avq {

// FNV-1a over the little-endian encoding of (K, D, centroids).
inline std::uint64_t centroid_digest(std::size_t k, std::size_t d, std::span<const float> centroids) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint32_t word) {
    for (int i = 0; i < 4; ++i) {
      h ^= (word >> (8 * i)) & 0xFFu;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint32_t>(k));
  mix(static_cast<std::uint32_t>(d));
  for (float v : centroids) mix(std::bit_cast<std::uint32_t>(v));
  return h;
}

inline bool is_power_of_two(std::size_t k) { return k >= 2 && (k & (k - 1)) == 0; }

// K x D centroid table with the running statistics used by EMA training.
class Codebook {
 public:
  static constexpr std::size_t kMaxIndexBits = 16;

  Codebook(std::size_t num_entries, std::size_t dim)
      : Codebook(num_entries, dim, std::vector<float>(num_entries * dim, 0.0f)) {}

  Codebook(std::size_t num_entries, std::size_t dim, std::vector<float> centroids)
      : k_(num_entries), d_(dim), centroids_(std::move(centroids)) {
    require(is_power_of_two(k_), ErrorKind::config,
            "codebook size must be a power of two >= 2, got " + std::to_string(k_));
    bits_ = static_cast<std::size_t>(std::countr_zero(k_));
    require(bits_ <= kMaxIndexBits, ErrorKind::config, "codebook index width exceeds 16 bits");
    require_dims(d_ >= 1 && centroids_.size() == k_ * d_, "codebook centroid buffer does not match K x D");
    ema_size_.assign(k_, 1.0f);
    ema_sum_ = centroids_;
    unused_steps_.assign(k_, 0);
    refresh();
  }

  std::size_t num_entries() const noexcept { return k_; }
  std::size_t dim() const noexcept { return d_; }
  std::size_t index_bits() const noexcept { return bits_; }
  std::uint64_t content_hash() const noexcept { return hash_; }

  std::span<const float> centroids() const noexcept { return centroids_; }
  std::span<const float> centroid(std::size_t i) const {
    return std::span<const float>(centroids_).subspan(i * d_, d_);
  }

  void set_centroids(std::vector<float> c) {
    require_dims(c.size() == k_ * d_, "centroid buffer does not match K x D");
    centroids_ = std::move(c);
    refresh();
  }

  // ‖e‖² − 2⟨e,z⟩ + ‖z‖² with cached ‖e‖².
  double distance(std::span<const float> z, std::size_t i) const {
    return sq_norms_[i] - 2.0 * kernels::dot(centroid(i), z) + kernels::squared_norm(z);
  }

  // Lowest index wins ties.
  std::uint32_t nearest(std::span<const float> z) const {
    require_dims(z.size() == d_, "vector of length " + std::to_string(z.size()) + " against codebook dim " +
                                     std::to_string(d_));
    const double zz = kernels::squared_norm(z);
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t i = 0; i < k_; ++i) {
      const double dist = sq_norms_[i] - 2.0 * kernels::dot(centroid(i), z) + zz;
      if (dist < best) {
        best = dist;
        arg = static_cast<std::uint32_t>(i);
      }
    }
    return arg;
  }

  std::vector<float>& ema_cluster_size() noexcept { return ema_size_; }
  std::vector<float>& ema_cluster_sum() noexcept { return ema_sum_; }
  std::vector<std::uint32_t>& unused_steps() noexcept { return unused_steps_; }
  const std::vector<float>& ema_cluster_size() const noexcept { return ema_size_; }
  const std::vector<float>& ema_cluster_sum() const noexcept { return ema_sum_; }

 private:
  void refresh() {
    for (float v : centroids_) require(std::isfinite(v), ErrorKind::numeric, "non-finite codebook centroid");
    sq_norms_.resize(k_);
    for (std::size_t i = 0; i < k_; ++i) sq_norms_[i] = kernels::squared_norm(centroid(i));
    hash_ = centroid_digest(k_, d_, centroids_);
  }

  std::size_t k_;
  std::size_t d_;
  std::size_t bits_ = 0;
  std::vector<float> centroids_;
  std::vector<double> sq_norms_;
  std::vector<float> ema_size_;
  std::vector<float> ema_sum_;
  std::vector<std::uint32_t> unused_steps_;
  std::uint64_t hash_ = 0;
};

inline constexpr std::string_view kCodebookMagic = "AVQCB01";

// "AVQCB01" then, per codebook: K, D, m (u32 LE), K*D f32 LE centroids, u64 LE hash.
inline Bytes encode_codebooks(std::span<const Codebook> books) {
  ByteWriter w;
  w.raw(kCodebookMagic);
  for (const auto& cb : books) {
    w.u32(static_cast<std::uint32_t>(cb.num_entries()));
    w.u32(static_cast<std::uint32_t>(cb.dim()));
    w.u32(static_cast<std::uint32_t>(cb.index_bits()));
    w.f32s(cb.centroids());
    w.u64(cb.content_hash());
  }
  return std::move(w).bytes();
}

inline std::vector<Codebook> decode_codebooks(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorKind::io, "codebook container");
  require(r.str(kCodebookMagic.size()) == kCodebookMagic, ErrorKind::io, "codebook container: bad magic");
  std::vector<Codebook> out;
  while (!r.at_end()) {
    const std::size_t k = r.u32(), d = r.u32(), m = r.u32();
    require(k >= 2 && k <= (1u << 16) && d >= 1 && d <= (1u << 20), ErrorKind::io,
            "codebook container: implausible record size");
    Codebook cb(k, d, r.f32s(k * d));
    require(cb.index_bits() == m, ErrorKind::io, "codebook container: index width disagrees with K");
    require(r.u64() == cb.content_hash(), ErrorKind::io, "codebook container: content hash mismatch");
    out.push_back(std::move(cb));
  }
  return out;
}

}  // namespace avq

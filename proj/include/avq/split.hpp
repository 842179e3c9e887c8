#pragma once

// In-process edge and cloud executors plus the analytic link model.

#include <chrono>
#include <cmath>
#include <limits>

#include "avq/encoder.hpp"
#include "avq/wire.hpp"

namespace avq {

struct EdgeResult {
  Bytes payload;
  double compute_s = 0.0;
};

struct CloudResult {
  Tensor logits;
  double compute_s = 0.0;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Forward to the partition, quantize, encode. Timing covers compute only.
inline EdgeResult edge_run(const Model& m, const Tensor& images) {
  require(m.quantized(), ErrorKind::config, "edge_run needs a model with a partition and AlignedVQ module");
  const auto t0 = std::chrono::steady_clock::now();
  IndexGrid grid = alignedvq_encode(edge_features(m, images), *m.vq);
  const double dt = seconds_since(t0);
  auto hashes = m.vq->hashes();
  return {encode_payload(grid, m.vq->config.index_bits(), hashes), dt};
}

inline CloudResult cloud_run(const Model& m, std::span<const std::uint8_t> payload) {
  require(m.quantized(), ErrorKind::config, "cloud_run needs a model with a partition and AlignedVQ module");
  const auto t0 = std::chrono::steady_clock::now();
  auto decoded = decode_payload_indices(payload);
  check_payload_codebooks(decoded.header, m.vq->config, m.vq->codebooks);
  Tensor recovered = alignedvq_decode(decoded.indices, *m.vq);
  Tensor logits = cloud_resume(m, recovered);
  return {std::move(logits), seconds_since(t0)};
}

struct LinkModel {
  double bandwidth_bps = 1e6;
  double rtt_s = 0.0;
  double overhead_bytes = 0.0;

  void validate() const {
    require(bandwidth_bps > 0.0 && rtt_s >= 0.0 && overhead_bytes >= 0.0, ErrorKind::config,
            "link needs bandwidth > 0, rtt >= 0, overhead >= 0");
  }
};

struct LatencyReport {
  double edge_compute_s = 0.0;
  double transmit_s = 0.0;
  double cloud_compute_s = 0.0;
  double total_s = 0.0;
  double payload_bytes = 0.0;
};

// One-way transfer: (bytes + overhead) * 8 / bandwidth + rtt / 2.
inline LatencyReport simulate_latency(double payload_bytes, const LinkModel& link, double edge_s, double cloud_s) {
  link.validate();
  LatencyReport r;
  r.payload_bytes = payload_bytes;
  r.edge_compute_s = edge_s;
  r.cloud_compute_s = cloud_s;
  r.transmit_s = (payload_bytes + link.overhead_bytes) * 8.0 / link.bandwidth_bps + link.rtt_s / 2.0;
  r.total_s = r.edge_compute_s + r.transmit_s + r.cloud_compute_s;
  return r;
}

// Fixed JPEG sizes used as cloud-only baselines (KB = 1024 bytes).
inline constexpr double kJpeg90KB = 26.47;
inline constexpr double kJpeg10KB = 4.14;

}  // namespace avq

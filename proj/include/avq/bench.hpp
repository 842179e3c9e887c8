#pragma once

// Benchmark sweeps: bandwidth (analytic latency), partition block, and
// codebook/group count. Each sweep returns a Table printable as CSV or as a
// fixed-column text table.

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "avq/split.hpp"
#include "avq/train.hpp"

namespace avq {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  template <typename... T>
  void add(const T&... cells) {
    std::vector<std::string> r;
    (r.push_back(cell(cells)), ...);
    require(r.size() == header.size(), ErrorKind::config, "table row width does not match header");
    rows.push_back(std::move(r));
  }

  void write_csv(std::ostream& os) const {
    auto line = [&os](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }

  void write_text(std::ostream& os) const {
    std::vector<std::size_t> w(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) w[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << std::left << std::setw(static_cast<int>(w[i] + 2)) << cells[i];
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <typename N>
  static std::string cell(const N& v) {
    std::ostringstream os;
    os << std::setprecision(9) << v;
    return os.str();
  }
};

struct BandwidthSweep {
  double payload_bytes = 865.5;  // AlignedVQ payload
  double edge_s = 0.0;           // edge compute for the split path
  double cloud_s = 0.0;          // cloud compute after the partition
  double cloud_full_s = 0.0;     // cloud compute for the whole model (cloud-only baselines)
  std::vector<double> bandwidths_mbps = {0.25, 0.5, 1.0, 2.0, 4.0};
  LinkModel link;                // bandwidth overridden per row
};

inline double kb_to_bytes(double kb) { return kb * kBytesPerKB; }

// Speedup = cloud-only total / split total, against each JPEG size constant.
inline Table bandwidth_sweep(const BandwidthSweep& s) {
  Table t{{"bandwidth_mbps", "avq_transmit_ms", "avq_total_ms", "jpeg90_total_ms", "jpeg10_total_ms", "speedup_vs_jpeg90",
           "speedup_vs_jpeg10"},
          {}};
  for (double mbps : s.bandwidths_mbps) {
    LinkModel link = s.link;
    link.bandwidth_bps = mbps * 1e6;
    const auto avq = simulate_latency(s.payload_bytes, link, s.edge_s, s.cloud_s);
    const auto j90 = simulate_latency(kb_to_bytes(kJpeg90KB), link, 0.0, s.cloud_full_s);
    const auto j10 = simulate_latency(kb_to_bytes(kJpeg10KB), link, 0.0, s.cloud_full_s);
    t.add(mbps, avq.transmit_s * 1e3, avq.total_s * 1e3, j90.total_s * 1e3, j10.total_s * 1e3,
          j90.total_s / avq.total_s, j10.total_s / avq.total_s);
  }
  return t;
}

struct SweepSetup {
  const Model* baseline = nullptr;  // trained, no VQ
  const SyntheticDataset* data = nullptr;
  TrainConfig finetune = finetune_defaults();  // epochs = 0 evaluates k-means codebooks only
  LinkModel link;
};

namespace detail {

struct SweepPoint {
  double accuracy;
  double theoretical_kb;
  std::size_t wire_bytes;
  double edge_ms, cloud_ms, total_ms;
};

inline SweepPoint run_point(const SweepSetup& s, const PartitionSpec& where, const VQConfig& vcfg) {
  require(s.baseline && s.data, ErrorKind::config, "sweep needs a baseline model and dataset");
  Model m = s.baseline->clone();
  if (s.finetune.epochs > 0)
    finetune_alignedvq(m, where, vcfg, *s.data, s.finetune);
  else
    attach_vq_with_kmeans(m, where, vcfg, *s.data, s.finetune);
  SweepPoint p{};
  p.accuracy = evaluate_val(m, *s.data, EvalPath::split);
  // Timing on a single image, as in a per-sample latency measurement.
  auto [img, lab] = s.data->batch(std::span<const std::size_t>(s.data->val_idx).first(1));
  auto edge = edge_run(m, img);
  auto cloud = cloud_run(m, edge.payload);
  p.wire_bytes = edge.payload.size();
  SizeModel sm{m.cfg.embed_dim, 32, vcfg.num_codebooks, vcfg.num_groups, vcfg.index_bits(), m.cfg.num_tokens(), 1};
  p.theoretical_kb = payload_size(sm).theoretical_kb;
  const auto lat = simulate_latency(static_cast<double>(p.wire_bytes), s.link, edge.compute_s, cloud.compute_s);
  p.edge_ms = lat.edge_compute_s * 1e3;
  p.cloud_ms = lat.cloud_compute_s * 1e3;
  p.total_ms = lat.total_s * 1e3;
  return p;
}

}  // namespace detail

// VQ at `location` after each block in turn.
inline Table block_sweep(const SweepSetup& s, TapLocation location, const VQConfig& vcfg) {
  Table t{{"block", "location", "val_accuracy", "payload_kb", "wire_bytes", "edge_ms", "cloud_ms", "total_ms"}, {}};
  for (std::size_t b = 0; b < s.baseline->cfg.depth; ++b) {
    auto p = detail::run_point(s, {b, location}, vcfg);
    t.add(b, std::string(to_string(location)), p.accuracy, p.theoretical_kb, p.wire_bytes, p.edge_ms, p.cloud_ms,
          p.total_ms);
  }
  return t;
}

// (n, g) grid at a fixed partition.
inline Table codebook_sweep(const SweepSetup& s, const PartitionSpec& where,
                            const std::vector<std::pair<std::size_t, std::size_t>>& grid, std::size_t entries) {
  Table t{{"codebooks", "groups", "val_accuracy", "payload_kb", "wire_bytes", "payload_multiple", "total_ms"}, {}};
  double base_kb = 0.0;
  for (auto [n, g] : grid) {
    VQConfig v{n, g, entries, s.baseline->cfg.embed_dim};
    v.validate();
    auto p = detail::run_point(s, where, v);
    if (base_kb == 0.0) base_kb = p.theoretical_kb / static_cast<double>(n * g);
    t.add(n, g, p.accuracy, p.theoretical_kb, p.wire_bytes, p.theoretical_kb / base_kb, p.total_ms);
  }
  return t;
}

}  // namespace avq

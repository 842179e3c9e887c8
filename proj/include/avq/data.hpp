#pragma once

// Synthetic image classification set. Each class is a fixed analytic template
// (an oriented bar plus an off-centre blob, both keyed to the class index);
// samples add Gaussian pixel noise and, optionally, a per-sample contrast gain.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "avq/container.hpp"
#include "avq/kernels.hpp"
#include "avq/rng.hpp"
#include "avq/tensor.hpp"

namespace avq {

struct DataConfig {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 32;
  double noise_sigma = 0.05;
  // Contrast gain drawn log-uniformly from [1/(1+j), 1+j]; 0 disables.
  double contrast_jitter = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_classes >= 2, ErrorKind::config, "dataset needs at least two classes");
    require(samples_per_class >= 1 && image_size >= 4, ErrorKind::config, "dataset size must be positive");
    require(noise_sigma >= 0.0 && contrast_jitter >= 0.0, ErrorKind::config, "noise parameters must be >= 0");
  }
};

// Template for class `c`, values in [0, 1], shape [H, W, 1].
inline Tensor class_template(std::size_t c, std::size_t num_classes, std::size_t size) {
  Tensor t({size, size, 1});
  const double s = static_cast<double>(size);
  const double theta = std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
  const double phi = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
  const double bx = 0.5 * s + 0.28 * s * std::cos(phi), by = 0.5 * s + 0.28 * s * std::sin(phi);
  const double bar_w = 0.06 * s, blob_r = 0.09 * s;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5 - 0.5 * s;
      const double py = static_cast<double>(y) + 0.5 - 0.5 * s;
      const double d_bar = -px * std::sin(theta) + py * std::cos(theta);
      const double bar = std::exp(-d_bar * d_bar / (2.0 * bar_w * bar_w));
      const double dx = static_cast<double>(x) + 0.5 - bx, dy = static_cast<double>(y) + 0.5 - by;
      const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * blob_r * blob_r));
      t[y * size + x] = static_cast<float>(std::min(1.0, bar + blob));
    }
  return t;
}

struct SyntheticDataset {
  DataConfig cfg;
  Tensor images;  // [M, H, W, 1]
  std::vector<int> labels;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels() const { return cfg.image_size * cfg.image_size; }

  // Gathers rows into an image batch and label vector.
  std::pair<Tensor, std::vector<int>> batch(std::span<const std::size_t> idx) const {
    const std::size_t px = pixels();
    Tensor out({idx.size(), cfg.image_size, cfg.image_size, 1});
    std::vector<int> lab(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.data().begin() + idx[i] * px, px, out.data().begin() + i * px);
      lab[i] = labels[idx[i]];
    }
    return {std::move(out), std::move(lab)};
  }
};

inline SyntheticDataset generate(const DataConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.cfg = cfg;
  const std::size_t total = cfg.num_classes * cfg.samples_per_class, px = cfg.image_size * cfg.image_size;
  ds.images = Tensor({total, cfg.image_size, cfg.image_size, 1});
  ds.labels.resize(total);
  Rng rng(cfg.seed);
  const double log_j = std::log1p(cfg.contrast_jitter);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const Tensor tmpl = class_template(c, cfg.num_classes, cfg.image_size);
    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
      const std::size_t i = c * cfg.samples_per_class + k;
      ds.labels[i] = static_cast<int>(c);
      const double gain = cfg.contrast_jitter > 0.0 ? std::exp(rng.uniform(-log_j, log_j)) : 1.0;
      for (std::size_t p = 0; p < px; ++p) {
        const double noise = cfg.noise_sigma > 0.0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
        ds.images[i * px + p] = static_cast<float>(gain * tmpl[p] + noise);
      }
    }
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, 1));
  split_rng.shuffle(order.begin(), order.end());
  const std::size_t n_val = std::max<std::size_t>(1, total / 10);
  ds.val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return ds;
}

// Top-1 accuracy of the nearest-template (pixel space) classifier on `idx`.
inline double nearest_template_accuracy(const SyntheticDataset& ds, std::span<const std::size_t> idx) {
  std::vector<Tensor> tmpls;
  for (std::size_t c = 0; c < ds.cfg.num_classes; ++c)
    tmpls.push_back(class_template(c, ds.cfg.num_classes, ds.cfg.image_size));
  const std::size_t px = ds.pixels();
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    auto img = ds.images.data().subspan(i * px, px);
    std::size_t best_c = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < tmpls.size(); ++c) {
      const double d = kernels::squared_distance(img, tmpls[c].data());
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    correct += static_cast<int>(best_c) == ds.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

inline constexpr std::string_view kShardMagic = "AVQDATA1";

inline Bytes encode_dataset(const SyntheticDataset& ds) {
  SectionFile f{std::string(kShardMagic)};
  const auto& c = ds.cfg;
  const std::vector<float> meta = {static_cast<float>(c.num_classes), static_cast<float>(c.samples_per_class),
                                   static_cast<float>(c.image_size), static_cast<float>(c.noise_sigma),
                                   static_cast<float>(c.contrast_jitter)};
  f.put_floats("meta", meta);
  f.put_u64s("seed", std::vector<std::uint64_t>{c.seed});
  f.put_floats("images", ds.images.data());
  std::vector<float> lab(ds.labels.begin(), ds.labels.end());
  f.put_floats("labels", lab);
  f.put_u64s("train_idx", std::vector<std::uint64_t>(ds.train_idx.begin(), ds.train_idx.end()));
  f.put_u64s("val_idx", std::vector<std::uint64_t>(ds.val_idx.begin(), ds.val_idx.end()));
  return f.encode();
}

inline SyntheticDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  auto f = SectionFile::decode(bytes, std::string(kShardMagic));
  auto meta = f.floats("meta");
  require(meta.size() == 5, ErrorKind::io, "dataset shard: bad meta section");
  SyntheticDataset ds;
  ds.cfg.num_classes = static_cast<std::size_t>(meta[0]);
  ds.cfg.samples_per_class = static_cast<std::size_t>(meta[1]);
  ds.cfg.image_size = static_cast<std::size_t>(meta[2]);
  ds.cfg.noise_sigma = meta[3];
  ds.cfg.contrast_jitter = meta[4];
  ds.cfg.seed = f.u64s("seed").at(0);
  const std::size_t total = ds.cfg.num_classes * ds.cfg.samples_per_class;
  ds.images = f.tensor("images", {total, ds.cfg.image_size, ds.cfg.image_size, 1});
  for (float v : f.floats("labels")) ds.labels.push_back(static_cast<int>(v));
  require(ds.labels.size() == total, ErrorKind::io, "dataset shard: label count mismatch");
  std::vector<int> seen(total, 0);
  auto read_split = [&](const std::string& name, std::vector<std::size_t>& dst) {
    for (auto v : f.u64s(name)) {
      require(v < total && !seen[v], ErrorKind::io, "dataset shard: bad split index");
      seen[v] = 1;
      dst.push_back(static_cast<std::size_t>(v));
    }
  };
  read_split("train_idx", ds.train_idx);
  read_split("val_idx", ds.val_idx);
  require(ds.train_idx.size() + ds.val_idx.size() == total, ErrorKind::io, "dataset shard: split does not cover data");
  return ds;
}

}  // namespace avq

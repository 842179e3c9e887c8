#pragma once

// Vanilla / residual / grouped vector quantization over [B,N,C] features.
//
// Codebook (stage s, group q) lives at position s*g + q. Group q covers the
// contiguous channel slice [q*C/g, (q+1)*C/g).

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "avq/autodiff.hpp"
#include "avq/codebook.hpp"
#include "avq/rng.hpp"
#include "avq/tensor.hpp"

namespace avq {

struct VQConfig {
  std::size_t num_codebooks = 1;  // residual stages n
  std::size_t num_groups = 1;     // g
  std::size_t entries = 256;      // K per codebook
  std::size_t feature_dim = 64;   // C

  std::size_t group_dim() const { return feature_dim / num_groups; }
  std::size_t total_codebooks() const { return num_codebooks * num_groups; }
  std::size_t index_bits() const { return static_cast<std::size_t>(std::countr_zero(entries)); }

  void validate() const {
    require(num_codebooks >= 1 && num_groups >= 1, ErrorKind::config, "VQ needs at least one stage and one group");
    require(feature_dim % num_groups == 0, ErrorKind::config,
            "groups (" + std::to_string(num_groups) + ") must divide channels (" + std::to_string(feature_dim) + ")");
    require(is_power_of_two(entries) && index_bits() <= Codebook::kMaxIndexBits, ErrorKind::config,
            "codebook entries must be a power of two in [2, 65536]");
  }
};

// Indices laid out [B, N, n, g].
struct IndexGrid {
  std::size_t batch = 0, tokens = 0, stages = 0, groups = 0;
  std::vector<std::uint32_t> idx;

  IndexGrid() = default;
  IndexGrid(std::size_t b, std::size_t n_tok, std::size_t n, std::size_t g)
      : batch(b), tokens(n_tok), stages(n), groups(g), idx(b * n_tok * n * g, 0) {}

  std::size_t offset(std::size_t b, std::size_t t, std::size_t s, std::size_t q) const {
    return ((b * tokens + t) * stages + s) * groups + q;
  }
  std::uint32_t& at(std::size_t b, std::size_t t, std::size_t s, std::size_t q) { return idx[offset(b, t, s, q)]; }
  std::uint32_t at(std::size_t b, std::size_t t, std::size_t s, std::size_t q) const { return idx[offset(b, t, s, q)]; }

  friend bool operator==(const IndexGrid&, const IndexGrid&) = default;
};

inline void check_codebooks(const VQConfig& cfg, std::span<const Codebook> books) {
  cfg.validate();
  require(books.size() == cfg.total_codebooks(), ErrorKind::config,
          "expected " + std::to_string(cfg.total_codebooks()) + " codebooks, got " + std::to_string(books.size()));
  for (const auto& cb : books)
    require(cb.num_entries() == cfg.entries && cb.dim() == cfg.group_dim(), ErrorKind::config,
            "codebook shape disagrees with VQ config");
}

inline std::uint32_t nearest_index(std::span<const float> z, const Codebook& cb) { return cb.nearest(z); }

// Sum of the selected centroids per token and group, accumulated in stage order.
inline Tensor dequantize(const IndexGrid& grid, const VQConfig& cfg, std::span<const Codebook> books) {
  check_codebooks(cfg, books);
  require_dims(grid.stages == cfg.num_codebooks && grid.groups == cfg.num_groups,
               "index grid does not match VQ config");
  const std::size_t c = cfg.feature_dim, gd = cfg.group_dim();
  Tensor out({grid.batch, grid.tokens, c});
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t t = 0; t < grid.tokens; ++t) {
      float* row = out.data().data() + (b * grid.tokens + t) * c;
      for (std::size_t q = 0; q < cfg.num_groups; ++q)
        for (std::size_t s = 0; s < cfg.num_codebooks; ++s) {
          const auto& cb = books[s * cfg.num_groups + q];
          const std::uint32_t i = grid.at(b, t, s, q);
          require(i < cb.num_entries(), ErrorKind::protocol, "index out of codebook range");
          auto e = cb.centroid(i);
          for (std::size_t j = 0; j < gd; ++j) row[q * gd + j] += e[j];
        }
    }
  return out;
}

struct Quantized {
  IndexGrid indices;
  Tensor dequantized;
};

inline Quantized quantize(const Tensor& features, const VQConfig& cfg, std::span<const Codebook> books) {
  check_codebooks(cfg, books);
  require_dims(features.rank() == 3 && features.dim(2) == cfg.feature_dim,
               "quantize expects [B,N," + std::to_string(cfg.feature_dim) + "], got " + shape_str(features.shape()));
  const std::size_t bsz = features.dim(0), n = features.dim(1), gd = cfg.group_dim();
  IndexGrid grid(bsz, n, cfg.num_codebooks, cfg.num_groups);
  std::vector<float> residual(gd);
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t t = 0; t < n; ++t) {
      auto row = features.row(b * n + t);
      for (std::size_t q = 0; q < cfg.num_groups; ++q) {
        std::copy_n(row.begin() + q * gd, gd, residual.begin());
        for (std::size_t s = 0; s < cfg.num_codebooks; ++s) {
          const auto& cb = books[s * cfg.num_groups + q];
          const std::uint32_t i = cb.nearest(residual);
          grid.at(b, t, s, q) = i;
          auto e = cb.centroid(i);
          for (std::size_t j = 0; j < gd; ++j) residual[j] -= e[j];
        }
      }
    }
  Tensor deq = dequantize(grid, cfg, books);
  return {std::move(grid), std::move(deq)};
}

struct QuantizedVar {
  Var output;
  IndexGrid indices;
  Tensor dequantized;
};

// Forward: quantized features. Backward: identity onto `features`.
inline QuantizedVar ste_quantize(const Var& features, const VQConfig& cfg, std::span<const Codebook> books) {
  auto q = quantize(features.value(), cfg, books);
  Var out = straight_through(features, q.dequantized);
  return {std::move(out), std::move(q.indices), std::move(q.dequantized)};
}

// beta * ||Z - sg(Q(Z))||² summed over channels, averaged over tokens.
inline Var commitment_loss(const Var& pre_quant, const Tensor& dequantized, float beta) {
  return commitment(pre_quant, dequantized, beta);
}

struct KMeansResult {
  Tensor centroids;               // [K, D]
  std::vector<double> distortion;  // mean squared distance after each assignment pass
};

namespace detail {

inline std::size_t nearest_row(std::span<const float> x, const std::vector<float>& cents, std::size_t k,
                               std::size_t d, double* dist_out) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double dist = kernels::squared_distance(x, std::span<const float>(cents).subspan(i * d, d));
    if (dist < best) {
      best = dist;
      arg = i;
    }
  }
  if (dist_out) *dist_out = best;
  return arg;
}

}  // namespace detail

// k-means++ seeding followed by `iters` Lloyd iterations. Empty clusters are
// reseeded to the sample farthest from its current centroid.
inline KMeansResult kmeans(const Tensor& samples, std::size_t k, std::uint64_t seed, std::size_t iters) {
  require_dims(samples.rank() == 2, "kmeans expects samples [M,D]");
  const std::size_t m = samples.dim(0), d = samples.dim(1);
  require(k >= 1, ErrorKind::config, "kmeans needs K >= 1");
  require(m >= k, ErrorKind::config,
          "kmeans needs at least K samples (M=" + std::to_string(m) + ", K=" + std::to_string(k) + ")");
  Rng rng(seed);
  std::vector<float> cents(k * d);
  std::vector<double> best(m, std::numeric_limits<double>::infinity());

  auto set_centroid = [&](std::size_t c, std::size_t sample) {
    std::copy_n(samples.row(sample).begin(), d, cents.begin() + c * d);
  };
  set_centroid(0, rng.below(m));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    auto prev = std::span<const float>(cents).subspan((c - 1) * d, d);
    for (std::size_t i = 0; i < m; ++i) {
      best[i] = std::min(best[i], kernels::squared_distance(samples.row(i), prev));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        target -= best[i];
        if (target < 0.0 && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(m);
    }
    set_centroid(c, pick);
  }

  KMeansResult result;
  std::vector<std::size_t> assign(m);
  std::vector<double> dist(m);
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iters; ++it) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      assign[i] = detail::nearest_row(samples.row(i), cents, k, d, &dist[i]);
      total += dist[i];
    }
    result.distortion.push_back(total / static_cast<double>(m));

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      auto row = samples.row(i);
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += row[j];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        set_centroid(c, far);
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j)
        cents[c * d + j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double dd;
    detail::nearest_row(samples.row(i), cents, k, d, &dd);
    total += dd;
  }
  result.distortion.push_back(total / static_cast<double>(m));
  result.centroids = Tensor({k, d}, std::move(cents));
  return result;
}

inline Codebook kmeans_fit(const Tensor& samples, std::size_t k, std::uint64_t seed, std::size_t iters) {
  auto r = kmeans(samples, k, seed, iters);
  return Codebook(k, samples.dim(1), std::move(r.centroids.vec()));
}

// Fits all n*g codebooks: per group, stage s is fit on the residual left by stages < s.
inline std::vector<Codebook> fit_codebooks(const Tensor& samples, const VQConfig& cfg, std::uint64_t seed,
                                           std::size_t iters) {
  cfg.validate();
  require_dims(samples.rank() == 2 && samples.dim(1) == cfg.feature_dim, "fit_codebooks expects samples [M,C]");
  const std::size_t m = samples.dim(0), gd = cfg.group_dim();
  std::vector<Codebook> books(cfg.total_codebooks(), Codebook(cfg.entries, gd));
  for (std::size_t q = 0; q < cfg.num_groups; ++q) {
    Tensor residual({m, gd});
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(samples.row(i).begin() + q * gd, gd, residual.row(i).begin());
    for (std::size_t s = 0; s < cfg.num_codebooks; ++s) {
      Codebook cb = kmeans_fit(residual, cfg.entries, derive_seed(seed, s * cfg.num_groups + q), iters);
      for (std::size_t i = 0; i < m; ++i) {
        auto row = residual.row(i);
        auto e = cb.centroid(cb.nearest(row));
        for (std::size_t j = 0; j < gd; ++j) row[j] -= e[j];
      }
      books[s * cfg.num_groups + q] = std::move(cb);
    }
  }
  return books;
}

struct EmaOptions {
  float gamma = 0.99f;
  float laplace_eps = 1e-5f;
  std::uint32_t dead_after = 100;  // 0 disables reseeding
};

// One exponential-moving-average step on a codebook.
// samples: rows of length D; assignment[i] is the entry sample i mapped to.
inline void ema_update(Codebook& cb, std::span<const float> samples, std::span<const std::uint32_t> assignment,
                       const EmaOptions& opt, Rng* reseed_rng = nullptr) {
  const std::size_t k = cb.num_entries(), d = cb.dim();
  require_dims(samples.size() == assignment.size() * d, "ema_update: samples do not match assignments");
  require(opt.gamma > 0.0f && opt.gamma < 1.0f, ErrorKind::config, "ema gamma must be in (0,1)");
  std::vector<double> counts(k, 0.0);
  std::vector<double> sums(k * d, 0.0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const std::uint32_t a = assignment[i];
    require(a < k, ErrorKind::config, "ema_update: assignment out of range");
    counts[a] += 1.0;
    for (std::size_t j = 0; j < d; ++j) sums[a * d + j] += samples[i * d + j];
  }
  const double g = opt.gamma;
  auto& size = cb.ema_cluster_size();
  auto& sum = cb.ema_cluster_sum();
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    size[i] = static_cast<float>(g * size[i] + (1.0 - g) * counts[i]);
    total += size[i];
    for (std::size_t j = 0; j < d; ++j)
      sum[i * d + j] = static_cast<float>(g * sum[i * d + j] + (1.0 - g) * sums[i * d + j]);
  }
  std::vector<float> cents(k * d);
  const double eps = opt.laplace_eps;
  for (std::size_t i = 0; i < k; ++i) {
    const double smoothed = (size[i] + eps) / (total + static_cast<double>(k) * eps) * total;
    for (std::size_t j = 0; j < d; ++j) cents[i * d + j] = static_cast<float>(sum[i * d + j] / smoothed);
  }

  auto& unused = cb.unused_steps();
  if (opt.dead_after > 0 && reseed_rng && !assignment.empty()) {
    for (std::size_t i = 0; i < k; ++i) {
      unused[i] = counts[i] > 0.0 ? 0 : unused[i] + 1;
      if (unused[i] < opt.dead_after) continue;
      const std::size_t pick = reseed_rng->below(assignment.size());
      std::copy_n(samples.begin() + pick * d, d, cents.begin() + i * d);
      std::copy_n(samples.begin() + pick * d, d, sum.begin() + i * d);
      size[i] = 1.0f;
      unused[i] = 0;
    }
  }
  cb.set_centroids(std::move(cents));
}

// EMA-updates every codebook from a batch of features and the grid quantize() produced for them.
inline void ema_step(std::vector<Codebook>& books, const Tensor& features, const VQConfig& cfg,
                     const IndexGrid& grid, const EmaOptions& opt, Rng* reseed_rng = nullptr) {
  check_codebooks(cfg, books);
  const std::size_t tokens = features.rows(), gd = cfg.group_dim();
  require_dims(tokens == grid.batch * grid.tokens, "ema_step: features do not match grid");
  std::vector<float> stage_input(tokens * gd);
  std::vector<std::uint32_t> assign(tokens);
  for (std::size_t q = 0; q < cfg.num_groups; ++q) {
    for (std::size_t r = 0; r < tokens; ++r)
      std::copy_n(features.row(r).begin() + q * gd, gd, stage_input.begin() + r * gd);
    for (std::size_t s = 0; s < cfg.num_codebooks; ++s) {
      auto& cb = books[s * cfg.num_groups + q];
      for (std::size_t r = 0; r < tokens; ++r) assign[r] = grid.idx[r * cfg.num_codebooks * cfg.num_groups + s * cfg.num_groups + q];
      // residual for the next stage uses the centroids that produced this grid
      std::vector<float> next = stage_input;
      for (std::size_t r = 0; r < tokens; ++r) {
        auto e = cb.centroid(assign[r]);
        for (std::size_t j = 0; j < gd; ++j) next[r * gd + j] -= e[j];
      }
      ema_update(cb, stage_input, assign, opt, reseed_rng);
      stage_input = std::move(next);
    }
  }
}

// exp(entropy) of the index histogram of codebook (stage, group).
inline double codebook_perplexity(const IndexGrid& grid, std::size_t stage, std::size_t group, std::size_t k) {
  std::vector<double> hist(k, 0.0);
  std::size_t total = 0;
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t t = 0; t < grid.tokens; ++t) {
      hist[grid.at(b, t, stage, group)] += 1.0;
      ++total;
    }
  double h = 0.0;
  for (double c : hist)
    if (c > 0) {
      const double p = c / static_cast<double>(total);
      h -= p * std::log(p);
    }
  return std::exp(h);
}

}  // namespace avq

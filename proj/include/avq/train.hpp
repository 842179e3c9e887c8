#pragma once

// Baseline training and AlignedVQ fine-tuning of the toy encoder.
//
// Fine-tuning objective per batch: cross_entropy + beta * commitment, where the
// commitment term is taken on the dlp_in output. Codebooks follow EMA updates;
// DLP, adapter and (optionally) backbone parameters follow Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "avq/data.hpp"
#include "avq/encoder.hpp"
#include "avq/split.hpp"

namespace avq {

enum class TrainGroup { backbone, dlp, adapter, codebook };

inline std::string_view to_string(TrainGroup g) {
  switch (g) {
    case TrainGroup::backbone: return "backbone";
    case TrainGroup::dlp: return "dlp";
    case TrainGroup::adapter: return "adapter";
    case TrainGroup::codebook: return "codebook";
  }
  return "?";
}

inline TrainGroup parse_train_group(std::string_view s) {
  for (auto g : {TrainGroup::backbone, TrainGroup::dlp, TrainGroup::adapter, TrainGroup::codebook})
    if (s == to_string(g)) return g;
  throw Error(ErrorKind::config, "unknown parameter group '" + std::string(s) + "'");
}

struct TrainConfig {
  float beta = 0.25f;
  float lr = 3e-4f;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  float ema_gamma = 0.99f;
  float laplace_eps = 1e-5f;
  std::uint32_t dead_after = 100;
  std::set<TrainGroup> frozen;  // groups that do not train
  std::size_t adapter_rank = 4;
  float adapter_alpha = 8.0f;
  std::size_t kmeans_samples = 65536;
  std::size_t kmeans_iters = 20;

  bool trains(TrainGroup g) const { return !frozen.count(g); }

  void validate() const {
    require(beta >= 0.0f, ErrorKind::config, "beta must be >= 0");
    require(lr >= 0.0f && batch_size >= 1, ErrorKind::config, "lr must be >= 0 and batch_size >= 1");
    require(ema_gamma > 0.0f && ema_gamma < 1.0f, ErrorKind::config, "ema_gamma must be in (0,1)");
  }
};

// Defaults for the fine-tuning stage: backbone frozen, smaller step.
inline TrainConfig finetune_defaults() {
  TrainConfig c;
  c.lr = 1e-4f;
  c.epochs = 5;
  c.frozen = {TrainGroup::backbone};
  return c;
}

struct EpochStats {
  double task_loss = 0.0;
  double commit_loss = 0.0;  // unscaled commitment term
  double total_loss = 0.0;   // task + beta * commit
  double perplexity = 0.0;   // mean over codebooks; 0 without VQ
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;

  static constexpr std::string_view kCsvHeader = "epoch,task_loss,commit_loss,total_loss,perplexity,val_accuracy";

  std::string csv() const {
    std::ostringstream os;
    os << kCsvHeader << '\n' << std::setprecision(9);
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto& e = epochs[i];
      os << i + 1 << ',' << e.task_loss << ',' << e.commit_loss << ',' << e.total_loss << ',' << e.perplexity << ','
         << e.val_accuracy << '\n';
    }
    return os.str();
  }

  void print_table(std::ostream& os) const {
    os << std::left << std::setw(7) << "epoch" << std::setw(12) << "task" << std::setw(12) << "commit"
       << std::setw(12) << "total" << std::setw(12) << "perplexity" << "val_acc\n";
    os << std::fixed;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto& e = epochs[i];
      os << std::setw(7) << i + 1 << std::setprecision(5) << std::setw(12) << e.task_loss << std::setw(12)
         << e.commit_loss << std::setw(12) << e.total_loss << std::setprecision(2) << std::setw(12) << e.perplexity
         << std::setprecision(4) << e.val_accuracy << '\n';
    }
    os.unsetf(std::ios::floatfield);
  }

  friend bool operator==(const TrainReport& a, const TrainReport& b) {
    if (a.epochs.size() != b.epochs.size()) return false;
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
      const auto &x = a.epochs[i], &y = b.epochs[i];
      if (x.task_loss != y.task_loss || x.commit_loss != y.commit_loss || x.total_loss != y.total_loss ||
          x.perplexity != y.perplexity || x.val_accuracy != y.val_accuracy)
        return false;
    }
    return true;
  }
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainReport partial)
      : Error(ErrorKind::numeric, what), report(std::move(partial)) {}
  TrainReport report;
};

class Adam {
 public:
  Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Var>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(static_cast<double>(b1_), static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(static_cast<double>(b2_), static_cast<double>(t_));
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      auto& st = state_[p.node()];
      auto& value = p.node()->value;
      if (st.m.empty()) {
        st.m.assign(value.size(), 0.0f);
        st.v.assign(value.size(), 0.0f);
      }
      auto g = p.node()->grad.data();
      auto w = value.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        st.m[i] = b1_ * st.m[i] + (1.0f - b1_) * g[i];
        st.v[i] = b2_ * st.v[i] + (1.0f - b2_) * g[i] * g[i];
        const double mh = st.m[i] / c1, vh = st.v[i] / c2;
        w[i] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  float lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::unordered_map<Node*, Moments> state_;
};

inline std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

enum class EvalPath { monolithic, split };

// Top-1 accuracy over `idx`. The split path goes through payload bytes.
inline double evaluate(const Model& m, const SyntheticDataset& ds, std::span<const std::size_t> idx,
                       EvalPath path = EvalPath::monolithic, std::size_t batch_size = 64) {
  if (idx.empty()) return 0.0;
  NoGradGuard ng;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    auto chunk = idx.subspan(start, std::min(batch_size, idx.size() - start));
    auto [images, labels] = ds.batch(chunk);
    Tensor logits;
    if (path == EvalPath::split) {
      auto edge = edge_run(m, images);
      logits = cloud_run(m, edge.payload).logits;
    } else {
      logits = encoder_forward(m, images).logits.value();
    }
    for (std::size_t i = 0; i < labels.size(); ++i)
      correct += static_cast<int>(argmax_row(logits.row(i))) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

inline double evaluate_val(const Model& m, const SyntheticDataset& ds, EvalPath path = EvalPath::monolithic) {
  return evaluate(m, ds, ds.val_idx, path);
}

namespace detail {

// Parameters Adam should update, with requires_grad set accordingly.
inline std::vector<Var> select_trainable(Model& m, const TrainConfig& cfg) {
  std::vector<Var> out;
  m.visit([&](const std::string&, Var& v, ParamGroup g) {
    const TrainGroup tg = g == ParamGroup::backbone ? TrainGroup::backbone
                          : g == ParamGroup::dlp    ? TrainGroup::dlp
                                                    : TrainGroup::adapter;
    const bool on = cfg.trains(tg);
    v.set_requires_grad(on);
    v.zero_grad();
    if (on) out.push_back(v);
  });
  return out;
}

inline void restore_requires_grad(Model& m) {
  m.visit([](const std::string&, Var& v, ParamGroup) {
    v.set_requires_grad(true);
    v.zero_grad();
  });
}

struct EpochAccumulator {
  double task = 0, commit = 0, total = 0;
  std::size_t batches = 0;
  std::vector<std::vector<double>> hist;  // per codebook
};

inline double mean_perplexity(const EpochAccumulator& acc) {
  if (acc.hist.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& h : acc.hist) {
    const double total = std::accumulate(h.begin(), h.end(), 0.0);
    double ent = 0.0;
    for (double c : h)
      if (c > 0) ent -= (c / total) * std::log(c / total);
    sum += std::exp(ent);
  }
  return sum / static_cast<double>(acc.hist.size());
}

inline TrainReport run_epochs(Model& m, const SyntheticDataset& ds, const TrainConfig& cfg) {
  std::vector<Var> params = select_trainable(m, cfg);
  Adam opt(cfg.lr);
  Rng order_rng(derive_seed(cfg.seed, 7));
  Rng reseed_rng(derive_seed(cfg.seed, 11));
  const bool ema = m.quantized() && cfg.trains(TrainGroup::codebook);
  const EmaOptions ema_opt{cfg.ema_gamma, cfg.laplace_eps, cfg.dead_after};
  std::vector<std::size_t> order = ds.train_idx;
  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    EpochAccumulator acc;
    if (m.quantized())
      acc.hist.assign(m.vq->config.total_codebooks(), std::vector<double>(m.vq->config.entries, 0.0));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::span<const std::size_t> chunk(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      auto [images, labels] = ds.batch(chunk);
      auto fwd = encoder_forward(m, images);
      Var task = cross_entropy(fwd.logits, labels);
      Var loss = task;
      double commit_v = 0.0;
      if (fwd.vq) {
        commit_v = fwd.vq->commit.value()[0];
        if (cfg.beta > 0.0f) loss = add(task, mul_scalar(fwd.vq->commit, cfg.beta));
      }
      const double task_v = task.value()[0];
      const double total_v = task_v + static_cast<double>(cfg.beta) * commit_v;
      if (!std::isfinite(total_v)) {
        restore_requires_grad(m);
        throw TrainingDiverged("loss became non-finite in epoch " + std::to_string(epoch + 1), report);
      }
      for (auto& p : params) p.zero_grad();
      backward(loss);
      if (cfg.lr > 0.0f) opt.step(params);
      if (fwd.vq) {
        const auto& grid = fwd.vq->indices;
        const std::size_t ng = m.vq->config.total_codebooks();
        for (std::size_t r = 0; r < grid.batch * grid.tokens; ++r)
          for (std::size_t k = 0; k < ng; ++k) acc.hist[k][grid.idx[r * ng + k]] += 1.0;
        if (ema) {
          Tensor pre = fwd.vq->pre_quant;
          ema_step(m.vq->codebooks, pre, m.vq->config, grid, ema_opt, &reseed_rng);
        }
      }
      acc.task += task_v;
      acc.commit += commit_v;
      acc.total += total_v;
      ++acc.batches;
    }
    EpochStats st;
    const double nb = static_cast<double>(std::max<std::size_t>(acc.batches, 1));
    st.task_loss = acc.task / nb;
    st.commit_loss = acc.commit / nb;
    st.total_loss = acc.total / nb;
    st.perplexity = mean_perplexity(acc);
    st.val_accuracy = evaluate_val(m, ds);
    report.epochs.push_back(st);
  }
  restore_requires_grad(m);
  return report;
}

}  // namespace detail

inline TrainReport train_baseline(Model& m, const SyntheticDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  require(!m.quantized(), ErrorKind::config, "baseline training expects a model without an AlignedVQ module");
  require(ds.cfg.num_classes == m.cfg.num_classes && ds.cfg.image_size == m.cfg.image_size, ErrorKind::config,
          "dataset does not match model config");
  return detail::run_epochs(m, ds, cfg);
}

// Partition-tensor samples (dlp_in output) from the training split, capped at `budget` rows.
inline Tensor collect_partition_samples(const Model& m, const SyntheticDataset& ds, std::size_t budget,
                                        std::size_t batch_size = 64) {
  NoGradGuard ng;
  const std::size_t c = m.cfg.embed_dim;
  std::vector<float> rows;
  for (std::size_t start = 0; start < ds.train_idx.size() && rows.size() / c < budget; start += batch_size) {
    std::span<const std::size_t> chunk(ds.train_idx.data() + start,
                                       std::min(batch_size, ds.train_idx.size() - start));
    auto [images, labels] = ds.batch(chunk);
    Tensor z = dlp_in(Var::constant(edge_features(m, images)), m.vq->dlp).value();
    rows.insert(rows.end(), z.data().begin(), z.data().end());
  }
  const std::size_t n = std::min(budget, rows.size() / c);
  rows.resize(n * c);
  return Tensor({n, c}, std::move(rows));
}

// Attaches AlignedVQ at `where`, fits codebooks by k-means on a warm-up pass.
inline void attach_vq_with_kmeans(Model& m, const PartitionSpec& where, const VQConfig& vcfg,
                                  const SyntheticDataset& ds, const TrainConfig& cfg) {
  m.attach_vq(where, vcfg, derive_seed(cfg.seed, 3));
  Tensor samples = collect_partition_samples(m, ds, cfg.kmeans_samples);
  m.vq->codebooks = fit_codebooks(samples, vcfg, derive_seed(cfg.seed, 5), cfg.kmeans_iters);
}

inline TrainReport finetune_alignedvq(Model& m, const PartitionSpec& where, const VQConfig& vcfg,
                                      const SyntheticDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  m.cfg.check_partition(where);
  require(where.active(), ErrorKind::config, "fine-tuning needs a partition location other than NONE");
  require(vcfg.feature_dim == m.cfg.embed_dim, ErrorKind::config, "codebook dim does not match embed_dim");
  attach_vq_with_kmeans(m, where, vcfg, ds, cfg);
  if (cfg.trains(TrainGroup::adapter) && !m.adapter)
    m.attach_adapter(cfg.adapter_rank, cfg.adapter_alpha, derive_seed(cfg.seed, 9));
  return detail::run_epochs(m, ds, cfg);
}

}  // namespace avq

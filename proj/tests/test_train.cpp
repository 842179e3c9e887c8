#include <gtest/gtest.h>

#include "support.hpp"

using namespace avq;
using avq::testing::bit_equal;

namespace {

ModelConfig tiny_model(std::uint64_t seed = 1) {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.seed = seed;
  return c;
}

SyntheticDataset tiny_data(std::size_t per_class = 12, std::uint64_t seed = 0) {
  DataConfig dc;
  dc.image_size = 16;
  dc.samples_per_class = per_class;
  dc.seed = seed;
  return generate(dc);
}

TrainConfig quick(std::size_t epochs, float lr = 3e-3f) {
  TrainConfig t;
  t.epochs = epochs;
  t.lr = lr;
  t.batch_size = 16;
  return t;
}

TrainConfig quick_finetune(std::size_t epochs) {
  TrainConfig t = finetune_defaults();
  t.epochs = epochs;
  t.batch_size = 16;
  t.kmeans_iters = 5;
  return t;
}

std::map<std::string, Tensor> snapshot(Model& m, std::optional<ParamGroup> only = std::nullopt) {
  std::map<std::string, Tensor> out;
  m.visit([&](const std::string& name, Var& v, ParamGroup g) {
    if (!only || g == *only) out[name] = v.value();
  });
  return out;
}

bool same_params(const std::map<std::string, Tensor>& a, const std::map<std::string, Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a)
    if (!bit_equal(v, b.at(k))) return false;
  return true;
}

// Baseline shared by the fine-tuning tests.
const Model& trained_tiny() {
  static const Model m = [] {
    Model x = Model::init(tiny_model());
    train_baseline(x, tiny_data(), quick(6));
    return x;
  }();
  return m;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  Model m = Model::init(tiny_model());
  auto before = snapshot(m);
  train_baseline(m, tiny_data(4), quick(1, 0.0f));
  EXPECT_TRUE(same_params(before, snapshot(m)));
}

TEST(Train, SameSeedGivesIdenticalReport) {
  auto run = [] {
    Model m = Model::init(tiny_model());
    return train_baseline(m, tiny_data(4), quick(2));
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.epochs.size(), 2u);
}

TEST(Train, ReportCsvHasDocumentedColumns) {
  Model m = Model::init(tiny_model());
  auto r = train_baseline(m, tiny_data(2), quick(1));
  const std::string csv = r.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,task_loss,commit_loss,total_loss,perplexity,val_accuracy");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Train, BaselineRejectsAttachedVq) {
  Model m = trained_tiny().clone();
  m.attach_vq({0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, 0);
  EXPECT_ERROR_KIND(train_baseline(m, tiny_data(2), quick(1)), config);
}

TEST(Train, DivergenceAbortsWithPartialReport) {
  Model m = Model::init(tiny_model());
  try {
    train_baseline(m, tiny_data(4), quick(3, 1e30f));
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_LT(e.report.epochs.size(), 3u);
  }
}

TEST(Evaluate, PureAndChanceLevelForRandomWeights) {
  Model m = Model::init(tiny_model(3));
  auto ds = tiny_data(100);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const double a = evaluate(m, ds, all), b = evaluate(m, ds, all);
  EXPECT_EQ(a, b);
  EXPECT_NEAR(a, 0.1, 0.05);
}

TEST(Evaluate, TrainSubsetBeatsValidationOnConvergedModel) {
  Model m = Model::init(tiny_model());
  DataConfig dc;
  dc.image_size = 16;
  dc.samples_per_class = 8;
  dc.noise_sigma = 0.6;  // hard enough that validation accuracy stays below 100%
  auto ds = generate(dc);
  train_baseline(m, ds, quick(40));
  EXPECT_GT(evaluate(m, ds, ds.train_idx), evaluate_val(m, ds));
}

TEST(Finetune, FrozenBackboneIsBitIdenticalAfterwards) {
  Model m = trained_tiny().clone();
  auto before = snapshot(m, ParamGroup::backbone);
  auto ds = tiny_data();
  finetune_alignedvq(m, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, ds, quick_finetune(2));
  EXPECT_TRUE(same_params(before, snapshot(m, ParamGroup::backbone)));
  EXPECT_TRUE(m.adapter.has_value());
}

TEST(Finetune, TotalLossIsTaskPlusBetaCommit) {
  Model m = trained_tiny().clone();
  auto cfg = quick_finetune(2);
  cfg.beta = 0.7f;
  auto r = finetune_alignedvq(m, {1, TapLocation::ln2}, VQConfig{1, 1, 16, 16}, tiny_data(), cfg);
  for (const auto& e : r.epochs) {
    EXPECT_NEAR(e.total_loss, e.task_loss + 0.7 * e.commit_loss, 1e-6);
    EXPECT_GT(e.commit_loss, 0.0);
  }
}

TEST(Finetune, CodebookStaysAlive) {
  Model m = trained_tiny().clone();
  const std::size_t k = 16;
  auto r = finetune_alignedvq(m, {0, TapLocation::ln1}, VQConfig{1, 1, k, 16}, tiny_data(), quick_finetune(3));
  EXPECT_GT(r.epochs.back().perplexity, 0.05 * k);
}

TEST(Finetune, CodebookOnlyWithZeroBetaLeavesParametersFixed) {
  Model m = trained_tiny().clone();
  auto cfg = quick_finetune(2);
  cfg.beta = 0.0f;
  cfg.frozen = {TrainGroup::backbone, TrainGroup::dlp, TrainGroup::adapter};
  auto ds = tiny_data();
  // Reference: the same k-means start, then only EMA steps.
  Model ref = trained_tiny().clone();
  attach_vq_with_kmeans(ref, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, ds, cfg);
  const auto kmeans_hash = ref.vq->hashes();
  const auto before = snapshot(ref);
  finetune_alignedvq(m, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, ds, cfg);
  EXPECT_TRUE(same_params(before, snapshot(m)));
  EXPECT_NE(m.vq->hashes(), kmeans_hash);
  EXPECT_FALSE(m.adapter.has_value());
}

TEST(Finetune, FrozenCodebookKeepsKMeansCentroids) {
  Model m = trained_tiny().clone();
  auto cfg = quick_finetune(1);
  cfg.frozen = {TrainGroup::backbone, TrainGroup::codebook};
  auto ds = tiny_data();
  Model ref = trained_tiny().clone();
  attach_vq_with_kmeans(ref, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, ds, cfg);
  finetune_alignedvq(m, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, ds, cfg);
  EXPECT_EQ(m.vq->hashes(), ref.vq->hashes());
}

TEST(Finetune, CommitmentMovingAverageDoesNotIncrease) {
  Model m = trained_tiny().clone();
  auto r = finetune_alignedvq(m, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, tiny_data(), quick_finetune(10));
  std::vector<double> ma;
  for (std::size_t i = 0; i + 5 <= r.epochs.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 5; ++j) s += r.epochs[j].commit_loss;
    ma.push_back(s / 5.0);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) EXPECT_LE(ma[i], ma[i - 1]) << "window " << i;
}

TEST(Finetune, InvalidPartitionOrWidthIsConfigError) {
  Model m = trained_tiny().clone();
  auto ds = tiny_data(2);
  EXPECT_ERROR_KIND(finetune_alignedvq(m, {5, TapLocation::ln1}, VQConfig{1, 1, 16, 16}, ds, quick_finetune(1)), config);
  EXPECT_ERROR_KIND(finetune_alignedvq(m, {0, TapLocation::none}, VQConfig{1, 1, 16, 16}, ds, quick_finetune(1)),
                    config);
  EXPECT_ERROR_KIND(finetune_alignedvq(m, {0, TapLocation::ln1}, VQConfig{1, 1, 16, 8}, ds, quick_finetune(1)), config);
}

// Default toy model on the default (sigma = 0.05) data.
TEST(TrainSlow, DefaultConfigReachesNinetyFivePercent) {
  Model m = Model::init(ModelConfig{});
  auto ds = generate(DataConfig{});
  TrainConfig cfg;  // 20 epochs
  auto r = train_baseline(m, ds, cfg);
  double best = 0.0;
  for (const auto& e : r.epochs) best = std::max(best, e.val_accuracy);
  EXPECT_GE(best, 0.95);
}

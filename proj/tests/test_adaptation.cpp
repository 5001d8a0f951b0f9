#include <gtest/gtest.h>
#include <torch/torch.h>

#include <map>

#include "dcl/adaptation.hpp"
#include "dcl/commands.hpp"
#include "dcl/errors.hpp"
#include "oracles.hpp"

namespace {

dcl::KeyValueConfig tiny_config() {
  return dcl::KeyValueConfig::parse(R"(
model.resolution = 32
model.z_dim = 16
model.g_base_channels = 8
model.d_base_channels = 8
data.source_train = 64
data.source_val = 32
data.target_pool = 20
data.target_eval = 32
pretrain.classifier_steps = 10
pretrain.featnet_steps = 10
adapt.shots = 4
adapt.iterations = 8
adapt.probe_interval = 4
adapt.probe_batch = 16
eval.pair_budget = 10
)");
}

/// Source checkpoint, evaluator and few-shot targets shared by the tests.
struct Fixture {
  dcl::ExperimentConfig cfg;
  dcl::Checkpoint source;
  dcl::Evaluator evaluator;
  dcl::ImageBatch targets;

  static Fixture& get() {
    static Fixture f = [] {
      Fixture out;
      out.cfg = dcl::resolve_experiment(tiny_config());
      auto [src_spec, tgt_spec] = dcl::dataset_specs(out.cfg);
      auto src = dcl::materialize(src_spec, "train");
      auto pool = dcl::materialize(tgt_spec, "pool");
      out.evaluator = dcl::build_evaluator(out.cfg, src, dcl::materialize(tgt_spec, "eval"));
      auto models = dcl::initialize_models(out.cfg.model, 0);
      out.source = dcl::make_source_checkpoint(out.cfg.model, models);
      out.targets = dcl::sample_few_shot(pool, 4, 0).shots.images;
      return out;
    }();
    return f;
  }

  dcl::AdaptationRun run(const std::vector<std::string>& overrides) {
    auto kv = tiny_config();
    kv.apply_overrides(overrides);
    auto c = dcl::resolve_experiment(kv);
    return dcl::adapt(c, source, targets, &evaluator);
  }
};

TEST(Adaptation, EveryMethodRunsAndLogs) {
  auto& f = Fixture::get();
  for (const char* m : {"dcl", "tgan", "freezed", "ewc", "cdc"}) {
    auto run = f.run({std::string("adapt.method=") + m});
    ASSERT_EQ(run.series.points().size(), 3u) << m;
    EXPECT_EQ(run.series.points()[0].iteration, 0);
    EXPECT_EQ(run.series.back().iteration, 8);
    EXPECT_EQ(run.losses.size(), 8u);
    EXPECT_EQ(run.d_steps, 8);
    EXPECT_EQ(run.g_steps, 8);
    EXPECT_EQ(run.source_hash_before, run.source_hash_after) << m;
    const auto& last = run.losses.back();
    if (std::string(m) == "dcl") {
      EXPECT_GT(last.g.cl1, 0.0);
      EXPECT_GT(last.g.cl2, 0.0);
      EXPECT_GT(last.d.cl2, 0.0);
    } else {
      EXPECT_EQ(last.g.cl1, 0.0) << m;
      EXPECT_EQ(last.d.cl2, 0.0) << m;
    }
    if (std::string(m) == "cdc" || std::string(m) == "ewc") EXPECT_GT(last.g.aux, 0.0) << m;
  }
}

TEST(Adaptation, IdenticalSeedsGiveIdenticalLogs) {
  auto& f = Fixture::get();
  auto a = f.run({"adapt.seed=5"});
  auto b = f.run({"adapt.seed=5"});
  auto c = f.run({"adapt.seed=6"});
  EXPECT_EQ(a.series.to_csv(), b.series.to_csv());
  EXPECT_EQ(dcl::losses_csv(a.losses), dcl::losses_csv(b.losses));
  EXPECT_NE(dcl::losses_csv(a.losses), dcl::losses_csv(c.losses));
}

TEST(Adaptation, ZeroWeightDclReproducesTgan) {
  auto& f = Fixture::get();
  auto plain = f.run({"adapt.method=tgan", "adapt.seed=2"});
  auto reduced = f.run({"adapt.method=dcl", "adapt.seed=2", "adapt.lambda1=0", "adapt.lambda2=0"});
  EXPECT_EQ(plain.series.to_csv(), reduced.series.to_csv());
  EXPECT_EQ(dcl::parameter_hash(*plain.generator), dcl::parameter_hash(*reduced.generator));
}

TEST(Adaptation, FreezeDKeepsLowLevelsFixed) {
  auto& f = Fixture::get();
  auto run = f.run({"adapt.method=freezed", "adapt.freeze_d_layers=2"});
  auto source = dcl::load_source_models(f.source, f.cfg.model);
  auto before = source.discriminator->level_parameters(2);
  auto after = run.discriminator->level_parameters(2);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i], after[i]));
  bool moved = false;
  auto all_before = source.discriminator->parameters(), all_after = run.discriminator->parameters();
  for (std::size_t i = 0; i < all_before.size(); ++i) moved |= !torch::equal(all_before[i], all_after[i]);
  EXPECT_TRUE(moved);
}

TEST(Adaptation, RejectsWrongShotCount) {
  auto& f = Fixture::get();
  auto kv = tiny_config();
  kv.set("adapt.shots", "5");
  EXPECT_THROW(dcl::adapt(dcl::resolve_experiment(kv), f.source, f.targets, &f.evaluator), dcl::InputError);
}

TEST(Adaptation, PeriodicCheckpointsRestoreWeights) {
  auto& f = Fixture::get();
  auto run = f.run({"adapt.checkpoint_interval=4"});
  ASSERT_EQ(run.periodic.size(), 1u);
  EXPECT_EQ(run.periodic[0].iteration, 4);
  auto restored = dcl::load_adapted_models(run.final_checkpoint, f.cfg.model);
  EXPECT_EQ(dcl::parameter_hash(*restored.generator), dcl::parameter_hash(*run.generator));
}

TEST(TapSampling, UniformOverSubsets) {
  // Pool of 4 levels, k = 2: 6 subsets, chi-square with 5 dof, 99.9th percentile 20.5.
  std::mt19937_64 rng(3);
  std::map<dcl::TapSet, std::int64_t> seen;
  for (int i = 0; i < 6000; ++i) ++seen[dcl::sample_tap_layers(rng, {0, 1, 2, 3}, 2)];
  ASSERT_EQ(seen.size(), 6u);
  std::vector<std::int64_t> counts;
  for (const auto& [set, n] : seen) {
    EXPECT_TRUE(std::is_sorted(set.begin(), set.end()));
    counts.push_back(n);
  }
  EXPECT_LT(oracle::chi_square_uniform(counts), 20.5);
  EXPECT_THROW(dcl::sample_tap_layers(rng, {0, 1}, 3), dcl::ConfigError);
}

TEST(FreezeDiscriminator, RangeIsChecked) {
  auto& f = Fixture::get();
  auto models = dcl::load_source_models(f.source, f.cfg.model);
  const int levels = models.discriminator->options().levels();
  EXPECT_NO_THROW(dcl::freeze_discriminator_layers(models.discriminator, levels + 1));
  EXPECT_THROW(dcl::freeze_discriminator_layers(models.discriminator, levels + 2), dcl::ConfigError);
  EXPECT_THROW(dcl::freeze_discriminator_layers(models.discriminator, -1), dcl::ConfigError);
}

}  // namespace

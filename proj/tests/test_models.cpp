#include <gtest/gtest.h>
#include <torch/torch.h>

#include <filesystem>
#include <fstream>

#include "dcl/checkpoint.hpp"
#include "dcl/config.hpp"
#include "dcl/errors.hpp"
#include "dcl/models.hpp"

namespace fs = std::filesystem;

namespace {

dcl::GeneratorOptions small_g() {
  dcl::GeneratorOptions o;
  o.resolution = 32;
  o.z_dim = 16;
  o.base_channels = 8;
  return o;
}

dcl::DiscriminatorOptions small_d() {
  dcl::DiscriminatorOptions o;
  o.resolution = 32;
  o.base_channels = 8;
  return o;
}

TEST(Generator, LevelsAndTappedShapes) {
  dcl::Generator g(small_g());
  auto gen = dcl::make_cpu_generator(0);
  dcl::init_parameters(*g, gen);
  EXPECT_EQ(g->options().levels(), 3);
  auto z = dcl::LatentBatch::sample(5, 16, gen);
  auto out = dcl::generator_forward(g, z, g->all_levels());
  EXPECT_EQ(out.images.data.sizes(), (std::vector<int64_t>{5, 3, 32, 32}));
  EXPECT_LE(out.images.data.abs().max().item<float>(), 1.0f);
  for (int level : g->all_levels()) {
    EXPECT_EQ(out.features.at(level).size(2), 32 >> level);
    EXPECT_EQ(out.features.at(level).size(1), g->options().channels(level));
  }
  EXPECT_THROW(dcl::generator_forward(g, z, {42}), dcl::ConfigError);
  // Tapping does not change the images.
  EXPECT_TRUE(torch::equal(g->forward(z.data), out.images.data));
}

TEST(Generator, CloneFrozenIsIndependent) {
  dcl::Generator g(small_g());
  auto gen = dcl::make_cpu_generator(1);
  dcl::init_parameters(*g, gen);
  auto frozen = dcl::clone_frozen(g);
  EXPECT_TRUE(frozen->frozen());
  EXPECT_EQ(dcl::parameter_hash(*frozen), dcl::parameter_hash(*g));
  for (auto& p : frozen->parameters()) EXPECT_FALSE(p.requires_grad());
  {
    torch::NoGradGuard no_grad;
    g->parameters().front().add_(1.0);
  }
  EXPECT_NE(dcl::parameter_hash(*frozen), dcl::parameter_hash(*g));
}

TEST(Discriminator, FreezeLevelsStopsGradients) {
  dcl::Discriminator d(small_d());
  auto gen = dcl::make_cpu_generator(2);
  dcl::init_parameters(*d, gen);
  d->freeze_levels(2);
  auto frozen = d->level_parameters(2);
  ASSERT_FALSE(frozen.empty());
  for (auto& p : frozen) EXPECT_FALSE(p.requires_grad());
  EXPECT_EQ(d->trainable_parameters().size() + frozen.size(), d->parameters().size());
  auto x = torch::randn({3, 3, 32, 32}, gen);
  dcl::FeaturePyramid taps;
  auto logits = d->forward_tapped(x, d->all_levels(), taps);
  EXPECT_EQ(logits.sizes(), (std::vector<int64_t>{3}));
  EXPECT_EQ(taps.at(0).size(2), 32);
  EXPECT_EQ(taps.at(d->options().levels()).size(2), 4);
}

TEST(Discriminator, PatchHeadProducesLogitMap) {
  auto opts = small_d();
  opts.patch_head = true;
  dcl::Discriminator d(opts);
  dcl::FeaturePyramid taps;
  auto logits = d->forward_tapped(torch::zeros({2, 3, 32, 32}), {}, taps, dcl::DiscriminatorHead::Patch);
  EXPECT_EQ(logits.dim(), 4);
  EXPECT_EQ(logits.size(0), 2);
}

TEST(Classifier, UntrainedModelsAreRefused) {
  dcl::Classifier c(dcl::ClassifierOptions{32});
  dcl::ImageBatch x{torch::zeros({2, 3, 32, 32})};
  EXPECT_THROW(dcl::classifier_predict(c, x), dcl::ConfigError);
  auto p = dcl::classifier_predict(c, x, true);
  EXPECT_TRUE(torch::all((p >= 0) & (p <= 1)).item<bool>());
}

// ---------------------------------------------------------------------------

fs::path tmp_file(const std::string& name) { return fs::temp_directory_path() / ("dcl_ckpt_" + name); }

TEST(Checkpoint, RoundTripRestoresModulesOptimizerAndRng) {
  dcl::Generator g(small_g());
  auto gen = dcl::make_cpu_generator(3);
  dcl::init_parameters(*g, gen);
  torch::optim::Adam opt(g->parameters(), torch::optim::AdamOptions(1e-3));
  auto z = dcl::LatentBatch::sample(4, 16, gen);
  g->forward(z.data).mean().backward();
  opt.step();

  std::mt19937_64 engine(77);
  engine.discard(13);
  dcl::Checkpoint ckpt;
  ckpt.config_hash = 1234;
  ckpt.meta["kind"] = "test";
  dcl::store_module(ckpt, "generator", *g);
  dcl::store_adam(ckpt, "generator", opt, g->parameters());
  dcl::store_generator_state(ckpt, "torch", gen);
  dcl::store_engine_state(ckpt, "taps", engine);
  const auto path = tmp_file("roundtrip.ckpt");
  dcl::save_checkpoint(ckpt, path);

  auto loaded = dcl::load_checkpoint(path, 1234);
  EXPECT_EQ(loaded.meta.at("kind"), "test");
  dcl::Generator g2(small_g());
  dcl::restore_module(loaded, "generator", *g2);
  EXPECT_EQ(dcl::parameter_hash(*g2), dcl::parameter_hash(*g));

  torch::optim::Adam opt2(g2->parameters(), torch::optim::AdamOptions(1e-3));
  dcl::restore_adam(loaded, "generator", opt2, g2->parameters());
  auto gen2 = dcl::make_cpu_generator(999);
  dcl::restore_generator_state(loaded, "torch", gen2);
  std::mt19937_64 engine2;
  dcl::restore_engine_state(loaded, "taps", engine2);
  EXPECT_EQ(engine2(), engine());

  // One more identical step from both states lands on identical parameters.
  auto za = dcl::LatentBatch::sample(4, 16, gen), zb = dcl::LatentBatch::sample(4, 16, gen2);
  EXPECT_TRUE(torch::equal(za.data, zb.data));
  opt.zero_grad();
  opt2.zero_grad();
  g->forward(za.data).mean().backward();
  g2->forward(zb.data).mean().backward();
  opt.step();
  opt2.step();
  EXPECT_EQ(dcl::parameter_hash(*g2), dcl::parameter_hash(*g));
  fs::remove(path);
}

TEST(Checkpoint, DetectsCorruptionAndConfigMismatch) {
  dcl::Checkpoint ckpt;
  ckpt.config_hash = 5;
  ckpt.put("a", torch::arange(10, torch::kFloat32));
  const auto path = tmp_file("corrupt.ckpt");
  dcl::save_checkpoint(ckpt, path);
  EXPECT_THROW(dcl::load_checkpoint(path, 6), dcl::ConfigError);
  EXPECT_NO_THROW(dcl::load_checkpoint(path, 6, true));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
  }
  EXPECT_THROW(dcl::load_checkpoint(path), dcl::MissingInputError);
  EXPECT_THROW(dcl::load_checkpoint(tmp_file("absent.ckpt")), dcl::MissingInputError);
  fs::remove(path);
}

// ---------------------------------------------------------------------------

TEST(Config, ParsesOverridesAndDumpsCanonically) {
  auto kv = dcl::KeyValueConfig::parse("# comment\nadapt.shots = 5\n\nadapt.method = cdc  # inline\n");
  kv.apply_overrides({"adapt.seed=3"});
  auto cfg = dcl::resolve_experiment(kv);
  EXPECT_EQ(cfg.adapt.shots, 5);
  EXPECT_EQ(cfg.adapt.method, dcl::Method::Cdc);
  EXPECT_EQ(cfg.adapt.seed, 3u);
  EXPECT_DOUBLE_EQ(cfg.adapt.lambda1, 2.0);
  EXPECT_DOUBLE_EQ(cfg.adapt.tau, 0.07);
  auto again = dcl::resolve_experiment(dcl::KeyValueConfig::parse(cfg.resolved.dump()));
  EXPECT_EQ(again.resolved.dump(), cfg.resolved.dump());
}

TEST(Config, RejectsBadInput) {
  auto resolve = [](const std::string& text) { return dcl::resolve_experiment(dcl::KeyValueConfig::parse(text)); };
  EXPECT_THROW(resolve("adapt.nonsense = 1"), dcl::ConfigError);
  EXPECT_THROW(resolve("adapt.method = gan"), dcl::ConfigError);
  EXPECT_THROW(resolve("adapt.shots = many"), dcl::ConfigError);
  EXPECT_THROW(resolve("adapt.lambda1 = -1"), dcl::ConfigError);
  EXPECT_THROW(resolve("adapt.tau = 0"), dcl::ConfigError);
  EXPECT_THROW(resolve("adapt.shots = 0"), dcl::ConfigError);
  EXPECT_THROW(resolve("model.resolution = 48"), dcl::ConfigError);
  EXPECT_THROW(resolve("no equals sign"), dcl::ConfigError);
  EXPECT_THROW(dcl::KeyValueConfig::from_file("/nonexistent/config.cfg"), dcl::MissingInputError);
}

TEST(Config, MethodIdsRoundTrip) {
  for (auto m : {dcl::Method::Dcl, dcl::Method::Tgan, dcl::Method::FreezeD, dcl::Method::Ewc, dcl::Method::Cdc}) {
    EXPECT_EQ(dcl::parse_method(dcl::to_string(m)), m);
  }
  try {
    dcl::parse_method("stylegan");
    FAIL();
  } catch (const dcl::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("tgan"), std::string::npos);
  }
}

TEST(Config, ModelHashTracksArchitecture) {
  auto a = dcl::resolve_experiment(dcl::KeyValueConfig::parse("model.resolution = 32"));
  auto b = dcl::resolve_experiment(dcl::KeyValueConfig::parse("model.resolution = 64"));
  auto c = dcl::resolve_experiment(dcl::KeyValueConfig::parse("model.resolution = 32\nadapt.seed = 9"));
  EXPECT_NE(a.model.hash(), b.model.hash());
  EXPECT_EQ(a.model.hash(), c.model.hash());
}

}  // namespace

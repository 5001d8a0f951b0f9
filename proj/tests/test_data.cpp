#include <gtest/gtest.h>
#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dcl/data.hpp"
#include "dcl/errors.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

dcl::SyntheticStyle small_style() {
  dcl::SyntheticStyle s;
  s.resolution = 32;
  return s;
}

dcl::ToyDomainSizes small_sizes() { return {40, 10, 30, 20}; }

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dcl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Synthetic, MaterializeIsDeterministicAndSeedSensitive) {
  auto [src_a, tgt_a] = dcl::synthesize_toy_domains(5, small_style(), small_sizes());
  auto [src_b, tgt_b] = dcl::synthesize_toy_domains(5, small_style(), small_sizes());
  auto [src_c, tgt_c] = dcl::synthesize_toy_domains(6, small_style(), small_sizes());
  auto a = dcl::materialize(tgt_a, "pool"), b = dcl::materialize(tgt_b, "pool"), c = dcl::materialize(tgt_c, "pool");
  EXPECT_EQ(dcl::image_hashes(a.images), dcl::image_hashes(b.images));
  EXPECT_NE(dcl::image_hashes(a.images), dcl::image_hashes(c.images));
  EXPECT_EQ(a.names.front(), "pool_000000");
  EXPECT_EQ(a.size(), 30);
  EXPECT_EQ(a.images.data.sizes(), (std::vector<int64_t>{30, 3, 32, 32}));
}

TEST(Synthetic, DomainsShareFactorsButDifferInStyle) {
  auto [src, tgt] = dcl::synthesize_toy_domains(1, small_style(), small_sizes());
  auto s = dcl::materialize(src, "train"), t = dcl::materialize(tgt, "eval");
  for (const auto* d : {&s, &t}) {
    EXPECT_GE(d->images.data.min().item<float>(), -1.0f);
    EXPECT_LE(d->images.data.max().item<float>(), 1.0f);
  }
  // Target sketches are grayscale, source faces are coloured.
  EXPECT_TRUE(torch::allclose(t.images.data.select(1, 0), t.images.data.select(1, 2)));
  EXPECT_FALSE(torch::allclose(s.images.data.select(1, 0), s.images.data.select(1, 2)));
  EXPECT_GT(dcl::factor_label_entropy(s.factors), 1.0);
}

TEST(Synthetic, SplitsAreDisjoint) {
  auto [src, tgt] = dcl::synthesize_toy_domains(2, small_style(), small_sizes());
  EXPECT_NO_THROW(dcl::assert_disjoint(dcl::materialize(tgt, "pool").images, dcl::materialize(tgt, "eval").images,
                                       "pool/eval"));
  auto pool = dcl::materialize(tgt, "pool");
  EXPECT_THROW(dcl::assert_disjoint(pool.images, pool.images.slice(3, 5), "self"), dcl::InputError);
}

TEST(Png, RoundTripWithinQuantization) {
  auto dir = scratch("png");
  auto gen = dcl::make_cpu_generator(1);
  auto img = torch::rand({3, 16, 8}, gen) * 2 - 1;
  dcl::write_png(dir / "a.png", img);
  auto back = dcl::read_png(dir / "a.png");
  EXPECT_EQ(back.sizes(), img.sizes());
  EXPECT_LE((back - img).abs().max().item<float>(), 1.0f / 255.0f + 1e-6f);
  // A second round trip is exact.
  dcl::write_png(dir / "b.png", back);
  EXPECT_TRUE(torch::equal(dcl::read_png(dir / "b.png"), back));
  EXPECT_THROW(dcl::read_png(dir / "missing.png"), dcl::MissingInputError);
}

TEST(ImageFolder, SkipsUndecodableFilesAndResizes) {
  auto dir = scratch("folder");
  fs::create_directories(dir / "train");
  auto gen = dcl::make_cpu_generator(2);
  for (int i = 0; i < 3; ++i) {
    dcl::write_png(dir / "train" / ("img" + std::to_string(i) + ".png"), torch::rand({3, 64, 64}, gen) * 2 - 1);
  }
  std::ofstream(dir / "train" / "broken.png") << "not a png";
  dcl::DatasetSpec spec;
  spec.kind = dcl::DatasetKind::ImageFolder;
  spec.name = "folder";
  spec.root = dir;
  spec.resolution = 32;
  spec.splits = {{"train", 0}};
  std::int64_t skipped = 0;
  auto data = dcl::load_image_folder(spec, "train", &skipped);
  EXPECT_EQ(data.size(), 3);
  EXPECT_EQ(skipped, 1);
  EXPECT_EQ(data.images.data.sizes(), (std::vector<int64_t>{3, 3, 32, 32}));
  EXPECT_THROW(dcl::load_image_folder(spec, "val"), dcl::MissingInputError);
}

TEST(Resize, ShrinkingAveragesBlocks) {
  auto img = torch::arange(16, torch::kFloat32).reshape({1, 1, 4, 4}).repeat({1, 3, 1, 1});
  auto small = dcl::resize_images(img, 2);
  EXPECT_FLOAT_EQ(small[0][0][0][0].item<float>(), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(small[0][2][1][1].item<float>(), (10 + 11 + 14 + 15) / 4.0f);
  EXPECT_EQ(dcl::resize_images(img, 8).sizes(), (std::vector<int64_t>{1, 3, 8, 8}));
}

TEST(FewShot, DeterministicDistinctAndUniform) {
  auto [src, tgt] = dcl::synthesize_toy_domains(3, small_style(), small_sizes());
  auto pool = dcl::materialize(tgt, "pool");
  auto a = dcl::sample_few_shot(pool, 10, 4), b = dcl::sample_few_shot(pool, 10, 4);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(std::set<std::int64_t>(a.indices.begin(), a.indices.end()).size(), 10u);
  EXPECT_THROW(dcl::sample_few_shot(pool, 31, 0), dcl::InputError);
  EXPECT_THROW(dcl::sample_few_shot(pool, 0, 0), dcl::ConfigError);

  // Inclusion counts over many draws: chi-square with 19 degrees of freedom,
  // 99.9th percentile 43.8.
  std::vector<std::int64_t> counts(20, 0);
  std::mt19937_64 rng(9);
  for (int draw = 0; draw < 4000; ++draw) {
    for (auto i : dcl::sample_without_replacement(20, 5, rng)) ++counts[static_cast<std::size_t>(i)];
  }
  EXPECT_LT(oracle::chi_square_uniform(counts), 43.8);
}

TEST(Manifest, ListsEveryImageHash) {
  auto [src, tgt] = dcl::synthesize_toy_domains(3, small_style(), small_sizes());
  auto pool = dcl::materialize(tgt, "pool");
  auto dir = scratch("manifest");
  dcl::write_dataset_manifest(dir / "m.txt", {{"pool", &pool}});
  std::ifstream in(dir / "m.txt");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), pool.size() + 1);
}

TEST(MixSeed, SplitsStreams) {
  EXPECT_NE(dcl::mix_seed(0, 1), dcl::mix_seed(0, 2));
  EXPECT_NE(dcl::mix_seed(1, 0), dcl::mix_seed(0, 1));
  EXPECT_EQ(dcl::mix_seed(7, 3), dcl::mix_seed(7, 3));
}

}  // namespace

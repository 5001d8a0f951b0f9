#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcl/commands.hpp"

namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(model.resolution = 32
model.z_dim = 16
model.g_base_channels = 8
model.d_base_channels = 8
data.source_train = 64
data.source_val = 32
data.target_pool = 20
data.target_eval = 32
pretrain.iterations = 4
pretrain.classifier_steps = 5
pretrain.featnet_steps = 5
pretrain.eval_samples = 16
adapt.shots = 4
adapt.iterations = 4
adapt.probe_interval = 2
adapt.probe_batch = 16
eval.generated = 24
eval.pair_budget = 5
eval.standard_pairs = 20
)";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = dcl::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "dcl_cli_test"; }
  static fs::path config() { return root() / "tiny.cfg"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    std::ofstream(config()) << kTinyConfig;
    auto r = cli({"pretrain", "--config", config().string(), "--run-dir", (root() / "pre").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

TEST_F(Cli, ExitCodes) {
  auto pre = (root() / "pre").string();
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);
  auto bad_method = cli({"adapt", "--config", config().string(), "--method", "vae", "--source", pre});
  EXPECT_EQ(bad_method.code, 2);
  EXPECT_NE(bad_method.err.find("dcl, tgan, freezed, ewc, cdc"), std::string::npos) << bad_method.err;
  EXPECT_EQ(bad_method.err.find('\n'), bad_method.err.size() - 1);
  EXPECT_EQ(cli({"adapt", "--config", config().string(), "--set", "adapt.bogus=1", "--source", pre}).code, 2);
  EXPECT_EQ(cli({"adapt", "--config", (root() / "none.cfg").string()}).code, 3);
  EXPECT_EQ(cli({"adapt", "--config", config().string(), "--source", (root() / "nowhere").string()}).code, 3);
  EXPECT_EQ(cli({"eval", (root() / "nowhere").string()}).code, 3);
  EXPECT_FALSE(fs::exists("runs"));
  EXPECT_EQ(cli({"mi-check", "--batch-size", "1"}).code, 2);
  EXPECT_EQ(cli({"--version"}).code, 0);
}

TEST_F(Cli, PretrainWritesManifestAndArtifacts) {
  auto manifest = dcl::RunManifest::read(root() / "pre");
  EXPECT_EQ(manifest.command, "pretrain");
  EXPECT_EQ(manifest.toolkit_version, dcl::kToolkitVersion);
  for (const auto& a : manifest.artifacts) EXPECT_TRUE(fs::exists(root() / "pre" / a)) << a;
  EXPECT_NE(manifest.resolved_config.find("model.resolution = 32"), std::string::npos);
}

TEST_F(Cli, AdaptAndEvalAreByteReproducible) {
  auto pre = (root() / "pre").string();
  for (const char* run : {"a", "b"}) {
    auto dir = (root() / run).string();
    auto r = cli({"adapt", "--config", config().string(), "--method", "dcl", "--shots", "4", "--seed", "3", "--source",
                  pre, "--run-dir", dir});
    ASSERT_EQ(r.code, 0) << r.err;
    auto e = cli({"eval", dir});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("intra_lpips:"), std::string::npos);
  }
  for (const char* file : {"metrics.csv", "losses.csv", "eval_clusters.csv", "eval_report.txt"}) {
    EXPECT_EQ(slurp(root() / "a" / file), slurp(root() / "b" / file)) << file;
  }
  auto p = cli({"plot", (root() / "a" / "metrics.csv").string()});
  EXPECT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(root() / "a" / "metrics_p_t.png"));
}

TEST_F(Cli, RunDirectoriesAreNamedByMethodAndSeed) {
  auto dir = dcl::make_run_dir(root() / "runs", "cdc", "7");
  EXPECT_EQ(dir.filename().string().rfind("cdc_7_", 0), 0u);
  auto second = dcl::make_run_dir(root() / "runs", "cdc", "7");
  EXPECT_NE(dir, second);
}

}  // namespace

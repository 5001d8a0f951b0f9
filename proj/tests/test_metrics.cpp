#include <gtest/gtest.h>
#include <torch/torch.h>

#include <chrono>
#include <filesystem>
#include <set>

#include "dcl/errors.hpp"
#include "dcl/metrics.hpp"
#include "oracles.hpp"

namespace {

dcl::PerceptualFeatures features_of(const oracle::Matrix& rows) {
  const auto n = static_cast<std::int64_t>(rows.size());
  const auto c = static_cast<std::int64_t>(rows.front().size());
  auto t = torch::zeros({n, c, 1, 1}, torch::kFloat64);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t k = 0; k < c; ++k) t[i][k][0][0] = rows[i][k];
  }
  return dcl::PerceptualFeatures{{t}};
}

struct Case {
  oracle::Matrix generated;
  oracle::Matrix targets;
};

std::vector<Case> handcrafted_cases() {
  return {
      // Two well separated clusters of three.
      {{{0, 0}, {0.1, 0}, {0, 0.3}, {5, 5}, {5.2, 5}, {4.9, 5.4}}, {{0, 0.1}, {5, 5.1}}},
      // Unbalanced: five images near the first target, one near the second.
      {{{1, 0}, {1.2, 0.1}, {0.8, -0.2}, {1, 0.5}, {1.4, 0.3}, {-3, -3}}, {{1, 0}, {-3, -2.5}}},
      // Every image nearest the same target; the second cluster stays empty.
      {{{0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}, {0, 6}}, {{0, 3.5}, {10, 10}}},
      // Three-dimensional features with an exact distance tie resolved to target 0.
      {{{1, 0, 0}, {-1, 0, 0}, {0, 2, 0}, {0, -2, 0}, {0, 0, 1}, {0.5, 0.5, 0.5}},
       {{0, 0, 0.5}, {0, 0, -0.5}}},
  };
}

TEST(IntraLpipsOracle, HandcraftedCasesMatchExhaustiveEnumeration) {
  const auto start = std::chrono::steady_clock::now();
  for (const auto& c : handcrafted_cases()) {
    const auto expected = oracle::intra_cluster_distance(c.generated, c.targets);
    const auto got = dcl::intra_lpips(features_of(c.generated), features_of(c.targets), std::nullopt, 0);
    EXPECT_NEAR(got.mean, expected.mean, 1e-6);
    ASSERT_EQ(got.per_cluster.size(), expected.per_cluster.size());
    for (std::size_t m = 0; m < expected.per_cluster.size(); ++m) {
      EXPECT_NEAR(got.per_cluster[m], expected.per_cluster[m], 1e-6);
    }
    for (std::size_t i = 0; i < expected.cluster.size(); ++i) {
      EXPECT_EQ(got.assignment.cluster[i], expected.cluster[i]);
    }
    // A budget that covers every pair must not change the result.
    const auto budgeted = dcl::intra_lpips(features_of(c.generated), features_of(c.targets), 15, 99);
    EXPECT_NEAR(budgeted.mean, expected.mean, 1e-12);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 30.0);
}

TEST(IntraLpipsOracle, ReplicatedTargetsGiveExactlyZero) {
  const oracle::Matrix targets = {{0.3, 1.0}, {-2.0, 0.5}};
  oracle::Matrix generated;
  for (int k = 0; k < 3; ++k) {
    generated.push_back(targets[0]);
    generated.push_back(targets[1]);
  }
  const auto got = dcl::intra_lpips(features_of(generated), features_of(targets), std::nullopt, 0);
  EXPECT_EQ(got.mean, 0.0);
  EXPECT_EQ(got.clusters_with_pairs, 2);
}

TEST(IntraLpips, BudgetSamplesDistinctPairsDeterministically) {
  auto gen = dcl::make_cpu_generator(4);
  auto g = dcl::PerceptualFeatures{{torch::randn({60, 4, 1, 1}, gen, torch::kFloat64)}};
  auto t = dcl::PerceptualFeatures{{torch::zeros({1, 4, 1, 1}, torch::kFloat64)}};
  auto a = dcl::intra_lpips(g, t, 25, 7);
  auto b = dcl::intra_lpips(g, t, 25, 7);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.assignment.pairs_used[0], 25);
  auto full = dcl::intra_lpips(g, t, std::nullopt, 7);
  EXPECT_EQ(full.assignment.pairs_used[0], 60 * 59 / 2);
  EXPECT_NEAR(a.mean, full.mean, 0.5 * full.mean);
}

TEST(IntraLpips, RejectsEmptyInputsAndBadBudget) {
  auto one = dcl::PerceptualFeatures{{torch::ones({2, 3, 1, 1})}};
  auto none = dcl::PerceptualFeatures{{torch::ones({0, 3, 1, 1})}};
  EXPECT_THROW(dcl::intra_lpips(none, one, std::nullopt, 0), dcl::InputError);
  EXPECT_THROW(dcl::intra_lpips(one, none, std::nullopt, 0), dcl::InputError);
  EXPECT_THROW(dcl::intra_lpips(one, one, 0, 0), dcl::ConfigError);
}

TEST(UnrankPair, EnumeratesEveryPairOnce) {
  const std::int64_t n = 9;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (std::int64_t k = 0; k < n * (n - 1) / 2; ++k) {
    auto p = dcl::unrank_pair(k, n);
    EXPECT_LT(p.first, p.second);
    EXPECT_LT(p.second, n);
    seen.insert(p);
  }
  EXPECT_EQ(static_cast<std::int64_t>(seen.size()), n * (n - 1) / 2);
}

TEST(StandardLpips, AllPairsMeanWhenBudgetCoversThem) {
  const oracle::Matrix rows = {{0, 0}, {1, 0}, {0, 2}, {3, 3}};
  double sum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) sum += oracle::squared_distance(rows[i], rows[j]);
  }
  EXPECT_NEAR(dcl::standard_lpips(features_of(rows), 100, 0), sum / 6.0, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(Frechet, MatchesEigenvalueRoute) {
  auto gen = dcl::make_cpu_generator(13);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = torch::randn({200, 6}, gen, torch::kFloat64);
    auto b = torch::randn({150, 6}, gen, torch::kFloat64).matmul(torch::randn({6, 6}, gen, torch::kFloat64)) + 0.5;
    auto ma = dcl::embedding_moments(a), mb = dcl::embedding_moments(b);
    auto to_eigen_vec = [](const torch::Tensor& t) {
      Eigen::VectorXd v(t.size(0));
      for (int i = 0; i < v.size(); ++i) v[i] = t[i].item<double>();
      return v;
    };
    auto to_eigen_mat = [](const torch::Tensor& t) {
      Eigen::MatrixXd m(t.size(0), t.size(1));
      for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) m(i, j) = t[i][j].item<double>();
      }
      return m;
    };
    const double expected =
        oracle::frechet(to_eigen_vec(ma.mean), to_eigen_mat(ma.cov), to_eigen_vec(mb.mean), to_eigen_mat(mb.cov));
    EXPECT_NEAR(dcl::frechet_distance(ma, mb, 0.0), expected, 1e-6 * std::max(1.0, expected));
  }
}

TEST(Frechet, IdenticalSetsGiveNearZeroAndMomentsAreUnbiased) {
  auto gen = dcl::make_cpu_generator(2);
  auto a = torch::randn({50, 4}, gen, torch::kFloat64);
  auto m = dcl::embedding_moments(a);
  EXPECT_NEAR(dcl::frechet_distance(m, m), 0.0, 1e-6);
  auto centered = a - a.mean(0, true);
  auto cov = centered.t().matmul(centered) / 49.0;
  EXPECT_TRUE(torch::allclose(m.cov, cov, 1e-12, 1e-12));
}

// ---------------------------------------------------------------------------

TEST(MetricSeries, CsvRoundTripAndValidation) {
  dcl::MetricSeries s;
  s.append({0, std::nan(""), std::nan(""), std::nan(""), std::nan(""), 0.1, 0.5});
  s.append({50, 0.6931471805599453, 1.25, 0.0, 0.0, 0.4, 0.25});
  const auto path = std::filesystem::temp_directory_path() / "dcl_metric_roundtrip.csv";
  s.write_csv(path);
  auto back = dcl::MetricSeries::read_csv(path);
  EXPECT_EQ(back.to_csv(), s.to_csv());
  EXPECT_EQ(back.points()[1].loss_adv, 0.6931471805599453);
  std::filesystem::remove(path);

  EXPECT_THROW(s.append({50, 0, 0, 0, 0, 0.5, 0.1}), dcl::InputError);
  EXPECT_THROW(s.append({60, 0, 0, 0, 0, 1.5, 0.1}), dcl::InputError);
  EXPECT_THROW(s.append({60, 0, 0, 0, 0, 0.5, -0.1}), dcl::InputError);
}

TEST(FormatNumber, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5}) {
    EXPECT_EQ(std::stod(dcl::format_number(v)), v);
  }
  EXPECT_EQ(dcl::format_number(std::nan("")), "nan");
  EXPECT_EQ(dcl::format_number(0.5), "0.5");
}

}  // namespace

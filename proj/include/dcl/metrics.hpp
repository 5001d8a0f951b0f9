#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcl/batches.hpp"
#include "dcl/checkpoint.hpp"
#include "dcl/data.hpp"
#include "dcl/models.hpp"

namespace dcl {

// ---------------------------------------------------------------------------
// Metric log
// ---------------------------------------------------------------------------

struct MetricPoint {
  std::int64_t iteration = 0;
  double loss_adv = 0.0;
  double loss_cl1 = 0.0;
  double loss_cl2 = 0.0;
  double loss_aux = 0.0;
  double p_t = 0.0;
  double intra_lpips = 0.0;
};

/// Probe trajectory over adaptation iterations.
class MetricSeries {
 public:
  static constexpr const char* kHeader = "iteration,loss_adv,loss_cl1,loss_cl2,loss_aux,p_t,intra_lpips";

  /// Throws InputError unless `point.iteration` exceeds the last one and the
  /// probe values are in range.
  void append(const MetricPoint& point);
  const std::vector<MetricPoint>& points() const { return points_; }
  bool empty() const { return points_.empty(); }
  const MetricPoint& back() const { return points_.back(); }

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static MetricSeries read_csv(const std::filesystem::path& path);

 private:
  std::vector<MetricPoint> points_;
};

/// Shortest decimal text that reads back to the same double ("nan" for NaN).
std::string format_number(double v);

// ---------------------------------------------------------------------------
// Intra-cluster and standard LPIPS
// ---------------------------------------------------------------------------

struct ClusterAssignment {
  std::vector<std::int64_t> cluster;                // per generated image, in [0, M)
  std::vector<std::vector<std::int64_t>> members;   // per target, ascending
  std::vector<double> mean_distance;                // per cluster; 0 without pairs
  std::vector<std::int64_t> pairs_used;             // per cluster

  std::int64_t cluster_count() const { return static_cast<std::int64_t>(members.size()); }
};

/// Nearest target (by perceptual distance) for every generated image; the
/// lowest target index wins exact ties.
ClusterAssignment assign_clusters(const PerceptualFeatures& generated, const PerceptualFeatures& targets);

/// (G, M) float64 matrix of perceptual distances.
torch::Tensor distance_matrix(const PerceptualFeatures& a, const PerceptualFeatures& b);

struct IntraLpips {
  double mean = 0.0;                // uniform over clusters that have a pair
  double std = 0.0;                 // across those clusters
  std::vector<double> per_cluster;  // (M,), 0 for clusters without pairs
  std::int64_t clusters_with_pairs = 0;
  ClusterAssignment assignment;
};

/// Pairs per cluster: all of them when they fit in `pair_budget` (or when it
/// is unset), otherwise a seeded sample of `pair_budget` distinct pairs.
IntraLpips intra_lpips(const PerceptualFeatures& generated, const PerceptualFeatures& targets,
                       std::optional<std::int64_t> pair_budget, std::uint64_t seed);
IntraLpips intra_lpips(FeatureNet& net, const ImageBatch& generated, const ImageBatch& targets,
                       std::optional<std::int64_t> pair_budget, std::uint64_t seed);

/// Mean distance over `pair_count` seeded distinct unordered pairs, or over
/// every pair when there are no more than `pair_count`.
double standard_lpips(const PerceptualFeatures& generated, std::int64_t pair_count, std::uint64_t seed);
double standard_lpips(FeatureNet& net, const ImageBatch& generated, std::int64_t pair_count, std::uint64_t seed);

/// The k-th unordered pair (i < j) of n items in row-major order.
std::pair<std::int64_t, std::int64_t> unrank_pair(std::int64_t k, std::int64_t n);

// ---------------------------------------------------------------------------
// Realisticness classifier
// ---------------------------------------------------------------------------

struct TrainingSchedule {
  std::int64_t steps = 400;
  std::int64_t batch = 32;
  double lr = 2e-4;
  std::uint64_t seed = 0;
};

struct ClassifierReport {
  Classifier model{nullptr};
  double held_out_accuracy = 0.0;
  std::int64_t train_per_class = 0;
  std::int64_t held_out_per_class = 0;
};

/// Trains source (label 0) vs. target (label 1).  The larger class is
/// down-sampled to the size of the smaller one, then a `held_out_fraction`
/// of each class is kept out of training and used for the accuracy.
ClassifierReport train_binary_classifier(const ImageBatch& source, const ImageBatch& target,
                                         double held_out_fraction, const ClassifierOptions& options,
                                         const TrainingSchedule& schedule);

/// Fraction of `images` whose target probability falls on the side of 0.5
/// given by `label`.
double classifier_accuracy(Classifier& c, const ImageBatch& images, int label);

/// Mean target probability of G_t(fixed_z).
double realisticness_probe(Classifier& c, Generator& g, const LatentBatch& fixed_z, std::int64_t chunk = 256);

// ---------------------------------------------------------------------------
// Perceptual feature network training
// ---------------------------------------------------------------------------

struct FeatureNetReport {
  FeatureNet model{nullptr};
  double final_loss = 0.0;
};

/// Trains the trunk with one cross-entropy head per factor on `images`;
/// `labels` is (N, heads) int64.
FeatureNetReport train_feature_net(const ImageBatch& images, const torch::Tensor& labels,
                                   const FeatureNetOptions& options, const TrainingSchedule& schedule);

/// (N, 7) factor labels of a synthetic dataset.
torch::Tensor factor_labels(const std::vector<FaceFactors>& factors);

// ---------------------------------------------------------------------------
// Frechet feature distance
// ---------------------------------------------------------------------------

struct GaussianMoments {
  torch::Tensor mean;  // (D,) float64
  torch::Tensor cov;   // (D, D) float64, unbiased
};

GaussianMoments embedding_moments(const torch::Tensor& embeddings);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2) with
/// `eps` * I added to both covariances.
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b, double eps = 1e-6);

/// Frechet distance between feature-net embeddings of two image sets.
double frechet_feature_distance(FeatureNet& net, const ImageBatch& a, const ImageBatch& b, double eps = 1e-6);

/// Feature-net embeddings of a batch, (N, D) float64.
torch::Tensor embed_images(FeatureNet& net, const ImageBatch& images, std::int64_t chunk = 256);

// ---------------------------------------------------------------------------
// Evaluator bundle
// ---------------------------------------------------------------------------

/// The fixed networks used to score every run.
struct Evaluator {
  Classifier classifier{nullptr};
  FeatureNet featnet{nullptr};
  double classifier_accuracy = 0.0;
};

void store_evaluator(Checkpoint& ckpt, const Evaluator& evaluator);
Evaluator restore_evaluator(const Checkpoint& ckpt, const ClassifierOptions& classifier,
                            const FeatureNetOptions& featnet);

}  // namespace dcl

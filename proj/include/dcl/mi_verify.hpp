#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dcl {

enum class JointKind { DiscreteTable, CorrelatedGaussian };

/// A toy joint distribution of paired samples (x, y) with known mutual
/// information.  Discrete symbols are presented to critics one-hot encoded.
struct ToyJointDistribution {
  JointKind kind = JointKind::DiscreteTable;
  std::string name;
  torch::Tensor table;  // (Kx, Ky) float64, discrete only
  double rho = 0.0;     // gaussian only
  std::int64_t dim = 1; // gaussian only: independent (x_d, y_d) pairs

  static ToyJointDistribution discrete(torch::Tensor table, std::string name = "table");
  /// Uniform marginals over K symbols, x and y independent.
  static ToyJointDistribution independent(std::int64_t k);
  /// X = Y uniform over K symbols.
  static ToyJointDistribution deterministic(std::int64_t k);
  static ToyJointDistribution gaussian(double rho, std::int64_t dim = 1);

  /// Throws InputError for negative entries, a total different from 1, or |rho| >= 1.
  void validate() const;
  std::int64_t x_dim() const;
  std::int64_t y_dim() const;
  /// n i.i.d. pairs as float32 (n, x_dim) and (n, y_dim) tensors.
  std::pair<torch::Tensor, torch::Tensor> sample(std::int64_t n, std::mt19937_64& rng) const;
};

/// Exact mutual information in nats.
double exact_mi(const ToyJointDistribution& joint);

struct CriticOptions {
  std::int64_t hidden = 64;
  std::int64_t embed = 16;
  double tau = 0.07;
  std::int64_t train_steps = 400;
  std::int64_t train_batch = 64;
  double lr = 5e-3;
  bool train = true;
};

/// Two MLP encoders; the similarity head is the shipped contrastive loss.
class CriticImpl : public torch::nn::Module {
 public:
  CriticImpl(std::int64_t x_dim, std::int64_t y_dim, const CriticOptions& options);
  torch::Tensor encode_x(const torch::Tensor& x);
  torch::Tensor encode_y(const torch::Tensor& y);
  /// Contrastive loss of a paired batch: y-embeddings are anchors, x-embeddings
  /// the positives and negatives.
  torch::Tensor loss(const torch::Tensor& x, const torch::Tensor& y, double tau);

 private:
  torch::nn::Sequential fx_{nullptr};
  torch::nn::Sequential fy_{nullptr};
};
TORCH_MODULE(Critic);

struct BoundReport {
  std::string joint;
  std::int64_t batch_size = 0;
  std::int64_t trials = 0;
  bool trained = true;
  std::int64_t embed = 0;
  double mean_loss = 0.0;
  double std_error = 0.0;
  double bound_value = 0.0;  // log N - mean_loss
  double exact_mi = 0.0;
  double eps_stat = 0.0;     // 3 standard errors
  bool holds = false;        // bound_value <= exact_mi + eps_stat
  double gap = 0.0;          // exact_mi - bound_value

  double log_n() const;
  /// Distance of the bound from min(log N, MI).
  double tightness_gap() const;
  std::string to_text() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Trains a critic on batches drawn from `joint` (unless options.train is
/// false), then evaluates the contrastive loss on `trials` fresh batches of
/// size `batch_size`.  Throws ConfigError for batch_size < 2 or trials < 2 and
/// NumericError if the critic diverges.
BoundReport verify_bound(const ToyJointDistribution& joint, std::int64_t batch_size, const CriticOptions& options,
                         std::int64_t trials, std::uint64_t seed);

/// Named joints accepted by the command line: "independent", "deterministic",
/// "gaussian".
ToyJointDistribution joint_by_name(const std::string& name);

}  // namespace dcl

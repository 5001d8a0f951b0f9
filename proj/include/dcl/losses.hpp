#pragma once

#include <torch/torch.h>

#include <vector>

#include "dcl/models.hpp"

namespace dcl {

inline constexpr double kDefaultTau = 0.07;
inline constexpr double kDefaultLambda1 = 2.0;
inline constexpr double kDefaultLambda2 = 0.5;

enum class AdversarialSide { Generator, Discriminator };

/// Binary cross-entropy GAN loss on logits (any shape; flattened).
///
/// Discriminator side: mean of BCE(real -> 1) and BCE(fake -> 0).
/// Generator side: non-saturating BCE(fake -> 1); `real_logits` is ignored
/// and may be undefined.
torch::Tensor adversarial_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                               AdversarialSide side);

/// exp(CosSim(u, v) / tau) for two vectors.
torch::Tensor temperature_similarity(const torch::Tensor& u, const torch::Tensor& v, double tau);

/// Row-wise cosine similarities of (N, C) and (K, C) matrices, shape (N, K).
/// Throws DegenerateInputError on any zero-norm row.
torch::Tensor cosine_similarity_matrix(const torch::Tensor& a, const torch::Tensor& b);

/// Temperature-scaled exponentiated cosine similarities, entries in
/// [exp(-1/tau), exp(1/tau)].
struct SimilarityMatrix {
  torch::Tensor data;
  double tau;

  static SimilarityMatrix build(const torch::Tensor& a, const torch::Tensor& b, double tau);
};

/// Where the Generator CL negatives for anchor i come from.
enum class NegativeSource {
  Source,  ///< G_s(z_j), j != i
  Target,  ///< G_t(z_j), j != i
};

/// N-way InfoNCE over paired rows: mean_i -log f(t_i, s_i) / sum_j f(t_i, s_j),
/// with f = exp(cos / tau) and the denominator running over all j including i.
/// With NegativeSource::Target the negatives are f(t_i, t_j), j != i.
torch::Tensor generator_contrastive_loss(const torch::Tensor& target_features, const torch::Tensor& source_features,
                                         double tau = kDefaultTau,
                                         NegativeSource negatives = NegativeSource::Source);

/// mean_i -log pos_i / (pos_i + sum_j f(t_i, r_j)), pos_i = f(t_i, s_i),
/// where r_j are the M real-target features.
torch::Tensor discriminator_contrastive_loss(const torch::Tensor& target_fake, const torch::Tensor& source_fake,
                                             const torch::Tensor& real_target, double tau = kDefaultTau);

/// Loss terms of one update.  Undefined tensors are absent terms.
struct LossTerms {
  torch::Tensor adv;
  torch::Tensor cl1;
  torch::Tensor cl2;
  /// Already-weighted baseline regularizer (CDC or EWC).
  torch::Tensor aux;
};

struct LossBundle {
  double adv = 0.0;
  double cl1 = 0.0;
  double cl2 = 0.0;
  double aux = 0.0;
  double total = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

struct Objective {
  torch::Tensor total;
  LossBundle bundle;
};

/// total = adv + lambda1 * cl1 + lambda2 * cl2 + aux.  Throws ConfigError
/// for negative weights and NumericError for non-finite components.
Objective dcl_objective(const LossTerms& terms, double lambda1 = kDefaultLambda1, double lambda2 = kDefaultLambda2);

/// CDC-style distance-consistency loss.  For every anchor i, softmax over the
/// cosine similarities to the other N-1 rows gives a distribution in the
/// source and in the target batch; returns mean_i KL(p_source_i || p_target_i).
torch::Tensor cdc_distance_loss(const torch::Tensor& target_features, const torch::Tensor& source_features);

/// Diagonal Fisher estimate: per-parameter mean over the batch of the squared
/// gradient of the per-sample non-saturating generator loss.  Entries align
/// with g->parameters().
std::vector<torch::Tensor> estimate_fisher(Generator& g, Discriminator& d, const LatentBatch& z);

/// lambda * sum_i fisher_i * (theta_t,i - theta_s,i)^2.
torch::Tensor ewc_penalty(const std::vector<torch::Tensor>& target_params,
                          const std::vector<torch::Tensor>& source_params, const std::vector<torch::Tensor>& fisher,
                          double lambda);

}  // namespace dcl

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dcl/checkpoint.hpp"
#include "dcl/config.hpp"
#include "dcl/data.hpp"
#include "dcl/losses.hpp"
#include "dcl/metrics.hpp"
#include "dcl/models.hpp"

namespace dcl {

/// Uniform sample of `k` distinct levels from `pool`, returned sorted.
/// Throws ConfigError when k exceeds the pool.
TapSet sample_tap_layers(std::mt19937_64& rng, const TapSet& pool, std::int64_t k);

/// FreezeD: excludes levels [0, k) of `d` from training.  Throws ConfigError
/// when k is outside [0, levels + 1].
Discriminator& freeze_discriminator_layers(Discriminator& d, int k);

// ---------------------------------------------------------------------------
// Source models and pretraining
// ---------------------------------------------------------------------------

struct SourceModels {
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
};

/// Fresh models with seeded He initialization.
SourceModels initialize_models(const ModelConfig& model, std::uint64_t seed);

/// Generator and discriminator parameters under "generator" / "discriminator".
Checkpoint make_source_checkpoint(const ModelConfig& model, SourceModels& models);
SourceModels load_source_models(const Checkpoint& ckpt, const ModelConfig& model);

/// Trains the realisticness classifier (source vs. target) and the perceptual
/// feature net.  Synthetic data trains the feature net on the factor labels
/// of both domains; image folders on the domain label.
Evaluator build_evaluator(const ExperimentConfig& cfg, const Dataset& source, const Dataset& target);

struct PretrainResult {
  SourceModels models;
  Checkpoint checkpoint;
  double frechet_initial = 0.0;
  double frechet_final = 0.0;
  /// Mean classifier probability that samples belong to the source domain.
  double source_probability = 0.0;
  std::vector<std::array<double, 3>> losses;  // iteration, D loss, G loss
};

/// Non-saturating GAN training on the source domain.  Frechet distances to
/// `source_val` are measured before and after with the evaluator's feature net.
PretrainResult pretrain(const ExperimentConfig& cfg, const ImageBatch& source_train, const ImageBatch& source_val,
                        Evaluator& evaluator);

// ---------------------------------------------------------------------------
// Few-shot adaptation
// ---------------------------------------------------------------------------

/// Losses of one iteration.  `g` holds the generator objective, `d` the
/// discriminator objective (its cl1 and aux are unused).
struct IterationLosses {
  std::int64_t iteration = 0;
  LossBundle d;
  LossBundle g;
};

struct PeriodicCheckpoint {
  std::int64_t iteration = 0;
  Checkpoint checkpoint;
};

struct AdaptationRun {
  Checkpoint final_checkpoint;
  std::vector<PeriodicCheckpoint> periodic;
  MetricSeries series;
  std::vector<IterationLosses> losses;
  std::string config_echo;
  double wall_seconds = 0.0;
  std::int64_t d_steps = 0;
  std::int64_t g_steps = 0;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  /// Parameter hash of the frozen source generator at the start and end of the run.
  std::uint64_t source_hash_before = 0;
  std::uint64_t source_hash_after = 0;
};

/// Called after every iteration; used for progress output and test hooks.
using IterationCallback = std::function<void(const IterationLosses&, const AdaptationRun&)>;

/// Fine-tunes G_t and D_t (both initialized from `source`) on the M images of
/// `targets` using the configured method.  Probes p_t and intra-LPIPS at
/// iteration 0 and every probe interval when `evaluator` is given.  Throws
/// InputError when the target count differs from cfg.adapt.shots and
/// NumericError (carrying the iteration) on a non-finite loss.
AdaptationRun adapt(const ExperimentConfig& cfg, const Checkpoint& source, const ImageBatch& targets,
                    Evaluator* evaluator, const IterationCallback& callback = {});

/// Per-iteration loss log, one row per iteration.
std::string losses_csv(const std::vector<IterationLosses>& losses);

/// Generator/discriminator weights of a finished or periodic run state.
SourceModels load_adapted_models(const Checkpoint& ckpt, const ModelConfig& model);

}  // namespace dcl

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "dcl/batches.hpp"

namespace dcl {

struct LayerInfo {
  int level;
  std::string name;
  std::int64_t channels;
  std::int64_t spatial;
};

/// Fills weights with He-scaled normals and zeros biases, drawing from `gen`.
void init_parameters(torch::nn::Module& module, at::Generator& gen, double slope = 0.2);

/// FNV-1a over every named parameter and buffer (names and raw bytes).
std::uint64_t parameter_hash(const torch::nn::Module& module);

/// Sets every parameter of `module` to zero.
void zero_parameters(torch::nn::Module& module);

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

struct GeneratorOptions {
  std::int64_t resolution = 64;
  std::int64_t z_dim = 64;
  std::int64_t base_channels = 16;
  std::int64_t max_channels = 256;
  bool bias = true;
  double slope = 0.2;

  /// Number of upsampling blocks; the coarsest map is 4x4.
  int levels() const;
  /// Channel width of the feature map at `level`.
  std::int64_t channels(int level) const;
  std::string canonical() const;
  void validate() const;
};

/// DCGAN-style generator: z -> 4x4 map -> `levels()` nearest-upsample+conv
/// blocks -> 3x3 to-RGB conv -> tanh.  Level l is the map of spatial size
/// resolution / 2^l, so level 0 is the last block before the RGB projection.
class GeneratorImpl : public torch::nn::Cloneable<GeneratorImpl> {
 public:
  explicit GeneratorImpl(GeneratorOptions options = {});

  void reset() override;

  torch::Tensor forward(const torch::Tensor& z);
  /// Forward pass that also records the activations at `taps` into `out`.
  torch::Tensor forward_tapped(const torch::Tensor& z, const TapSet& taps, FeaturePyramid& out);

  const GeneratorOptions& options() const { return options_; }
  std::vector<LayerInfo> layer_registry() const;
  TapSet all_levels() const;

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

 private:
  GeneratorOptions options_;
  torch::nn::Linear input_{nullptr};
  std::vector<torch::nn::Conv2d> blocks_;  // blocks_[l] produces level l
  torch::nn::Conv2d to_rgb_{nullptr};
  bool frozen_ = false;
};
TORCH_MODULE(Generator);

struct GeneratorOutput {
  ImageBatch images;
  FeaturePyramid features;
};

/// Throws ConfigError for taps outside the registry and NumericError (with the
/// offending level) on non-finite activations.
GeneratorOutput generator_forward(Generator& g, const LatentBatch& z, const TapSet& taps);

/// Deep copy with frozen=true and no gradient participation.
Generator clone_frozen(const Generator& g);

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

struct DiscriminatorOptions {
  std::int64_t resolution = 64;
  std::int64_t base_channels = 16;
  std::int64_t max_channels = 256;
  bool bias = true;
  double slope = 0.2;
  bool patch_head = false;
  /// Level whose map feeds the patch head; -1 picks levels() - 1.
  int patch_level = -1;

  int levels() const;
  std::int64_t channels(int level) const;
  int resolved_patch_level() const;
  std::string canonical() const;
  void validate() const;
};

enum class DiscriminatorHead { Image, Patch };

/// Convolutional discriminator.  Level 0 is the full-resolution from-RGB
/// map; level l (1..levels()) follows the l-th stride-2 conv.  The image head
/// is a linear map on the flattened 4x4 top level; the optional patch head is
/// a 1x1 conv producing a per-patch logit map.
class DiscriminatorImpl : public torch::nn::Cloneable<DiscriminatorImpl> {
 public:
  explicit DiscriminatorImpl(DiscriminatorOptions options = {});

  void reset() override;

  /// Image-level logits, shape (N,).
  torch::Tensor forward(const torch::Tensor& x);
  /// Logits from `head` (N,) or (N, 1, h, w), recording taps into `out`.
  torch::Tensor forward_tapped(const torch::Tensor& x, const TapSet& taps, FeaturePyramid& out,
                               DiscriminatorHead head = DiscriminatorHead::Image);

  const DiscriminatorOptions& options() const { return options_; }
  std::vector<LayerInfo> layer_registry() const;
  TapSet all_levels() const;

  /// Excludes levels [0, k) from training (FreezeD).
  void freeze_levels(int k);
  int frozen_levels() const { return frozen_levels_; }
  /// Parameters of the first `k` levels, in registration order.
  std::vector<torch::Tensor> level_parameters(int k) const;
  std::vector<torch::Tensor> trainable_parameters() const;

 private:
  DiscriminatorOptions options_;
  torch::nn::Conv2d from_rgb_{nullptr};
  std::vector<torch::nn::Conv2d> downs_;  // downs_[l-1] produces level l
  torch::nn::Linear head_{nullptr};
  torch::nn::Conv2d patch_{nullptr};
  int frozen_levels_ = 0;
};
TORCH_MODULE(Discriminator);

struct DiscriminatorOutput {
  torch::Tensor logits;
  FeaturePyramid features;
};

DiscriminatorOutput discriminator_forward(Discriminator& d, const ImageBatch& x, const TapSet& taps,
                                          DiscriminatorHead head = DiscriminatorHead::Image);

// ---------------------------------------------------------------------------
// Binary realisticness classifier
// ---------------------------------------------------------------------------

struct ClassifierOptions {
  std::int64_t resolution = 64;
  std::int64_t channels = 3;
  std::vector<std::int64_t> widths = {16, 32, 64, 64};
  double slope = 0.2;

  std::string canonical() const;
};

/// Four stride-2 convs and a linear layer; outputs the target-domain logit.
class ClassifierImpl : public torch::nn::Cloneable<ClassifierImpl> {
 public:
  explicit ClassifierImpl(ClassifierOptions options = {});

  void reset() override;
  torch::Tensor forward(const torch::Tensor& x);

  const ClassifierOptions& options() const { return options_; }
  bool trained() const { return trained_; }
  void set_trained(bool trained) { trained_ = trained; }
  /// Output bias; exposed for saturation checks.
  torch::Tensor& output_bias() { return fc_->bias; }

 private:
  ClassifierOptions options_;
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Linear fc_{nullptr};
  bool trained_ = false;
};
TORCH_MODULE(Classifier);

/// Target-domain probabilities in [0, 1], shape (N,).  Refuses untrained
/// models unless `allow_untrained`.
torch::Tensor classifier_predict(Classifier& c, const ImageBatch& x, bool allow_untrained = false);

// ---------------------------------------------------------------------------
// Perceptual feature network
// ---------------------------------------------------------------------------

struct FeatureNetOptions {
  std::int64_t resolution = 64;
  std::vector<std::int64_t> widths = {16, 32, 64, 64};
  /// Class count of each auxiliary classification head used to train the trunk.
  std::vector<std::int64_t> head_classes;
  double slope = 0.2;

  std::string canonical() const;
};

/// Conv trunk whose level activations define the perceptual distance.
/// Level 0 keeps full resolution, each later level halves it.
class FeatureNetImpl : public torch::nn::Cloneable<FeatureNetImpl> {
 public:
  explicit FeatureNetImpl(FeatureNetOptions options = {});

  void reset() override;

  std::vector<torch::Tensor> trunk(const torch::Tensor& x);
  /// Pooled top-level activations, (N, widths.back()).
  torch::Tensor embedding(const torch::Tensor& x);
  /// One logit tensor per head.
  std::vector<torch::Tensor> head_logits(const torch::Tensor& x);

  const FeatureNetOptions& options() const { return options_; }

 private:
  FeatureNetOptions options_;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::nn::Linear> heads_;
};
TORCH_MODULE(FeatureNet);

/// Channel-unit-normalized trunk activations of a batch, one (N, C, H, W)
/// tensor per level.  Computed once and reused for many distance queries.
struct PerceptualFeatures {
  std::vector<torch::Tensor> levels;
  std::int64_t size() const { return levels.empty() ? 0 : levels.front().size(0); }
  PerceptualFeatures select(const torch::Tensor& indices) const;
};

PerceptualFeatures perceptual_features(FeatureNet& net, const ImageBatch& images,
                                       std::int64_t chunk = 256);

/// Row-aligned distances between two feature sets of equal size, (N,) in float64.
torch::Tensor perceptual_distance(const PerceptualFeatures& a, const PerceptualFeatures& b);

/// Perceptual distance between row-aligned image batches, (N,) in float64:
/// unit-normalized per-level differences, spatially averaged, summed over levels.
torch::Tensor perceptual_distance(FeatureNet& net, const ImageBatch& a, const ImageBatch& b);

}  // namespace dcl

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dcl {

/// Sorted, duplicate-free set of layer levels.  Level 0 is the feature map
/// closest to the image plane; larger levels are coarser.
using TapSet = std::vector<int>;

/// CPU random generator seeded with `seed`.
at::Generator make_cpu_generator(std::uint64_t seed);

/// Normalizes a tap request: sorts and removes duplicates.
TapSet make_tap_set(std::vector<int> levels);

/// A batch of noise vectors z, shape (N, z_dim).
struct LatentBatch {
  torch::Tensor data;
  bool fixed_proxy = false;

  static LatentBatch sample(std::int64_t n, std::int64_t z_dim, at::Generator& gen);

  std::int64_t size() const { return data.size(0); }
  std::int64_t dim() const { return data.size(1); }
  /// Throws InputError unless data is a finite 2-D floating tensor.
  void validate() const;
};

enum class Provenance { GeneratedSource, GeneratedTarget, RealTarget, RealSource };

std::string to_string(Provenance p);

/// Images in [-1, 1], shape (N, C, H, W) with H and W powers of two.
struct ImageBatch {
  torch::Tensor data;
  Provenance provenance = Provenance::RealTarget;

  std::int64_t size() const { return data.size(0); }
  std::int64_t channels() const { return data.size(1); }
  std::int64_t height() const { return data.size(2); }
  std::int64_t width() const { return data.size(3); }

  ImageBatch slice(std::int64_t begin, std::int64_t end) const;
  ImageBatch select(const std::vector<std::int64_t>& indices) const;
  void validate() const;
};

/// Per-level activations tapped from one network.
class FeaturePyramid {
 public:
  FeaturePyramid() = default;
  explicit FeaturePyramid(std::string network) : network_(std::move(network)) {}

  void insert(int level, torch::Tensor activation);
  bool contains(int level) const { return entries_.count(level) != 0; }
  const torch::Tensor& at(int level) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  TapSet levels() const;
  const std::string& network() const { return network_; }

  /// Sub-pyramid holding only `levels`; each must be present.
  FeaturePyramid restrict_to(const TapSet& levels) const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::string network_;
  std::map<int, torch::Tensor> entries_;
};

/// Global-average-pools a (N, C, H, W) activation to (N, C); 2-D inputs pass through.
torch::Tensor pool_features(const torch::Tensor& activation);

/// Flattens a (N, ...) activation to (N, D).
torch::Tensor flatten_features(const torch::Tensor& activation);

}  // namespace dcl

#include "dcl/batches.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>

#include "dcl/errors.hpp"

namespace dcl {

namespace {

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

at::Generator make_cpu_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

TapSet make_tap_set(std::vector<int> levels) {
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

LatentBatch LatentBatch::sample(std::int64_t n, std::int64_t z_dim, at::Generator& gen) {
  if (n < 1 || z_dim < 1) throw InputError("latent batch needs n >= 1 and z_dim >= 1");
  return LatentBatch{torch::randn({n, z_dim}, gen, torch::kFloat32), false};
}

void LatentBatch::validate() const {
  if (!data.defined() || data.dim() != 2 || data.size(0) < 1) {
    throw InputError("latent batch must be a non-empty (N, z_dim) tensor");
  }
  if (!torch::isfinite(data).all().item<bool>()) {
    throw InputError("latent batch contains non-finite values");
  }
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::GeneratedSource: return "generated-source";
    case Provenance::GeneratedTarget: return "generated-target";
    case Provenance::RealTarget: return "real-target";
    case Provenance::RealSource: return "real-source";
  }
  return "unknown";
}

ImageBatch ImageBatch::slice(std::int64_t begin, std::int64_t end) const {
  return ImageBatch{data.slice(0, begin, end), provenance};
}

ImageBatch ImageBatch::select(const std::vector<std::int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kLong);
  return ImageBatch{data.index_select(0, idx), provenance};
}

void ImageBatch::validate() const {
  if (!data.defined() || data.dim() != 4) {
    throw InputError("image batch must be a (N, C, H, W) tensor");
  }
  if (!is_power_of_two(data.size(2)) || !is_power_of_two(data.size(3))) {
    throw InputError("image height and width must be powers of two");
  }
  if (data.numel() == 0) return;
  auto lo = data.min().item<double>();
  auto hi = data.max().item<double>();
  if (!(lo >= -1.0 && hi <= 1.0)) {
    throw InputError("image values must lie in [-1, 1]");
  }
}

void FeaturePyramid::insert(int level, torch::Tensor activation) {
  entries_[level] = std::move(activation);
}

const torch::Tensor& FeaturePyramid::at(int level) const {
  auto it = entries_.find(level);
  if (it == entries_.end()) {
    throw ConfigError("feature pyramid of '" + network_ + "' has no level " + std::to_string(level));
  }
  return it->second;
}

TapSet FeaturePyramid::levels() const {
  TapSet out;
  out.reserve(entries_.size());
  for (const auto& [level, _] : entries_) out.push_back(level);
  return out;
}

FeaturePyramid FeaturePyramid::restrict_to(const TapSet& levels) const {
  FeaturePyramid out(network_);
  for (int level : levels) out.insert(level, at(level));
  return out;
}

torch::Tensor pool_features(const torch::Tensor& activation) {
  if (activation.dim() == 2) return activation;
  if (activation.dim() != 4) throw InputError("expected a (N, C, H, W) activation");
  return activation.mean({2, 3});
}

torch::Tensor flatten_features(const torch::Tensor& activation) {
  return activation.reshape({activation.size(0), -1});
}

}  // namespace dcl

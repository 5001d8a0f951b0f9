#include "dcl/models.hpp"

#include <cmath>
#include <optional>
#include <sstream>

#include "dcl/errors.hpp"
#include "dcl/hash.hpp"

namespace dcl {

namespace F = torch::nn::functional;

namespace {

int log2_exact(std::int64_t v) {
  int out = 0;
  while ((std::int64_t{1} << out) < v) ++out;
  return out;
}

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

torch::Tensor lrelu(const torch::Tensor& x, double slope) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(slope));
}

void check_finite(const torch::Tensor& x, const std::string& network, int level) {
  if (!torch::isfinite(x).all().item<bool>()) {
    throw NumericError(network + ": non-finite activation at level " + std::to_string(level), level);
  }
}

void check_taps(const TapSet& taps, int levels, const std::string& network) {
  for (int level : taps) {
    if (level < 0 || level > levels) {
      throw ConfigError(network + ": tap level " + std::to_string(level) + " outside registry [0, " +
                        std::to_string(levels) + "]");
    }
  }
}

}  // namespace

void init_parameters(torch::nn::Module& module, at::Generator& gen, double slope) {
  torch::NoGradGuard no_grad;
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  for (auto& item : module.named_parameters()) {
    auto& p = item.value();
    if (item.key().size() >= 4 && item.key().compare(item.key().size() - 4, 4, "bias") == 0) {
      p.zero_();
      continue;
    }
    const std::int64_t fan_in = p.dim() > 1 ? p.numel() / p.size(0) : p.numel();
    const double std = gain / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    p.copy_(torch::randn(p.sizes(), gen, p.options()) * std);
  }
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = kFnvOffset;
  auto mix = [&h](const std::string& name, const torch::Tensor& t) {
    h = fnv1a(name, h);
    auto c = t.detach().contiguous();
    h = fnv1a(c.data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size(), h);
  };
  for (const auto& item : module.named_parameters()) mix(item.key(), item.value());
  for (const auto& item : module.named_buffers()) mix(item.key(), item.value());
  return h;
}

void zero_parameters(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) p.zero_();
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

int GeneratorOptions::levels() const { return log2_exact(resolution) - 2; }

std::int64_t GeneratorOptions::channels(int level) const {
  return std::min(base_channels << level, max_channels);
}

std::string GeneratorOptions::canonical() const {
  std::ostringstream os;
  os << "generator resolution=" << resolution << " z_dim=" << z_dim << " base=" << base_channels
     << " max=" << max_channels << " bias=" << bias << " slope=" << slope;
  return os.str();
}

void GeneratorOptions::validate() const {
  if (!is_power_of_two(resolution) || resolution < 8) {
    throw ConfigError("generator resolution must be a power of two >= 8");
  }
  if (z_dim < 1 || base_channels < 1 || max_channels < base_channels) {
    throw ConfigError("generator widths must be positive with max_channels >= base_channels");
  }
}

GeneratorImpl::GeneratorImpl(GeneratorOptions options) : options_(std::move(options)) {
  options_.validate();
  reset();
}

void GeneratorImpl::reset() {
  const int levels = options_.levels();
  const auto top = options_.channels(levels);
  input_ = register_module(
      "input", torch::nn::Linear(torch::nn::LinearOptions(options_.z_dim, top * 16).bias(options_.bias)));
  blocks_.clear();
  blocks_.assign(static_cast<std::size_t>(levels), torch::nn::Conv2d(nullptr));
  for (int level = levels - 1; level >= 0; --level) {
    auto opts = torch::nn::Conv2dOptions(options_.channels(level + 1), options_.channels(level), 3)
                    .padding(1)
                    .bias(options_.bias);
    blocks_[static_cast<std::size_t>(level)] =
        register_module("block" + std::to_string(level), torch::nn::Conv2d(opts));
  }
  to_rgb_ = register_module(
      "to_rgb",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(options_.channels(0), 3, 3).padding(1).bias(options_.bias)));
  if (frozen_) set_frozen(true);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z) {
  FeaturePyramid unused;
  return forward_tapped(z, {}, unused);
}

torch::Tensor GeneratorImpl::forward_tapped(const torch::Tensor& z, const TapSet& taps, FeaturePyramid& out) {
  const int levels = options_.levels();
  check_taps(taps, levels, "generator");
  auto wants = [&taps](int level) { return std::binary_search(taps.begin(), taps.end(), level); };

  auto x = lrelu(input_->forward(z), options_.slope).view({z.size(0), options_.channels(levels), 4, 4});
  check_finite(x, "generator", levels);
  if (wants(levels)) out.insert(levels, x);
  for (int level = levels - 1; level >= 0; --level) {
    x = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    x = lrelu(blocks_[static_cast<std::size_t>(level)]->forward(x), options_.slope);
    check_finite(x, "generator", level);
    if (wants(level)) out.insert(level, x);
  }
  return torch::tanh(to_rgb_->forward(x));
}

std::vector<LayerInfo> GeneratorImpl::layer_registry() const {
  std::vector<LayerInfo> out;
  for (int level = 0; level <= options_.levels(); ++level) {
    out.push_back({level, level == options_.levels() ? "input" : "block" + std::to_string(level),
                   options_.channels(level), options_.resolution >> level});
  }
  return out;
}

TapSet GeneratorImpl::all_levels() const {
  TapSet out;
  for (int level = 0; level <= options_.levels(); ++level) out.push_back(level);
  return out;
}

void GeneratorImpl::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : parameters()) p.set_requires_grad(!frozen);
}

GeneratorOutput generator_forward(Generator& g, const LatentBatch& z, const TapSet& taps) {
  z.validate();
  if (z.dim() != g->options().z_dim) {
    throw InputError("latent dimension " + std::to_string(z.dim()) + " does not match generator z_dim " +
                     std::to_string(g->options().z_dim));
  }
  const auto sorted = make_tap_set(taps);
  GeneratorOutput out;
  out.features = FeaturePyramid("generator");
  std::optional<torch::NoGradGuard> guard;
  if (g->frozen()) guard.emplace();
  out.images.data = g->forward_tapped(z.data, sorted, out.features);
  out.images.provenance = g->frozen() ? Provenance::GeneratedSource : Provenance::GeneratedTarget;
  return out;
}

Generator clone_frozen(const Generator& g) {
  auto copy = std::dynamic_pointer_cast<GeneratorImpl>(g->clone());
  Generator out(copy);
  out->set_frozen(true);
  out->eval();
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

int DiscriminatorOptions::levels() const { return log2_exact(resolution) - 2; }

std::int64_t DiscriminatorOptions::channels(int level) const {
  return std::min(base_channels << level, max_channels);
}

int DiscriminatorOptions::resolved_patch_level() const {
  return patch_level < 0 ? levels() - 1 : patch_level;
}

std::string DiscriminatorOptions::canonical() const {
  std::ostringstream os;
  os << "discriminator resolution=" << resolution << " base=" << base_channels << " max=" << max_channels
     << " bias=" << bias << " slope=" << slope << " patch=" << patch_head << "@" << resolved_patch_level();
  return os.str();
}

void DiscriminatorOptions::validate() const {
  if (!is_power_of_two(resolution) || resolution < 8) {
    throw ConfigError("discriminator resolution must be a power of two >= 8");
  }
  if (base_channels < 1 || max_channels < base_channels) {
    throw ConfigError("discriminator widths must be positive with max_channels >= base_channels");
  }
  if (patch_head && (resolved_patch_level() < 0 || resolved_patch_level() > levels())) {
    throw ConfigError("patch level outside the discriminator registry");
  }
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorOptions options) : options_(std::move(options)) {
  options_.validate();
  reset();
}

void DiscriminatorImpl::reset() {
  const int levels = options_.levels();
  from_rgb_ = register_module(
      "from_rgb",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, options_.channels(0), 3).padding(1).bias(options_.bias)));
  downs_.clear();
  for (int level = 1; level <= levels; ++level) {
    auto opts = torch::nn::Conv2dOptions(options_.channels(level - 1), options_.channels(level), 4)
                    .stride(2)
                    .padding(1)
                    .bias(options_.bias);
    downs_.push_back(register_module("down" + std::to_string(level), torch::nn::Conv2d(opts)));
  }
  head_ = register_module(
      "head", torch::nn::Linear(torch::nn::LinearOptions(options_.channels(levels) * 16, 1).bias(options_.bias)));
  if (options_.patch_head) {
    patch_ = register_module(
        "patch", torch::nn::Conv2d(torch::nn::Conv2dOptions(options_.channels(options_.resolved_patch_level()), 1, 1)
                                       .bias(options_.bias)));
  }
  if (frozen_levels_ > 0) freeze_levels(frozen_levels_);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  FeaturePyramid unused;
  return forward_tapped(x, {}, unused, DiscriminatorHead::Image);
}

torch::Tensor DiscriminatorImpl::forward_tapped(const torch::Tensor& x, const TapSet& taps, FeaturePyramid& out,
                                                DiscriminatorHead head) {
  const int levels = options_.levels();
  check_taps(taps, levels, "discriminator");
  if (head == DiscriminatorHead::Patch && !options_.patch_head) {
    throw ConfigError("discriminator has no patch head");
  }
  auto wants = [&taps](int level) { return std::binary_search(taps.begin(), taps.end(), level); };
  const int patch_level = options_.resolved_patch_level();

  auto h = lrelu(from_rgb_->forward(x), options_.slope);
  check_finite(h, "discriminator", 0);
  if (wants(0)) out.insert(0, h);
  torch::Tensor patch_logits;
  if (head == DiscriminatorHead::Patch && patch_level == 0) patch_logits = patch_->forward(h);
  for (int level = 1; level <= levels; ++level) {
    h = lrelu(downs_[static_cast<std::size_t>(level - 1)]->forward(h), options_.slope);
    check_finite(h, "discriminator", level);
    if (wants(level)) out.insert(level, h);
    if (head == DiscriminatorHead::Patch && patch_level == level) patch_logits = patch_->forward(h);
  }
  if (head == DiscriminatorHead::Patch) return patch_logits;
  return head_->forward(h.flatten(1)).squeeze(1);
}

std::vector<LayerInfo> DiscriminatorImpl::layer_registry() const {
  std::vector<LayerInfo> out;
  for (int level = 0; level <= options_.levels(); ++level) {
    out.push_back({level, level == 0 ? "from_rgb" : "down" + std::to_string(level), options_.channels(level),
                   options_.resolution >> level});
  }
  return out;
}

TapSet DiscriminatorImpl::all_levels() const {
  TapSet out;
  for (int level = 0; level <= options_.levels(); ++level) out.push_back(level);
  return out;
}

std::vector<torch::Tensor> DiscriminatorImpl::level_parameters(int k) const {
  std::vector<torch::Tensor> out;
  if (k <= 0) return out;
  for (auto& p : from_rgb_->parameters()) out.push_back(p);
  for (int level = 1; level < k && level <= options_.levels(); ++level) {
    for (auto& p : downs_[static_cast<std::size_t>(level - 1)]->parameters()) out.push_back(p);
  }
  return out;
}

void DiscriminatorImpl::freeze_levels(int k) {
  frozen_levels_ = k;
  for (auto& p : parameters()) p.set_requires_grad(true);
  for (auto& p : level_parameters(k)) p.set_requires_grad(false);
}

std::vector<torch::Tensor> DiscriminatorImpl::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

DiscriminatorOutput discriminator_forward(Discriminator& d, const ImageBatch& x, const TapSet& taps,
                                          DiscriminatorHead head) {
  const auto& opts = d->options();
  if (x.data.dim() != 4 || x.channels() != 3 || x.height() != opts.resolution || x.width() != opts.resolution) {
    throw InputError("discriminator expects (N, 3, " + std::to_string(opts.resolution) + ", " +
                     std::to_string(opts.resolution) + ") images");
  }
  DiscriminatorOutput out;
  out.features = FeaturePyramid("discriminator");
  out.logits = d->forward_tapped(x.data, make_tap_set(taps), out.features, head);
  return out;
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

std::string ClassifierOptions::canonical() const {
  std::ostringstream os;
  os << "classifier resolution=" << resolution << " channels=" << channels << " widths=";
  for (auto w : widths) os << w << ",";
  os << " slope=" << slope;
  return os.str();
}

ClassifierImpl::ClassifierImpl(ClassifierOptions options) : options_(std::move(options)) {
  if (!is_power_of_two(options_.resolution) ||
      (options_.resolution >> options_.widths.size()) < 1) {
    throw ConfigError("classifier resolution too small for its depth");
  }
  reset();
}

void ClassifierImpl::reset() {
  convs_.clear();
  std::int64_t in = options_.channels;
  for (std::size_t i = 0; i < options_.widths.size(); ++i) {
    auto opts = torch::nn::Conv2dOptions(in, options_.widths[i], 4).stride(2).padding(1);
    convs_.push_back(register_module("conv" + std::to_string(i), torch::nn::Conv2d(opts)));
    in = options_.widths[i];
  }
  const auto spatial = options_.resolution >> options_.widths.size();
  fc_ = register_module("fc", torch::nn::Linear(in * spatial * spatial, 1));
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (auto& conv : convs_) h = lrelu(conv->forward(h), options_.slope);
  return fc_->forward(h.flatten(1)).squeeze(1);
}

torch::Tensor classifier_predict(Classifier& c, const ImageBatch& x, bool allow_untrained) {
  if (!c->trained() && !allow_untrained) {
    throw ConfigError("classifier is untrained; pass allow_untrained to use it anyway");
  }
  const auto& opts = c->options();
  if (x.data.dim() != 4 || x.channels() != opts.channels || x.height() != opts.resolution ||
      x.width() != opts.resolution) {
    throw InputError("classifier expects (N, " + std::to_string(opts.channels) + ", " +
                     std::to_string(opts.resolution) + ", " + std::to_string(opts.resolution) + ") images");
  }
  torch::NoGradGuard no_grad;
  return torch::sigmoid(c->forward(x.data));
}

// ---------------------------------------------------------------------------
// Perceptual feature network
// ---------------------------------------------------------------------------

std::string FeatureNetOptions::canonical() const {
  std::ostringstream os;
  os << "featnet resolution=" << resolution << " widths=";
  for (auto w : widths) os << w << ",";
  os << " heads=";
  for (auto h : head_classes) os << h << ",";
  os << " slope=" << slope;
  return os.str();
}

FeatureNetImpl::FeatureNetImpl(FeatureNetOptions options) : options_(std::move(options)) {
  if (options_.widths.empty()) throw ConfigError("feature net needs at least one level");
  reset();
}

void FeatureNetImpl::reset() {
  convs_.clear();
  heads_.clear();
  std::int64_t in = 3;
  for (std::size_t i = 0; i < options_.widths.size(); ++i) {
    auto opts = i == 0 ? torch::nn::Conv2dOptions(in, options_.widths[i], 3).padding(1)
                       : torch::nn::Conv2dOptions(in, options_.widths[i], 4).stride(2).padding(1);
    convs_.push_back(register_module("conv" + std::to_string(i), torch::nn::Conv2d(opts)));
    in = options_.widths[i];
  }
  for (std::size_t i = 0; i < options_.head_classes.size(); ++i) {
    heads_.push_back(register_module("head" + std::to_string(i), torch::nn::Linear(in, options_.head_classes[i])));
  }
}

std::vector<torch::Tensor> FeatureNetImpl::trunk(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x;
  for (auto& conv : convs_) {
    h = lrelu(conv->forward(h), options_.slope);
    out.push_back(h);
  }
  return out;
}

torch::Tensor FeatureNetImpl::embedding(const torch::Tensor& x) {
  auto h = x;
  for (auto& conv : convs_) h = lrelu(conv->forward(h), options_.slope);
  return h.mean({2, 3});
}

std::vector<torch::Tensor> FeatureNetImpl::head_logits(const torch::Tensor& x) {
  auto e = embedding(x);
  std::vector<torch::Tensor> out;
  for (auto& head : heads_) out.push_back(head->forward(e));
  return out;
}

PerceptualFeatures PerceptualFeatures::select(const torch::Tensor& indices) const {
  PerceptualFeatures out;
  for (const auto& level : levels) out.levels.push_back(level.index_select(0, indices));
  return out;
}

PerceptualFeatures perceptual_features(FeatureNet& net, const ImageBatch& images, std::int64_t chunk) {
  if (images.data.dim() != 4 || images.height() != net->options().resolution ||
      images.width() != net->options().resolution || images.channels() != 3) {
    throw InputError("feature net expects (N, 3, " + std::to_string(net->options().resolution) + ", " +
                     std::to_string(net->options().resolution) + ") images");
  }
  torch::NoGradGuard no_grad;
  std::vector<std::vector<torch::Tensor>> parts(net->options().widths.size());
  for (std::int64_t begin = 0; begin < images.size(); begin += chunk) {
    auto batch = images.data.slice(0, begin, std::min(begin + chunk, images.size()));
    auto acts = net->trunk(batch);
    for (std::size_t l = 0; l < acts.size(); ++l) {
      auto norm = acts[l].pow(2).sum(1, /*keepdim=*/true).sqrt();
      parts[l].push_back(acts[l] / (norm + 1e-10));
    }
  }
  PerceptualFeatures out;
  for (auto& p : parts) {
    out.levels.push_back(p.empty() ? torch::Tensor() : torch::cat(p, 0));
  }
  return out;
}

torch::Tensor perceptual_distance(const PerceptualFeatures& a, const PerceptualFeatures& b) {
  if (a.levels.size() != b.levels.size() || a.size() != b.size()) {
    throw InputError("perceptual distance needs feature sets of equal size");
  }
  auto total = torch::zeros({a.size()}, torch::kFloat64);
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    auto diff = (a.levels[l] - b.levels[l]).pow(2).sum(1).mean({1, 2});
    total += diff.to(torch::kFloat64);
  }
  return total;
}

torch::Tensor perceptual_distance(FeatureNet& net, const ImageBatch& a, const ImageBatch& b) {
  if (!a.data.defined() || !b.data.defined() || a.data.sizes() != b.data.sizes()) {
    throw InputError("perceptual distance needs image batches of identical shape");
  }
  return perceptual_distance(perceptual_features(net, a), perceptual_features(net, b));
}

}  // namespace dcl

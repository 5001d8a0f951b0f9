#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dcl/losses.hpp"
#include "dcl/models.hpp"

namespace dcl {

/// Flat `section.key = value` text.  '#' starts a comment; blank lines are
/// ignored; later assignments override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<string>");
  static KeyValueConfig from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value" overrides.
  void apply_overrides(const std::vector<std::string>& assignments);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated integers; an empty value gives an empty list.
  std::vector<int> get_int_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Sorted `key = value` lines; parse(dump()) reproduces the config.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

enum class Method { Dcl, Tgan, FreezeD, Ewc, Cdc };

std::string to_string(Method m);
/// Throws ConfigError naming the valid ids.
Method parse_method(std::string_view id);
std::string valid_methods();

enum class FeatureReduction { Pool, Flatten };

struct ModelConfig {
  GeneratorOptions generator;
  DiscriminatorOptions discriminator;
  ClassifierOptions classifier;
  FeatureNetOptions featnet;
  /// False leaves the perceptual trunk at its seeded random initialization.
  bool train_featnet = true;

  /// Canonical architecture description; its hash is stored in checkpoints.
  std::string canonical() const;
  std::uint64_t hash() const;
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | image-folder
  std::uint64_t seed = 0;
  std::int64_t source_train = 5000;
  std::int64_t source_val = 1000;
  std::int64_t target_pool = 200;
  std::int64_t target_eval = 2000;
  std::string source_folder;
  std::string target_folder;
};

struct PretrainConfig {
  std::int64_t iterations = 4000;
  std::int64_t batch = 32;
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  std::uint64_t seed = 0;
  std::int64_t classifier_steps = 400;
  std::int64_t featnet_steps = 600;
  std::int64_t eval_samples = 1000;
  double held_out_fraction = 0.2;
};

struct AdaptationConfig {
  Method method = Method::Dcl;
  std::int64_t shots = 10;
  std::uint64_t shot_seed = 0;
  std::int64_t batch = 4;
  std::int64_t iterations = 3000;
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
  double tau = kDefaultTau;
  double lambda_cdc = 1.0;
  double lambda_ewc = 1.0;
  std::int64_t fisher_batch = 32;
  TapSet g_layer_pool;  // empty = every generator level
  TapSet d_layer_pool;  // empty = every discriminator level
  std::int64_t taps_per_iteration = 2;
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  std::uint64_t seed = 0;
  std::int64_t probe_interval = 50;
  std::int64_t probe_batch = 256;
  std::int64_t freeze_d_layers = 2;
  NegativeSource negatives = NegativeSource::Source;
  FeatureReduction reduction = FeatureReduction::Pool;
  std::int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
  std::string source_checkpoint;
  std::string evaluator_checkpoint;
  bool force = false;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

struct EvalConfig {
  std::int64_t generated = 1000;
  std::int64_t pair_budget = 100;
  std::int64_t standard_pairs = 1000;
  std::uint64_t seed = 12345;
};

struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  PretrainConfig pretrain;
  AdaptationConfig adapt;
  EvalConfig eval;
  /// Defaults merged with the user's values; echoed into run manifests.
  KeyValueConfig resolved;
};

/// Every recognised key with its default value.
const std::vector<std::pair<std::string, std::string>>& config_schema();

/// Merges defaults, rejects unknown keys, parses and validates every section.
ExperimentConfig resolve_experiment(const KeyValueConfig& user);

}  // namespace dcl

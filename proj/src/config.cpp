#include "dcl/config.hpp"
#include "dcl/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "dcl/errors.hpp"
#include "dcl/hash.hpp"

namespace dcl {

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

bool valid_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
  });
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& origin) {
  KeyValueConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto body = trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    auto key = trim(std::string_view(body).substr(0, eq));
    if (!valid_key(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": invalid key '" + key + "'");
    cfg.values_[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw ConfigError("invalid key '" + key + "'");
  values_[key] = trim(value);
}

void KeyValueConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    set(trim(std::string_view(a).substr(0, eq)), a.substr(eq + 1));
  }
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  auto s = get_string(key);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key) const {
  auto s = get_string(key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  return v;
}

double KeyValueConfig::get_double(const std::string& key) const {
  auto s = get_string(key);
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  auto s = get_string(key);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + s + "'");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key) const {
  auto s = get_string(key);
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    int v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("config key '" + key + "' expects comma-separated integers, got '" + s + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string KeyValueConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::Dcl: return "dcl";
    case Method::Tgan: return "tgan";
    case Method::FreezeD: return "freezed";
    case Method::Ewc: return "ewc";
    case Method::Cdc: return "cdc";
  }
  return "unknown";
}

std::string valid_methods() { return "dcl, tgan, freezed, ewc, cdc"; }

Method parse_method(std::string_view id) {
  for (auto m : {Method::Dcl, Method::Tgan, Method::FreezeD, Method::Ewc, Method::Cdc}) {
    if (to_string(m) == id) return m;
  }
  throw ConfigError("unknown method '" + std::string(id) + "'; valid methods: " + valid_methods());
}

std::string ModelConfig::canonical() const {
  return generator.canonical() + "\n" + discriminator.canonical() + "\n" + classifier.canonical() + "\n" +
         featnet.canonical();
}

std::uint64_t ModelConfig::hash() const { return fnv1a(canonical()); }

void AdaptationConfig::validate() const {
  if (shots < 1) throw ConfigError("adapt.shots must be >= 1");
  if (batch < 1) throw ConfigError("adapt.batch must be >= 1");
  if (iterations < 1) throw ConfigError("adapt.iterations must be >= 1");
  if (taps_per_iteration < 1) throw ConfigError("adapt.taps_per_iteration must be >= 1");
  if (!g_layer_pool.empty() && taps_per_iteration > static_cast<std::int64_t>(g_layer_pool.size())) {
    throw ConfigError("adapt.taps_per_iteration exceeds the generator layer pool");
  }
  if (!d_layer_pool.empty() && taps_per_iteration > static_cast<std::int64_t>(d_layer_pool.size())) {
    throw ConfigError("adapt.taps_per_iteration exceeds the discriminator layer pool");
  }
  if (lambda1 < 0 || lambda2 < 0 || lambda_cdc < 0 || lambda_ewc < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(tau > 0)) throw ConfigError("adapt.tau must be positive");
  if (probe_interval < 1) throw ConfigError("adapt.probe_interval must be >= 1");
  if (probe_batch < 1) throw ConfigError("adapt.probe_batch must be >= 1");
  if (freeze_d_layers < 0) throw ConfigError("adapt.freeze_d_layers must be >= 0");
  if (fisher_batch < 1) throw ConfigError("adapt.fisher_batch must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("adapt.checkpoint_interval must be >= 0");
  if (!(lr > 0) || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("invalid optimizer hyperparameters");
  }
}

const std::vector<std::pair<std::string, std::string>>& config_schema() {
  static const std::vector<std::pair<std::string, std::string>> schema = {
      {"model.resolution", "64"},
      {"model.z_dim", "64"},
      {"model.g_base_channels", "16"},
      {"model.d_base_channels", "16"},
      {"model.max_channels", "256"},
      {"model.patch_head", "false"},
      {"model.patch_level", "-1"},
      {"model.featnet", "trained"},
      {"data.kind", "synthetic"},
      {"data.seed", "0"},
      {"data.source_train", "5000"},
      {"data.source_val", "1000"},
      {"data.target_pool", "200"},
      {"data.target_eval", "2000"},
      {"data.source_folder", ""},
      {"data.target_folder", ""},
      {"pretrain.iterations", "4000"},
      {"pretrain.batch", "32"},
      {"pretrain.lr", "0.0002"},
      {"pretrain.beta1", "0.0"},
      {"pretrain.beta2", "0.99"},
      {"pretrain.seed", "0"},
      {"pretrain.classifier_steps", "400"},
      {"pretrain.featnet_steps", "600"},
      {"pretrain.eval_samples", "1000"},
      {"pretrain.held_out_fraction", "0.2"},
      {"adapt.method", "dcl"},
      {"adapt.shots", "10"},
      {"adapt.shot_seed", "0"},
      {"adapt.batch", "4"},
      {"adapt.iterations", "3000"},
      {"adapt.lambda1", "2.0"},
      {"adapt.lambda2", "0.5"},
      {"adapt.tau", "0.07"},
      {"adapt.lambda_cdc", "1.0"},
      {"adapt.lambda_ewc", "1.0"},
      {"adapt.fisher_batch", "32"},
      {"adapt.g_layer_pool", ""},
      {"adapt.d_layer_pool", ""},
      {"adapt.taps_per_iteration", "2"},
      {"adapt.lr", "0.0002"},
      {"adapt.beta1", "0.0"},
      {"adapt.beta2", "0.99"},
      {"adapt.seed", "0"},
      {"adapt.probe_interval", "50"},
      {"adapt.probe_batch", "256"},
      {"adapt.freeze_d_layers", "2"},
      {"adapt.negatives", "source"},
      {"adapt.feature_reduction", "pool"},
      {"adapt.checkpoint_interval", "0"},
      {"adapt.source_checkpoint", ""},
      {"adapt.evaluator_checkpoint", ""},
      {"adapt.force", "false"},
      {"eval.generated", "1000"},
      {"eval.pair_budget", "100"},
      {"eval.standard_pairs", "1000"},
      {"eval.seed", "12345"},
  };
  return schema;
}

ExperimentConfig resolve_experiment(const KeyValueConfig& user) {
  KeyValueConfig merged;
  std::set<std::string> known;
  for (const auto& [k, v] : config_schema()) {
    merged.set(k, v);
    known.insert(k);
  }
  for (const auto& [k, v] : user.values()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    merged.set(k, v);
  }

  ExperimentConfig out;
  out.resolved = merged;
  const auto& c = merged;

  auto& g = out.model.generator;
  g.resolution = c.get_int("model.resolution");
  g.z_dim = c.get_int("model.z_dim");
  g.base_channels = c.get_int("model.g_base_channels");
  g.max_channels = c.get_int("model.max_channels");
  g.validate();
  auto& d = out.model.discriminator;
  d.resolution = g.resolution;
  d.base_channels = c.get_int("model.d_base_channels");
  d.max_channels = g.max_channels;
  d.patch_head = c.get_bool("model.patch_head");
  d.patch_level = static_cast<int>(c.get_int("model.patch_level"));
  d.validate();
  out.model.classifier.resolution = g.resolution;
  out.model.featnet.resolution = g.resolution;
  const auto featnet_mode = c.get_string("model.featnet");
  if (featnet_mode != "trained" && featnet_mode != "random") {
    throw ConfigError("model.featnet must be 'trained' or 'random'");
  }
  out.model.train_featnet = featnet_mode == "trained";

  auto& data = out.data;
  data.kind = c.get_string("data.kind");
  if (data.kind != "synthetic" && data.kind != "image-folder") {
    throw ConfigError("data.kind must be 'synthetic' or 'image-folder'");
  }
  data.seed = c.get_uint("data.seed");
  data.source_train = c.get_int("data.source_train");
  data.source_val = c.get_int("data.source_val");
  data.target_pool = c.get_int("data.target_pool");
  data.target_eval = c.get_int("data.target_eval");
  data.source_folder = c.get_string("data.source_folder");
  data.target_folder = c.get_string("data.target_folder");
  if (data.kind == "image-folder" && (data.source_folder.empty() || data.target_folder.empty())) {
    throw ConfigError("image-folder data needs data.source_folder and data.target_folder");
  }
  if (data.source_train < 1 || data.source_val < 1 || data.target_pool < 1 || data.target_eval < 1) {
    throw ConfigError("dataset split sizes must be positive");
  }
  if (data.kind == "synthetic") {
    out.model.featnet.head_classes.assign(FaceFactors::kCounts.begin(), FaceFactors::kCounts.end());
  } else {
    out.model.featnet.head_classes = {2};
  }

  auto& p = out.pretrain;
  p.iterations = c.get_int("pretrain.iterations");
  p.batch = c.get_int("pretrain.batch");
  p.lr = c.get_double("pretrain.lr");
  p.beta1 = c.get_double("pretrain.beta1");
  p.beta2 = c.get_double("pretrain.beta2");
  p.seed = c.get_uint("pretrain.seed");
  p.classifier_steps = c.get_int("pretrain.classifier_steps");
  p.featnet_steps = c.get_int("pretrain.featnet_steps");
  p.eval_samples = c.get_int("pretrain.eval_samples");
  p.held_out_fraction = c.get_double("pretrain.held_out_fraction");
  if (p.iterations < 0 || p.batch < 1 || p.classifier_steps < 0 || p.featnet_steps < 0 || p.eval_samples < 2) {
    throw ConfigError("invalid pretraining schedule");
  }
  if (!(p.held_out_fraction > 0.0 && p.held_out_fraction < 1.0)) {
    throw ConfigError("pretrain.held_out_fraction must lie in (0, 1)");
  }

  auto& a = out.adapt;
  a.method = parse_method(c.get_string("adapt.method"));
  a.shots = c.get_int("adapt.shots");
  a.shot_seed = c.get_uint("adapt.shot_seed");
  a.batch = c.get_int("adapt.batch");
  a.iterations = c.get_int("adapt.iterations");
  a.lambda1 = c.get_double("adapt.lambda1");
  a.lambda2 = c.get_double("adapt.lambda2");
  a.tau = c.get_double("adapt.tau");
  a.lambda_cdc = c.get_double("adapt.lambda_cdc");
  a.lambda_ewc = c.get_double("adapt.lambda_ewc");
  a.fisher_batch = c.get_int("adapt.fisher_batch");
  a.g_layer_pool = make_tap_set(c.get_int_list("adapt.g_layer_pool"));
  a.d_layer_pool = make_tap_set(c.get_int_list("adapt.d_layer_pool"));
  a.taps_per_iteration = c.get_int("adapt.taps_per_iteration");
  a.lr = c.get_double("adapt.lr");
  a.beta1 = c.get_double("adapt.beta1");
  a.beta2 = c.get_double("adapt.beta2");
  a.seed = c.get_uint("adapt.seed");
  a.probe_interval = c.get_int("adapt.probe_interval");
  a.probe_batch = c.get_int("adapt.probe_batch");
  a.freeze_d_layers = c.get_int("adapt.freeze_d_layers");
  const auto negatives = c.get_string("adapt.negatives");
  if (negatives == "source") {
    a.negatives = NegativeSource::Source;
  } else if (negatives == "target") {
    a.negatives = NegativeSource::Target;
  } else {
    throw ConfigError("adapt.negatives must be 'source' or 'target'");
  }
  const auto reduction = c.get_string("adapt.feature_reduction");
  if (reduction == "pool") {
    a.reduction = FeatureReduction::Pool;
  } else if (reduction == "flatten") {
    a.reduction = FeatureReduction::Flatten;
  } else {
    throw ConfigError("adapt.feature_reduction must be 'pool' or 'flatten'");
  }
  a.checkpoint_interval = c.get_int("adapt.checkpoint_interval");
  a.source_checkpoint = c.get_string("adapt.source_checkpoint");
  a.evaluator_checkpoint = c.get_string("adapt.evaluator_checkpoint");
  a.force = c.get_bool("adapt.force");
  a.validate();
  for (int level : a.g_layer_pool) {
    if (level < 0 || level > g.levels()) throw ConfigError("adapt.g_layer_pool has a level outside the generator");
  }
  for (int level : a.d_layer_pool) {
    if (level < 0 || level > d.levels()) throw ConfigError("adapt.d_layer_pool has a level outside the discriminator");
  }
  const auto g_pool = a.g_layer_pool.empty() ? g.levels() + 1 : static_cast<int>(a.g_layer_pool.size());
  const auto d_pool = a.d_layer_pool.empty() ? d.levels() + 1 : static_cast<int>(a.d_layer_pool.size());
  if (a.taps_per_iteration > std::min(g_pool, d_pool)) {
    throw ConfigError("adapt.taps_per_iteration exceeds a layer pool");
  }
  if (a.freeze_d_layers > d.levels() + 1) {
    throw ConfigError("adapt.freeze_d_layers exceeds the discriminator depth");
  }

  auto& e = out.eval;
  e.generated = c.get_int("eval.generated");
  e.pair_budget = c.get_int("eval.pair_budget");
  e.standard_pairs = c.get_int("eval.standard_pairs");
  e.seed = c.get_uint("eval.seed");
  if (e.generated < 2 || e.pair_budget < 1 || e.standard_pairs < 1) {
    throw ConfigError("invalid evaluation sizes");
  }
  return out;
}

}  // namespace dcl

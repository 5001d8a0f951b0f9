#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dcl {

inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'L', 'C', 'K', 'P', 'T', '1'};

/// Keyed tensor container.  Keys are slash-separated paths such as
/// "param/generator/block0.weight", "optim/generator/3/exp_avg" or
/// "rng/torch".  Insertion order is preserved on disk.
///
/// File layout (little endian):
///   magic "DCLCKPT1"
///   u64 config_hash
///   u32 meta count, then (u32 len, key bytes, u32 len, value bytes) pairs
///   u32 tensor count, then per tensor:
///     u32 len, name bytes, u8 dtype, u8 rank, i64 dims[rank], u64 nbytes, raw data
///   u64 FNV-1a of every preceding byte
class Checkpoint {
 public:
  std::uint64_t config_hash = 0;
  std::map<std::string, std::string> meta;

  void put(const std::string& key, const torch::Tensor& tensor);
  bool has(const std::string& key) const;
  const torch::Tensor& get(const std::string& key) const;
  /// Keys starting with `prefix`, in insertion order.
  std::vector<std::string> keys(const std::string& prefix = "") const;
  std::size_t size() const { return tensors_.size(); }

  const std::vector<std::pair<std::string, torch::Tensor>>& entries() const { return tensors_; }

 private:
  std::vector<std::pair<std::string, torch::Tensor>> tensors_;
  std::map<std::string, std::size_t> index_;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws MissingInputError when the file is absent or corrupt and
/// ConfigError when `expected_hash` is given, differs, and `force` is false.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {},
                           bool force = false);

/// Hash of a canonical configuration string.
std::uint64_t config_hash(const std::string& canonical);

void store_module(Checkpoint& ckpt, const std::string& name, const torch::nn::Module& module);
/// Copies tensors into the module's existing parameters and buffers.
void restore_module(const Checkpoint& ckpt, const std::string& name, torch::nn::Module& module);

/// Adam moments for `params` (in order); parameters without state are skipped.
void store_adam(Checkpoint& ckpt, const std::string& name, torch::optim::Adam& optimizer,
                const std::vector<torch::Tensor>& params);
void restore_adam(const Checkpoint& ckpt, const std::string& name, torch::optim::Adam& optimizer,
                  const std::vector<torch::Tensor>& params);

void store_generator_state(Checkpoint& ckpt, const std::string& name, const at::Generator& gen);
void restore_generator_state(const Checkpoint& ckpt, const std::string& name, at::Generator& gen);

void store_engine_state(Checkpoint& ckpt, const std::string& name, const std::mt19937_64& engine);
void restore_engine_state(const Checkpoint& ckpt, const std::string& name, std::mt19937_64& engine);

}  // namespace dcl

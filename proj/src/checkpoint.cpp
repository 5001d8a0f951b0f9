#include "dcl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dcl/errors.hpp"
#include "dcl/hash.hpp"

namespace dcl {

namespace {

std::uint8_t dtype_code(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    case torch::kInt32: return 4;
    case torch::kBool: return 5;
    default: throw InputError("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype dtype_from_code(std::uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    case 4: return torch::kInt32;
    case 5: return torch::kBool;
    default: throw MissingInputError("checkpoint: unknown dtype code " + std::to_string(code));
  }
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buffer_; }

 private:
  std::vector<char> buffer_;
};

class Reader {
 public:
  Reader(const std::vector<char>& data, std::string origin) : data_(data), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* out, std::size_t n) {
    if (pos_ + n > data_.size()) throw MissingInputError("checkpoint truncated: " + origin_);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  const std::vector<char>& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string key_of(const std::string& name, const std::string& leaf) { return name + "/" + leaf; }

}  // namespace

void Checkpoint::put(const std::string& key, const torch::Tensor& tensor) {
  auto value = tensor.detach().to(torch::kCPU).contiguous().clone();
  auto it = index_.find(key);
  if (it != index_.end()) {
    tensors_[it->second].second = value;
    return;
  }
  index_[key] = tensors_.size();
  tensors_.emplace_back(key, value);
}

bool Checkpoint::has(const std::string& key) const { return index_.count(key) != 0; }

const torch::Tensor& Checkpoint::get(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw MissingInputError("checkpoint has no entry '" + key + "'");
  return tensors_[it->second].second;
}

std::vector<std::string> Checkpoint::keys(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [key, _] : tensors_) {
    if (key.compare(0, prefix.size(), prefix) == 0) out.push_back(key);
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod(ckpt.config_hash);
  w.pod(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.pod(static_cast<std::uint32_t>(ckpt.entries().size()));
  for (const auto& [name, tensor] : ckpt.entries()) {
    w.str(name);
    w.pod(dtype_code(tensor.scalar_type()));
    w.pod(static_cast<std::uint8_t>(tensor.dim()));
    for (auto d : tensor.sizes()) w.pod(static_cast<std::int64_t>(d));
    const auto nbytes = static_cast<std::uint64_t>(tensor.numel()) * tensor.element_size();
    w.pod(nbytes);
    w.bytes(tensor.data_ptr(), nbytes);
  }
  const auto checksum = fnv1a(w.buffer().data(), w.buffer().size());
  w.pod(checksum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot open checkpoint for writing: " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw MissingInputError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash,
                           bool force) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("checkpoint not found: " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kCheckpointMagic) + 16 ||
      std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw MissingInputError("not a DCLCKPT1 checkpoint: " + path.string());
  }
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, data.data() + data.size() - sizeof(stored_sum), sizeof(stored_sum));
  if (fnv1a(data.data(), data.size() - sizeof(stored_sum)) != stored_sum) {
    throw MissingInputError("checkpoint checksum mismatch: " + path.string());
  }

  Reader r(data, path.string());
  char magic[8];
  r.bytes(magic, sizeof(magic));
  Checkpoint ckpt;
  ckpt.config_hash = r.pod<std::uint64_t>();
  if (expected_hash && *expected_hash != ckpt.config_hash && !force) {
    std::ostringstream os;
    os << "checkpoint config hash " << std::hex << ckpt.config_hash << " does not match expected " << *expected_hash
       << " (" << path.string() << "); use --force to load anyway";
    throw ConfigError(os.str());
  }
  const auto meta_count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    auto k = r.str();
    ckpt.meta[k] = r.str();
  }
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    auto dtype = dtype_from_code(r.pod<std::uint8_t>());
    auto rank = r.pod<std::uint8_t>();
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = r.pod<std::int64_t>();
    auto nbytes = r.pod<std::uint64_t>();
    auto tensor = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (nbytes != static_cast<std::uint64_t>(tensor.numel()) * tensor.element_size()) {
      throw MissingInputError("checkpoint entry '" + name + "' has inconsistent size");
    }
    r.bytes(tensor.data_ptr(), nbytes);
    ckpt.put(name, tensor);
  }
  return ckpt;
}

std::uint64_t config_hash(const std::string& canonical) { return fnv1a(canonical); }

void store_module(Checkpoint& ckpt, const std::string& name, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) ckpt.put(key_of(name, item.key()), item.value());
  for (const auto& item : module.named_buffers()) ckpt.put(key_of(name, item.key()), item.value());
}

void restore_module(const Checkpoint& ckpt, const std::string& name, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = ckpt.get(key_of(name, key));
    if (src.sizes() != dst.sizes()) {
      throw ConfigError("checkpoint entry '" + key_of(name, key) + "' has a different shape than the model");
    }
    dst.copy_(src);
  };
  for (auto& item : module.named_parameters()) copy_into(item.key(), item.value());
  for (auto& item : module.named_buffers()) copy_into(item.key(), item.value());
}

void store_adam(Checkpoint& ckpt, const std::string& name, torch::optim::Adam& optimizer,
                const std::vector<torch::Tensor>& params) {
  auto& states = optimizer.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = states.find(params[i].unsafeGetTensorImpl());
    if (it == states.end()) continue;
    auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
    const auto base = name + "/" + std::to_string(i);
    ckpt.put(base + "/step", torch::tensor({s.step()}, torch::kInt64));
    ckpt.put(base + "/exp_avg", s.exp_avg());
    ckpt.put(base + "/exp_avg_sq", s.exp_avg_sq());
  }
}

void restore_adam(const Checkpoint& ckpt, const std::string& name, torch::optim::Adam& optimizer,
                  const std::vector<torch::Tensor>& params) {
  auto& states = optimizer.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto base = name + "/" + std::to_string(i);
    if (!ckpt.has(base + "/step")) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(ckpt.get(base + "/step").item<std::int64_t>());
    s->exp_avg(ckpt.get(base + "/exp_avg").clone());
    s->exp_avg_sq(ckpt.get(base + "/exp_avg_sq").clone());
    states[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

void store_generator_state(Checkpoint& ckpt, const std::string& name, const at::Generator& gen) {
  ckpt.put(name, gen.get_state());
}

void restore_generator_state(const Checkpoint& ckpt, const std::string& name, at::Generator& gen) {
  gen.set_state(ckpt.get(name));
}

void store_engine_state(Checkpoint& ckpt, const std::string& name, const std::mt19937_64& engine) {
  std::ostringstream os;
  os << engine;
  const auto text = os.str();
  auto t = torch::empty({static_cast<std::int64_t>(text.size())}, torch::kUInt8);
  std::memcpy(t.data_ptr(), text.data(), text.size());
  ckpt.put(name, t);
}

void restore_engine_state(const Checkpoint& ckpt, const std::string& name, std::mt19937_64& engine) {
  const auto& t = ckpt.get(name);
  std::string text(static_cast<std::size_t>(t.numel()), '\0');
  std::memcpy(text.data(), t.data_ptr(), text.size());
  std::istringstream is(text);
  is >> engine;
}

}  // namespace dcl

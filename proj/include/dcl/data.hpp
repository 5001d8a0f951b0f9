#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dcl/batches.hpp"

namespace dcl {

// ---------------------------------------------------------------------------
// Procedural toy domains
// ---------------------------------------------------------------------------

enum class Domain { Source, Target };

/// Discrete layout factors of a procedural face.  Both domains share them;
/// only the rendering style differs (filled colour vs. grayscale strokes).
struct FaceFactors {
  static constexpr std::array<std::int64_t, 7> kCounts = {3, 3, 3, 3, 3, 4, 3};

  int shape = 0;        // round, wide, tall
  int eye_size = 0;
  int eye_spacing = 0;
  int mouth = 0;        // frown, flat, smile
  int hair = 0;         // none, cap, bangs
  int palette = 0;      // colours (source) or stroke darkness (target)
  int offset = 0;       // horizontal placement

  std::array<int, 7> values() const { return {shape, eye_size, eye_spacing, mouth, hair, palette, offset}; }
  /// Index of the joint label in [0, prod(kCounts)).
  std::int64_t joint_label() const;
};

/// Continuous nuisance variation applied on top of the discrete factors.
struct FaceJitter {
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;
  double tint = 0.0;
};

FaceFactors sample_factors(std::mt19937_64& rng);
FaceJitter sample_jitter(std::mt19937_64& rng, double amount);

/// Renders one face as a (3, resolution, resolution) tensor in [-1, 1].
torch::Tensor render_face(const FaceFactors& factors, const FaceJitter& jitter, Domain domain,
                          std::int64_t resolution);

struct SyntheticStyle {
  std::int64_t resolution = 64;
  /// Multiplier on the continuous jitter; 0 renders the bare factors.
  double jitter = 1.0;
};

enum class DatasetKind { ImageFolder, SyntheticProcedural };

struct DatasetSplit {
  std::string name;
  std::int64_t size = 0;  // synthetic only
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::SyntheticProcedural;
  std::string name;
  Domain domain = Domain::Source;
  std::filesystem::path root;  // image folder root: <root>/<split>/<name>.png
  std::uint64_t seed = 0;
  SyntheticStyle style;
  std::vector<DatasetSplit> splits;
  std::int64_t resolution = 64;

  const DatasetSplit& split(const std::string& name) const;
  void validate() const;
};

struct Dataset {
  ImageBatch images;
  std::vector<FaceFactors> factors;  // empty for image folders
  std::vector<std::string> names;

  std::int64_t size() const { return images.data.defined() ? images.size() : 0; }
  Dataset select(const std::vector<std::int64_t>& indices) const;
};

struct ToyDomainSizes {
  std::int64_t source_train = 5000;
  std::int64_t source_val = 1000;
  std::int64_t target_pool = 200;
  std::int64_t target_eval = 2000;
};

/// Source domain: colour faces (splits "train", "val").  Target domain:
/// grayscale stroke sketches of the same factor space (splits "pool" for
/// few-shot sampling and "eval" for held-out evaluation).
std::pair<DatasetSpec, DatasetSpec> synthesize_toy_domains(std::uint64_t seed, const SyntheticStyle& style,
                                                           const ToyDomainSizes& sizes = {});

/// Materializes one split of a dataset (synthetic or folder).
Dataset materialize(const DatasetSpec& spec, const std::string& split);

/// Shannon entropy (nats) of the joint factor labels.
double factor_label_entropy(const std::vector<FaceFactors>& factors);

// ---------------------------------------------------------------------------
// Image folders and PNG I/O
// ---------------------------------------------------------------------------

/// Writes a (3, H, W) image in [-1, 1] as 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
/// Reads a PNG as (3, H, W) in [-1, 1].  Throws MissingInputError if undecodable.
torch::Tensor read_png(const std::filesystem::path& path);
/// Writes every image of a batch as <dir>/<prefix><index>.png (zero padded).
std::vector<std::filesystem::path> save_image_batch(const ImageBatch& batch, const std::filesystem::path& dir,
                                                    const std::string& prefix = "img");

/// Streams the PNG files of `<root>/<split>/` in filename order, resized to
/// `resolution` and normalised to [-1, 1].  Undecodable files are skipped and
/// counted.
class ImageFolderStream {
 public:
  ImageFolderStream(const std::filesystem::path& root, const std::string& split, std::int64_t resolution,
                    Provenance provenance = Provenance::RealTarget);

  /// Next batch of up to `count` decoded images, or nullopt when exhausted.
  std::optional<ImageBatch> next(std::int64_t count, std::vector<std::string>* names = nullptr);
  std::size_t file_count() const { return files_.size(); }
  std::int64_t skipped() const { return skipped_; }

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t cursor_ = 0;
  std::int64_t resolution_;
  Provenance provenance_;
  std::int64_t skipped_ = 0;
};

/// Loads a whole split.  Throws MissingInputError for a missing or empty folder.
Dataset load_image_folder(const DatasetSpec& spec, const std::string& split, std::int64_t* skipped = nullptr);

/// Resizes (N, 3, h, w) to (N, 3, r, r): area averaging when shrinking,
/// bilinear otherwise.
torch::Tensor resize_images(const torch::Tensor& images, std::int64_t resolution);

// ---------------------------------------------------------------------------
// Few-shot sampling and leakage checks
// ---------------------------------------------------------------------------

struct FewShotSample {
  Dataset shots;
  std::vector<std::int64_t> indices;
};

/// Uniform sample of M distinct images, deterministic in `seed`.
FewShotSample sample_few_shot(const Dataset& dataset, std::int64_t m, std::uint64_t seed);

/// Uniform sample of k distinct indices from [0, n) (partial Fisher-Yates).
std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k, std::mt19937_64& rng);

/// FNV-1a of an image's float32 pixels.
std::uint64_t image_hash(const torch::Tensor& image);
std::vector<std::uint64_t> image_hashes(const ImageBatch& batch);
/// Throws InputError when the two batches share an image.
void assert_disjoint(const ImageBatch& a, const ImageBatch& b, const std::string& what);

/// `name: hash` lines for every image in each dataset.
void write_dataset_manifest(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, const Dataset*>>& datasets);

/// splitmix64 mixing; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace dcl

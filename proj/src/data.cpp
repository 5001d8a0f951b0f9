#include "dcl/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "dcl/errors.hpp"
#include "dcl/hash.hpp"

namespace dcl {

namespace F = torch::nn::functional;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

int bounded(std::mt19937_64& rng, std::int64_t n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double symmetric(std::mt19937_64& rng) { return 2.0 * unit(rng) - 1.0; }

struct Rgb {
  double r, g, b;
};

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double ellipse_sdf(double u, double v, double cx, double cy, double rx, double ry) {
  const double nx = (u - cx) / rx;
  const double ny = (v - cy) / ry;
  return (std::sqrt(nx * nx + ny * ny) - 1.0) * std::min(rx, ry);
}

struct Palette {
  Rgb skin, background, hair;
};

constexpr Palette kPalettes[4] = {
    {{0.96, 0.80, 0.64}, {0.25, 0.45, 0.75}, {0.35, 0.20, 0.10}},
    {{0.85, 0.65, 0.45}, {0.30, 0.65, 0.35}, {0.10, 0.10, 0.10}},
    {{0.98, 0.86, 0.76}, {0.75, 0.35, 0.35}, {0.85, 0.70, 0.25}},
    {{0.70, 0.50, 0.35}, {0.55, 0.40, 0.70}, {0.60, 0.25, 0.10}},
};
constexpr double kStrokeDarkness[4] = {0.05, 0.20, 0.35, 0.50};
constexpr Rgb kEye = {0.10, 0.10, 0.15};
constexpr Rgb kMouth = {0.60, 0.10, 0.15};

/// Geometry shared by both renderings.
struct FaceGeometry {
  double cx, cy, rx, ry;
  double eye_y, eye_dx, eye_r;
  double mouth_y, mouth_w, mouth_bend;
  double cap_cut, bangs_cut;

  FaceGeometry(const FaceFactors& f, const FaceJitter& j) {
    static constexpr double kRadii[3][2] = {{0.30, 0.30}, {0.34, 0.26}, {0.26, 0.34}};
    cx = 0.5 + (f.offset - 1) * 0.08 + j.dx;
    cy = 0.52 + j.dy;
    rx = kRadii[f.shape][0] * j.scale;
    ry = kRadii[f.shape][1] * j.scale;
    eye_y = cy - ry * 0.15;
    eye_dx = (0.09 + 0.03 * f.eye_spacing) * j.scale;
    eye_r = (0.035 + 0.015 * f.eye_size) * j.scale;
    mouth_y = cy + ry * 0.45;
    mouth_w = rx * 0.45;
    mouth_bend = 0.045 * (f.mouth - 1) * j.scale;
    cap_cut = cy - ry * 0.35;
    bangs_cut = cy - ry * 0.45;
  }

  double mouth_sdf(double u, double v, double thickness) const {
    const double cu = std::clamp(u, cx - mouth_w, cx + mouth_w);
    const double t = (cu - cx) / mouth_w;
    const double curve = mouth_y + mouth_bend * (1.0 - t * t);
    return std::hypot(u - cu, v - curve) - thickness * 0.5;
  }
  double face_sdf(double u, double v) const { return ellipse_sdf(u, v, cx, cy, rx, ry); }
  double cap_sdf(double u, double v) const {
    return std::max(ellipse_sdf(u, v, cx, cy - 0.02, rx * 1.12, ry * 1.12), v - cap_cut);
  }
  double bangs_sdf(double u, double v) const {
    const double edge = bangs_cut + 0.025 * std::sin(u * 40.0);
    return std::max(face_sdf(u, v), v - edge);
  }
  double eye_sdf(double u, double v, int side) const {
    const double ex = cx + (side == 0 ? -eye_dx : eye_dx);
    return ellipse_sdf(u, v, ex, eye_y, eye_r, eye_r);
  }
};

}  // namespace

std::int64_t FaceFactors::joint_label() const {
  std::int64_t label = 0;
  const auto v = values();
  for (std::size_t i = 0; i < v.size(); ++i) label = label * kCounts[i] + v[i];
  return label;
}

FaceFactors sample_factors(std::mt19937_64& rng) {
  FaceFactors f;
  f.shape = bounded(rng, FaceFactors::kCounts[0]);
  f.eye_size = bounded(rng, FaceFactors::kCounts[1]);
  f.eye_spacing = bounded(rng, FaceFactors::kCounts[2]);
  f.mouth = bounded(rng, FaceFactors::kCounts[3]);
  f.hair = bounded(rng, FaceFactors::kCounts[4]);
  f.palette = bounded(rng, FaceFactors::kCounts[5]);
  f.offset = bounded(rng, FaceFactors::kCounts[6]);
  return f;
}

FaceJitter sample_jitter(std::mt19937_64& rng, double amount) {
  FaceJitter j;
  j.dx = 0.02 * amount * symmetric(rng);
  j.dy = 0.02 * amount * symmetric(rng);
  j.scale = 1.0 + 0.05 * amount * symmetric(rng);
  j.tint = amount * symmetric(rng);
  return j;
}

torch::Tensor render_face(const FaceFactors& f, const FaceJitter& jitter, Domain domain, std::int64_t resolution) {
  const FaceGeometry geo(f, jitter);
  const double px = 1.0 / static_cast<double>(resolution);
  auto coverage = [px](double sdf) { return clamp01(0.5 - sdf / px); };
  auto image = torch::empty({3, resolution, resolution}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();

  const Palette& pal = kPalettes[f.palette];
  const Rgb background = {clamp01(pal.background.r + 0.05 * jitter.tint), clamp01(pal.background.g + 0.05 * jitter.tint),
                          clamp01(pal.background.b - 0.05 * jitter.tint)};
  const double sheet = clamp01(0.96 + 0.02 * jitter.tint);
  const double ink = kStrokeDarkness[f.palette];
  const double stroke = std::max(1.2, 1.5 * static_cast<double>(resolution) / 32.0) * px;

  for (std::int64_t y = 0; y < resolution; ++y) {
    for (std::int64_t x = 0; x < resolution; ++x) {
      const double u = (static_cast<double>(x) + 0.5) * px;
      const double v = (static_cast<double>(y) + 0.5) * px;
      Rgb c;
      if (domain == Domain::Source) {
        c = background;
        c = lerp(c, pal.skin, coverage(geo.face_sdf(u, v)));
        if (f.hair == 1) c = lerp(c, pal.hair, coverage(geo.cap_sdf(u, v)));
        if (f.hair == 2) c = lerp(c, pal.hair, coverage(geo.bangs_sdf(u, v)));
        for (int side = 0; side < 2; ++side) c = lerp(c, kEye, coverage(geo.eye_sdf(u, v, side)));
        c = lerp(c, kMouth, coverage(geo.mouth_sdf(u, v, 0.03)));
      } else {
        const Rgb ink_rgb = {ink, ink, ink};
        c = {sheet, sheet, sheet};
        if (f.hair == 1) c = lerp(c, {0.75, 0.75, 0.75}, coverage(geo.cap_sdf(u, v)));
        if (f.hair == 2) c = lerp(c, {0.62, 0.62, 0.62}, coverage(geo.bangs_sdf(u, v)));
        c = lerp(c, ink_rgb, coverage(std::abs(geo.face_sdf(u, v)) - stroke * 0.5));
        if (f.hair == 1) c = lerp(c, ink_rgb, coverage(std::abs(geo.cap_sdf(u, v)) - stroke * 0.5));
        for (int side = 0; side < 2; ++side) {
          const double e = geo.eye_sdf(u, v, side);
          c = lerp(c, ink_rgb, coverage(std::abs(e) - stroke * 0.5));
          c = lerp(c, ink_rgb, coverage(e + geo.eye_r * 0.5));
        }
        c = lerp(c, ink_rgb, coverage(geo.mouth_sdf(u, v, stroke)));
      }
      acc[0][y][x] = static_cast<float>(2.0 * clamp01(c.r) - 1.0);
      acc[1][y][x] = static_cast<float>(2.0 * clamp01(c.g) - 1.0);
      acc[2][y][x] = static_cast<float>(2.0 * clamp01(c.b) - 1.0);
    }
  }
  return image;
}

// ---------------------------------------------------------------------------

const DatasetSplit& DatasetSpec::split(const std::string& split_name) const {
  for (const auto& s : splits) {
    if (s.name == split_name) return s;
  }
  throw ConfigError("dataset '" + name + "' has no split '" + split_name + "'");
}

void DatasetSpec::validate() const {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
    throw ConfigError("dataset resolution must be a power of two >= 8");
  }
  if (kind == DatasetKind::SyntheticProcedural && style.resolution != resolution) {
    throw ConfigError("synthetic style resolution does not match the dataset resolution");
  }
  std::set<std::string> names;
  for (const auto& s : splits) {
    if (!names.insert(s.name).second) throw ConfigError("duplicate split '" + s.name + "'");
    if (kind == DatasetKind::SyntheticProcedural && s.size < 1) {
      throw ConfigError("synthetic split '" + s.name + "' must be non-empty");
    }
  }
}

Dataset Dataset::select(const std::vector<std::int64_t>& indices) const {
  Dataset out;
  out.images = images.select(indices);
  for (auto i : indices) {
    if (!factors.empty()) out.factors.push_back(factors[static_cast<std::size_t>(i)]);
    if (!names.empty()) out.names.push_back(names[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::pair<DatasetSpec, DatasetSpec> synthesize_toy_domains(std::uint64_t seed, const SyntheticStyle& style,
                                                           const ToyDomainSizes& sizes) {
  DatasetSpec source;
  source.kind = DatasetKind::SyntheticProcedural;
  source.name = "toy-source";
  source.domain = Domain::Source;
  source.seed = mix_seed(seed, 1);
  source.style = style;
  source.resolution = style.resolution;
  source.splits = {{"train", sizes.source_train}, {"val", sizes.source_val}};

  DatasetSpec target = source;
  target.name = "toy-target";
  target.domain = Domain::Target;
  target.seed = mix_seed(seed, 2);
  target.splits = {{"pool", sizes.target_pool}, {"eval", sizes.target_eval}};
  source.validate();
  target.validate();
  return {source, target};
}

Dataset materialize(const DatasetSpec& spec, const std::string& split) {
  spec.validate();
  if (spec.kind == DatasetKind::ImageFolder) return load_image_folder(spec, split);
  const auto& s = spec.split(split);
  std::uint64_t split_seed = spec.seed;
  split_seed = mix_seed(split_seed, fnv1a(split));
  Dataset out;
  std::vector<torch::Tensor> images;
  images.reserve(static_cast<std::size_t>(s.size));
  for (std::int64_t i = 0; i < s.size; ++i) {
    std::mt19937_64 rng(mix_seed(split_seed, static_cast<std::uint64_t>(i)));
    auto factors = sample_factors(rng);
    auto jitter = sample_jitter(rng, spec.style.jitter);
    images.push_back(render_face(factors, jitter, spec.domain, spec.resolution));
    out.factors.push_back(factors);
    std::ostringstream name;
    name << split << "_" << std::setw(6) << std::setfill('0') << i;
    out.names.push_back(name.str());
  }
  out.images.data = torch::stack(images);
  out.images.provenance = spec.domain == Domain::Source ? Provenance::RealSource : Provenance::RealTarget;
  return out;
}

double factor_label_entropy(const std::vector<FaceFactors>& factors) {
  if (factors.empty()) return 0.0;
  std::map<std::int64_t, std::int64_t> counts;
  for (const auto& f : factors) ++counts[f.joint_label()];
  const double n = static_cast<double>(factors.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

// ---------------------------------------------------------------------------

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw InputError("write_png expects a (3, H, W) image");
  const auto h = image.size(1);
  const auto w = image.size(2);
  auto bytes = ((image.detach().to(torch::kFloat32).clamp(-1, 1) + 1.0) * 127.5)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data_ptr<std::uint8_t>(), 0, nullptr)) {
    throw MissingInputError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

torch::Tensor read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw MissingInputError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  auto bytes = torch::empty({static_cast<std::int64_t>(png.height), static_cast<std::int64_t>(png.width), 3},
                            torch::kUInt8);
  if (!png_image_finish_read(&png, nullptr, bytes.data_ptr<std::uint8_t>(), 0, nullptr)) {
    png_image_free(&png);
    throw MissingInputError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return bytes.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0;
}

std::vector<std::filesystem::path> save_image_batch(const ImageBatch& batch, const std::filesystem::path& dir,
                                                    const std::string& prefix) {
  std::vector<std::filesystem::path> out;
  for (std::int64_t i = 0; i < batch.size(); ++i) {
    std::ostringstream name;
    name << prefix << std::setw(5) << std::setfill('0') << i << ".png";
    out.push_back(dir / name.str());
    write_png(out.back(), batch.data[i]);
  }
  return out;
}

torch::Tensor resize_images(const torch::Tensor& images, std::int64_t resolution) {
  if (images.size(2) == resolution && images.size(3) == resolution) return images;
  auto opts = F::InterpolateFuncOptions().size(std::vector<std::int64_t>{resolution, resolution});
  if (images.size(2) >= resolution && images.size(3) >= resolution) {
    return F::interpolate(images, opts.mode(torch::kArea));
  }
  return F::interpolate(images, opts.mode(torch::kBilinear).align_corners(false)).clamp(-1, 1);
}

ImageFolderStream::ImageFolderStream(const std::filesystem::path& root, const std::string& split,
                                     std::int64_t resolution, Provenance provenance)
    : resolution_(resolution), provenance_(provenance) {
  const auto dir = root / split;
  if (!std::filesystem::is_directory(dir)) throw MissingInputError("image folder not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files_.push_back(entry.path());
  }
  std::sort(files_.begin(), files_.end());
  if (files_.empty()) throw MissingInputError("image folder is empty: " + dir.string());
}

std::optional<ImageBatch> ImageFolderStream::next(std::int64_t count, std::vector<std::string>* names) {
  std::vector<torch::Tensor> images;
  while (cursor_ < files_.size() && static_cast<std::int64_t>(images.size()) < count) {
    const auto& file = files_[cursor_++];
    try {
      auto img = read_png(file);
      images.push_back(resize_images(img.unsqueeze(0), resolution_).squeeze(0));
      if (names) names->push_back(file.stem().string());
    } catch (const MissingInputError&) {
      ++skipped_;
    }
  }
  if (images.empty()) return std::nullopt;
  return ImageBatch{torch::stack(images), provenance_};
}

Dataset load_image_folder(const DatasetSpec& spec, const std::string& split, std::int64_t* skipped) {
  const auto provenance = spec.domain == Domain::Source ? Provenance::RealSource : Provenance::RealTarget;
  ImageFolderStream stream(spec.root, split, spec.resolution, provenance);
  Dataset out;
  std::vector<torch::Tensor> parts;
  while (auto batch = stream.next(256, &out.names)) parts.push_back(batch->data);
  if (skipped) *skipped = stream.skipped();
  if (parts.empty()) throw MissingInputError("no decodable images in " + (spec.root / split).string());
  out.images = ImageBatch{torch::cat(parts), provenance};
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k, std::mt19937_64& rng) {
  if (k > n || k < 0) throw InputError("cannot sample " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

FewShotSample sample_few_shot(const Dataset& dataset, std::int64_t m, std::uint64_t seed) {
  if (m < 1) throw ConfigError("few-shot size must be >= 1");
  if (dataset.size() < m) {
    throw InputError("dataset of " + std::to_string(dataset.size()) + " images is too small for " +
                     std::to_string(m) + " shots");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x5107));
  FewShotSample out;
  out.indices = sample_without_replacement(dataset.size(), m, rng);
  out.shots = dataset.select(out.indices);
  return out;
}

std::uint64_t image_hash(const torch::Tensor& image) {
  auto c = image.detach().to(torch::kFloat32).contiguous();
  return fnv1a(c.data_ptr(), static_cast<std::size_t>(c.numel()) * sizeof(float));
}

std::vector<std::uint64_t> image_hashes(const ImageBatch& batch) {
  std::vector<std::uint64_t> out;
  out.reserve(static_cast<std::size_t>(batch.size()));
  for (std::int64_t i = 0; i < batch.size(); ++i) out.push_back(image_hash(batch.data[i]));
  return out;
}

void assert_disjoint(const ImageBatch& a, const ImageBatch& b, const std::string& what) {
  auto ha = image_hashes(a);
  std::set<std::uint64_t> set_a(ha.begin(), ha.end());
  for (auto h : image_hashes(b)) {
    if (set_a.count(h)) throw InputError("split leakage: " + what + " share an image");
  }
}

void write_dataset_manifest(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, const Dataset*>>& datasets) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw MissingInputError("cannot write manifest " + path.string());
  for (const auto& [label, ds] : datasets) {
    out << "[" << label << "] count: " << ds->size() << "\n";
    const auto hashes = image_hashes(ds->images);
    for (std::size_t i = 0; i < hashes.size(); ++i) {
      const auto name = i < ds->names.size() ? ds->names[i] : std::to_string(i);
      out << name << ": " << std::hex << std::setw(16) << std::setfill('0') << hashes[i] << std::dec << "\n";
    }
  }
}

}  // namespace dcl

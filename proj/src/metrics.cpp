#include "dcl/metrics.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dcl/errors.hpp"

namespace dcl {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) { return std::mt19937_64(mix_seed(seed, stream)); }

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  const auto rows = c.dim() == 1 ? c.size(0) : c.size(0);
  const auto cols = c.dim() == 1 ? 1 : c.size(1);
  Eigen::MatrixXd out(rows, cols);
  auto* p = c.data_ptr<double>();
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) out(i, j) = p[i * cols + j];
  }
  return out;
}

/// Mean distance over the given (i, j) index pairs into `features`.
double mean_pair_distance(const PerceptualFeatures& features, const std::vector<std::int64_t>& left,
                          const std::vector<std::int64_t>& right) {
  if (left.empty()) return 0.0;
  auto li = torch::tensor(left, torch::kInt64);
  auto ri = torch::tensor(right, torch::kInt64);
  auto d = perceptual_distance(features.select(li), features.select(ri));
  return d.sum().item<double>() / static_cast<double>(left.size());
}

/// All pairs of n items when they fit in `budget`, otherwise `budget` distinct pairs.
void choose_pairs(std::int64_t n, std::optional<std::int64_t> budget, std::mt19937_64& rng,
                  std::vector<std::int64_t>& left, std::vector<std::int64_t>& right) {
  left.clear();
  right.clear();
  const std::int64_t total = n * (n - 1) / 2;
  if (total == 0) return;
  std::vector<std::int64_t> ranks;
  if (!budget || *budget >= total) {
    ranks.resize(static_cast<std::size_t>(total));
    for (std::int64_t k = 0; k < total; ++k) ranks[static_cast<std::size_t>(k)] = k;
  } else {
    ranks = sample_without_replacement(total, *budget, rng);
  }
  for (auto k : ranks) {
    auto [i, j] = unrank_pair(k, n);
    left.push_back(i);
    right.push_back(j);
  }
}

torch::Tensor class_labels(std::int64_t n, float value) { return torch::full({n}, value); }

}  // namespace

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void MetricSeries::append(const MetricPoint& point) {
  if (!points_.empty() && point.iteration <= points_.back().iteration) {
    throw InputError("metric iterations must be strictly increasing");
  }
  if (!(point.p_t >= 0.0 && point.p_t <= 1.0)) throw InputError("p_t outside [0, 1]");
  if (!(point.intra_lpips >= 0.0)) throw InputError("intra-LPIPS must be non-negative");
  points_.push_back(point);
}

std::string MetricSeries::to_csv() const {
  std::ostringstream os;
  os << kHeader << "\n";
  for (const auto& p : points_) {
    os << p.iteration << "," << format_number(p.loss_adv) << "," << format_number(p.loss_cl1) << ","
       << format_number(p.loss_cl2) << "," << format_number(p.loss_aux) << "," << format_number(p.p_t) << ","
       << format_number(p.intra_lpips) << "\n";
  }
  return os.str();
}

void MetricSeries::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << to_csv();
}

MetricSeries MetricSeries::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot read metric log " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kHeader) throw InputError(path.string() + " is not a metric log");
  MetricSeries out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) fields.push_back(std::strtod(cell.c_str(), nullptr));
    if (fields.size() != 7) throw InputError("malformed metric row in " + path.string());
    out.append({static_cast<std::int64_t>(fields[0]), fields[1], fields[2], fields[3], fields[4], fields[5],
                fields[6]});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::pair<std::int64_t, std::int64_t> unrank_pair(std::int64_t k, std::int64_t n) {
  std::int64_t i = 0;
  std::int64_t row = n - 1;
  while (k >= row) {
    k -= row;
    ++i;
    --row;
  }
  return {i, i + 1 + k};
}

torch::Tensor distance_matrix(const PerceptualFeatures& a, const PerceptualFeatures& b) {
  if (a.levels.size() != b.levels.size()) throw InputError("feature sets come from different networks");
  auto out = torch::zeros({a.size(), b.size()}, torch::kFloat64);
  for (std::int64_t m = 0; m < b.size(); ++m) {
    auto col = torch::zeros({a.size()}, torch::kFloat64);
    for (std::size_t l = 0; l < a.levels.size(); ++l) {
      auto target = b.levels[l].slice(0, m, m + 1);
      col += (a.levels[l] - target).pow(2).sum(1).mean({1, 2}).to(torch::kFloat64);
    }
    out.select(1, m).copy_(col);
  }
  return out;
}

ClusterAssignment assign_clusters(const PerceptualFeatures& generated, const PerceptualFeatures& targets) {
  if (generated.size() < 1) throw InputError("intra-LPIPS needs at least one generated image");
  if (targets.size() < 1) throw InputError("intra-LPIPS needs at least one target image");
  auto dist = distance_matrix(generated, targets);
  auto acc = dist.accessor<double, 2>();
  ClusterAssignment out;
  out.members.resize(static_cast<std::size_t>(targets.size()));
  out.mean_distance.assign(static_cast<std::size_t>(targets.size()), 0.0);
  out.pairs_used.assign(static_cast<std::size_t>(targets.size()), 0);
  for (std::int64_t i = 0; i < generated.size(); ++i) {
    std::int64_t best = 0;
    for (std::int64_t m = 1; m < targets.size(); ++m) {
      if (acc[i][m] < acc[i][best]) best = m;
    }
    out.cluster.push_back(best);
    out.members[static_cast<std::size_t>(best)].push_back(i);
  }
  return out;
}

IntraLpips intra_lpips(const PerceptualFeatures& generated, const PerceptualFeatures& targets,
                       std::optional<std::int64_t> pair_budget, std::uint64_t seed) {
  if (pair_budget && *pair_budget < 1) throw ConfigError("pair budget must be >= 1");
  IntraLpips out;
  out.assignment = assign_clusters(generated, targets);
  auto& a = out.assignment;
  out.per_cluster.assign(a.members.size(), 0.0);
  std::vector<double> with_pairs;
  std::vector<std::int64_t> left, right;
  for (std::size_t m = 0; m < a.members.size(); ++m) {
    const auto& members = a.members[m];
    auto rng = seeded_engine(seed, m);
    choose_pairs(static_cast<std::int64_t>(members.size()), pair_budget, rng, left, right);
    if (left.empty()) continue;
    for (auto& i : left) i = members[static_cast<std::size_t>(i)];
    for (auto& j : right) j = members[static_cast<std::size_t>(j)];
    const double mean = mean_pair_distance(generated, left, right);
    a.mean_distance[m] = mean;
    a.pairs_used[m] = static_cast<std::int64_t>(left.size());
    out.per_cluster[m] = mean;
    with_pairs.push_back(mean);
  }
  out.clusters_with_pairs = static_cast<std::int64_t>(with_pairs.size());
  if (!with_pairs.empty()) {
    double sum = 0.0;
    for (double v : with_pairs) sum += v;
    out.mean = sum / static_cast<double>(with_pairs.size());
    double var = 0.0;
    for (double v : with_pairs) var += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(var / static_cast<double>(with_pairs.size()));
  }
  return out;
}

IntraLpips intra_lpips(FeatureNet& net, const ImageBatch& generated, const ImageBatch& targets,
                       std::optional<std::int64_t> pair_budget, std::uint64_t seed) {
  if (!generated.data.defined() || generated.size() < 1) {
    throw InputError("intra-LPIPS needs at least one generated image");
  }
  return intra_lpips(perceptual_features(net, generated), perceptual_features(net, targets), pair_budget, seed);
}

double standard_lpips(const PerceptualFeatures& generated, std::int64_t pair_count, std::uint64_t seed) {
  if (generated.size() < 2) throw InputError("standard LPIPS needs at least two images");
  if (pair_count < 1) throw ConfigError("pair count must be >= 1");
  auto rng = seeded_engine(seed, 0x57a4d);
  std::vector<std::int64_t> left, right;
  choose_pairs(generated.size(), pair_count, rng, left, right);
  return mean_pair_distance(generated, left, right);
}

double standard_lpips(FeatureNet& net, const ImageBatch& generated, std::int64_t pair_count, std::uint64_t seed) {
  if (!generated.data.defined() || generated.size() < 2) {
    throw InputError("standard LPIPS needs at least two images");
  }
  return standard_lpips(perceptual_features(net, generated), pair_count, seed);
}

// ---------------------------------------------------------------------------

ClassifierReport train_binary_classifier(const ImageBatch& source, const ImageBatch& target,
                                         double held_out_fraction, const ClassifierOptions& options,
                                         const TrainingSchedule& schedule) {
  if (!source.data.defined() || source.size() == 0) throw InputError("classifier training: empty source class");
  if (!target.data.defined() || target.size() == 0) throw InputError("classifier training: empty target class");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    throw ConfigError("held-out fraction must lie in (0, 1)");
  }
  auto rng = seeded_engine(schedule.seed, 0xc1a55);
  const auto per_class = std::min(source.size(), target.size());
  const auto held = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(held_out_fraction * per_class)));
  const auto train = per_class - held;
  if (train < 1) throw InputError("classifier training: too few images to hold some out");

  auto src_idx = sample_without_replacement(source.size(), per_class, rng);
  auto tgt_idx = sample_without_replacement(target.size(), per_class, rng);
  auto split = [&](const ImageBatch& b, const std::vector<std::int64_t>& idx, bool held_out) {
    std::vector<std::int64_t> part(held_out ? idx.begin() + train : idx.begin(),
                                   held_out ? idx.end() : idx.begin() + train);
    return b.select(part);
  };
  const auto src_train = split(source, src_idx, false);
  const auto tgt_train = split(target, tgt_idx, false);
  const auto src_held = split(source, src_idx, true);
  const auto tgt_held = split(target, tgt_idx, true);

  ClassifierReport report;
  report.train_per_class = train;
  report.held_out_per_class = held;
  report.model = Classifier(options);
  auto gen = make_cpu_generator(mix_seed(schedule.seed, 0xc0de));
  init_parameters(*report.model, gen, options.slope);
  torch::optim::Adam opt(report.model->parameters(),
                         torch::optim::AdamOptions(schedule.lr).betas({0.5, 0.999}));
  const auto half = std::max<std::int64_t>(1, schedule.batch / 2);
  for (std::int64_t step = 0; step < schedule.steps; ++step) {
    std::vector<std::int64_t> si, ti;
    for (std::int64_t k = 0; k < half; ++k) {
      si.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(train)));
      ti.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(train)));
    }
    auto x = torch::cat({src_train.select(si).data, tgt_train.select(ti).data});
    auto y = torch::cat({class_labels(half, 0.0f), class_labels(half, 1.0f)});
    auto loss = torch::binary_cross_entropy_with_logits(report.model->forward(x), y);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  report.model->set_trained(true);
  report.model->eval();
  report.held_out_accuracy =
      0.5 * (classifier_accuracy(report.model, src_held, 0) + classifier_accuracy(report.model, tgt_held, 1));
  return report;
}

double classifier_accuracy(Classifier& c, const ImageBatch& images, int label) {
  if (images.size() == 0) return 0.0;
  auto p = classifier_predict(c, images, true);
  auto correct = label == 1 ? (p > 0.5) : (p <= 0.5);
  return correct.to(torch::kFloat64).mean().item<double>();
}

double realisticness_probe(Classifier& c, Generator& g, const LatentBatch& fixed_z, std::int64_t chunk) {
  fixed_z.validate();
  torch::NoGradGuard no_grad;
  double sum = 0.0;
  for (std::int64_t begin = 0; begin < fixed_z.size(); begin += chunk) {
    auto z = fixed_z.data.slice(0, begin, std::min(begin + chunk, fixed_z.size()));
    ImageBatch images{g->forward(z), Provenance::GeneratedTarget};
    sum += classifier_predict(c, images).to(torch::kFloat64).sum().item<double>();
  }
  return sum / static_cast<double>(fixed_z.size());
}

// ---------------------------------------------------------------------------

torch::Tensor factor_labels(const std::vector<FaceFactors>& factors) {
  auto out = torch::empty({static_cast<std::int64_t>(factors.size()), 7}, torch::kInt64);
  auto acc = out.accessor<std::int64_t, 2>();
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto v = factors[i].values();
    for (std::size_t k = 0; k < v.size(); ++k) acc[static_cast<std::int64_t>(i)][static_cast<std::int64_t>(k)] = v[k];
  }
  return out;
}

FeatureNetReport train_feature_net(const ImageBatch& images, const torch::Tensor& labels,
                                   const FeatureNetOptions& options, const TrainingSchedule& schedule) {
  if (!images.data.defined() || images.size() == 0) throw InputError("feature net training needs images");
  if (labels.dim() != 2 || labels.size(0) != images.size() ||
      labels.size(1) != static_cast<std::int64_t>(options.head_classes.size())) {
    throw InputError("feature net labels must be (N, heads)");
  }
  FeatureNetReport report;
  report.model = FeatureNet(options);
  auto gen = make_cpu_generator(mix_seed(schedule.seed, 0xfea7));
  init_parameters(*report.model, gen, options.slope);
  torch::optim::Adam opt(report.model->parameters(), torch::optim::AdamOptions(schedule.lr).betas({0.5, 0.999}));
  auto rng = seeded_engine(schedule.seed, 0xfea8);
  for (std::int64_t step = 0; step < schedule.steps; ++step) {
    std::vector<std::int64_t> idx;
    for (std::int64_t k = 0; k < schedule.batch; ++k) {
      idx.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(images.size())));
    }
    auto index = torch::tensor(idx, torch::kInt64);
    auto x = images.data.index_select(0, index);
    auto y = labels.index_select(0, index);
    auto logits = report.model->head_logits(x);
    torch::Tensor loss = torch::zeros({});
    for (std::size_t h = 0; h < logits.size(); ++h) {
      loss = loss + torch::cross_entropy_loss(logits[h], y.select(1, static_cast<std::int64_t>(h)));
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    report.final_loss = loss.item<double>();
  }
  report.model->eval();
  for (auto& p : report.model->parameters()) p.set_requires_grad(false);
  return report;
}

// ---------------------------------------------------------------------------

GaussianMoments embedding_moments(const torch::Tensor& embeddings) {
  if (embeddings.dim() != 2 || embeddings.size(0) < 2) {
    throw InputError("moments need at least two embedding rows");
  }
  auto e = embeddings.to(torch::kFloat64);
  GaussianMoments out;
  out.mean = e.mean(0);
  auto centered = e - out.mean;
  out.cov = centered.t().matmul(centered) / static_cast<double>(e.size(0) - 1);
  return out;
}

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b, double eps) {
  const auto mu_a = to_eigen(a.mean);
  const auto mu_b = to_eigen(b.mean);
  if (mu_a.rows() != mu_b.rows()) throw InputError("Frechet distance needs equal embedding dimensions");
  const auto d = mu_a.rows();
  const Eigen::MatrixXd reg = eps * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = to_eigen(a.cov) + reg;
  const Eigen::MatrixXd sb = to_eigen(b.cov) + reg;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(sa);
  const Eigen::VectorXd root_vals = eig_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root_a = eig_a.eigenvectors() * root_vals.asDiagonal() * eig_a.eigenvectors().transpose();
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_inner(inner, Eigen::EigenvaluesOnly);
  const double trace_root = eig_inner.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (mu_a - mu_b).squaredNorm();
  const double value = mean_term + sa.trace() + sb.trace() - 2.0 * trace_root;
  if (!std::isfinite(value)) throw NumericError("non-finite Frechet distance", -1);
  return std::max(value, 0.0);
}

torch::Tensor embed_images(FeatureNet& net, const ImageBatch& images, std::int64_t chunk) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t begin = 0; begin < images.size(); begin += chunk) {
    parts.push_back(net->embedding(images.data.slice(0, begin, std::min(begin + chunk, images.size()))));
  }
  return torch::cat(parts).to(torch::kFloat64);
}

double frechet_feature_distance(FeatureNet& net, const ImageBatch& a, const ImageBatch& b, double eps) {
  return frechet_distance(embedding_moments(embed_images(net, a)), embedding_moments(embed_images(net, b)), eps);
}

// ---------------------------------------------------------------------------

void store_evaluator(Checkpoint& ckpt, const Evaluator& evaluator) {
  store_module(ckpt, "classifier", *evaluator.classifier);
  store_module(ckpt, "featnet", *evaluator.featnet);
  ckpt.meta["classifier.trained"] = evaluator.classifier->trained() ? "true" : "false";
  ckpt.meta["classifier.held_out_accuracy"] = format_number(evaluator.classifier_accuracy);
}

Evaluator restore_evaluator(const Checkpoint& ckpt, const ClassifierOptions& classifier,
                            const FeatureNetOptions& featnet) {
  Evaluator out;
  out.classifier = Classifier(classifier);
  out.featnet = FeatureNet(featnet);
  restore_module(ckpt, "classifier", *out.classifier);
  restore_module(ckpt, "featnet", *out.featnet);
  auto it = ckpt.meta.find("classifier.trained");
  out.classifier->set_trained(it != ckpt.meta.end() && it->second == "true");
  auto acc = ckpt.meta.find("classifier.held_out_accuracy");
  if (acc != ckpt.meta.end()) out.classifier_accuracy = std::strtod(acc->second.c_str(), nullptr);
  out.classifier->eval();
  out.featnet->eval();
  for (auto& p : out.classifier->parameters()) p.set_requires_grad(false);
  for (auto& p : out.featnet->parameters()) p.set_requires_grad(false);
  return out;
}

}  // namespace dcl

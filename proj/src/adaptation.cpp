#include "dcl/adaptation.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "dcl/errors.hpp"

namespace dcl {

namespace {

// Independent random streams of one run.
enum Stream : std::uint64_t {
  kTorchStream = 1,
  kTapStream = 2,
  kDataStream = 3,
  kProxyStream = 4,
  kFisherStream = 5,
  kInitStream = 6,
  kEvalStream = 7,
};

torch::Tensor reduce_features(const torch::Tensor& activation, FeatureReduction reduction) {
  return reduction == FeatureReduction::Pool ? pool_features(activation) : flatten_features(activation);
}

TapSet pool_or_all(const TapSet& pool, const TapSet& all) { return pool.empty() ? all : pool; }

torch::optim::Adam make_adam(const std::vector<torch::Tensor>& params, double lr, double beta1, double beta2) {
  return torch::optim::Adam(params, torch::optim::AdamOptions(lr).betas({beta1, beta2}));
}

/// Toggles gradient tracking on a fixed parameter list for the scope.
class GradScope {
 public:
  GradScope(std::vector<torch::Tensor> params, bool enabled) : params_(std::move(params)) {
    for (auto& p : params_) p.set_requires_grad(enabled);
    enabled_ = enabled;
  }
  ~GradScope() {
    for (auto& p : params_) p.set_requires_grad(!enabled_);
  }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  std::vector<torch::Tensor> params_;
  bool enabled_;
};

std::string describe(const LossBundle& b) {
  std::ostringstream os;
  os << "adv=" << format_number(b.adv) << " cl1=" << format_number(b.cl1) << " cl2=" << format_number(b.cl2)
     << " aux=" << format_number(b.aux) << " total=" << format_number(b.total);
  return os.str();
}

LossBundle raw_bundle(const LossTerms& terms, double lambda1, double lambda2) {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  LossBundle b;
  b.adv = v(terms.adv);
  b.cl1 = v(terms.cl1);
  b.cl2 = v(terms.cl2);
  b.aux = v(terms.aux);
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = b.adv + lambda1 * b.cl1 + lambda2 * b.cl2 + b.aux;
  return b;
}

/// Wraps dcl_objective so a non-finite term reports the iteration and the loss values.
Objective checked_objective(const LossTerms& terms, double lambda1, double lambda2, std::int64_t iteration,
                            const char* side) {
  try {
    return dcl_objective(terms, lambda1, lambda2);
  } catch (const NumericError&) {
    throw NumericError(std::string("non-finite ") + side + " loss at iteration " + std::to_string(iteration) +
                           ": " + describe(raw_bundle(terms, lambda1, lambda2)),
                       iteration);
  }
}

/// Mean over taps of a per-level loss.
template <typename Fn>
torch::Tensor mean_over_taps(const TapSet& taps, Fn&& per_level) {
  torch::Tensor total;
  for (int level : taps) {
    auto term = per_level(level);
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(taps.size());
}

struct Probe {
  double p_t;
  double intra;
};

Probe run_probe(Evaluator& ev, Generator& g, const LatentBatch& proxy, const PerceptualFeatures& target_features,
                const EvalConfig& eval) {
  torch::NoGradGuard no_grad;
  const double p_t = realisticness_probe(ev.classifier, g, proxy);
  ImageBatch images{g->forward(proxy.data), Provenance::GeneratedTarget};
  auto feats = perceptual_features(ev.featnet, images);
  const double intra = intra_lpips(feats, target_features, eval.pair_budget, eval.seed).mean;
  return {p_t, intra};
}

}  // namespace

TapSet sample_tap_layers(std::mt19937_64& rng, const TapSet& pool, std::int64_t k) {
  if (k < 0 || k > static_cast<std::int64_t>(pool.size())) {
    throw ConfigError("cannot sample " + std::to_string(k) + " layers from a pool of " +
                      std::to_string(pool.size()));
  }
  auto idx = sample_without_replacement(static_cast<std::int64_t>(pool.size()), k, rng);
  TapSet out;
  for (auto i : idx) out.push_back(pool[static_cast<std::size_t>(i)]);
  return make_tap_set(out);
}

Discriminator& freeze_discriminator_layers(Discriminator& d, int k) {
  if (k < 0 || k > d->options().levels() + 1) {
    throw ConfigError("cannot freeze " + std::to_string(k) + " discriminator levels; valid range is 0.." +
                      std::to_string(d->options().levels() + 1));
  }
  d->freeze_levels(k);
  return d;
}

// ---------------------------------------------------------------------------

SourceModels initialize_models(const ModelConfig& model, std::uint64_t seed) {
  SourceModels out;
  out.generator = Generator(model.generator);
  out.discriminator = Discriminator(model.discriminator);
  auto gen = make_cpu_generator(mix_seed(seed, kInitStream));
  init_parameters(*out.generator, gen, model.generator.slope);
  init_parameters(*out.discriminator, gen, model.discriminator.slope);
  return out;
}

Checkpoint make_source_checkpoint(const ModelConfig& model, SourceModels& models) {
  Checkpoint ckpt;
  ckpt.config_hash = model.hash();
  store_module(ckpt, "generator", *models.generator);
  store_module(ckpt, "discriminator", *models.discriminator);
  ckpt.meta["kind"] = "source";
  return ckpt;
}

SourceModels load_source_models(const Checkpoint& ckpt, const ModelConfig& model) {
  SourceModels out;
  out.generator = Generator(model.generator);
  out.discriminator = Discriminator(model.discriminator);
  restore_module(ckpt, "generator", *out.generator);
  restore_module(ckpt, "discriminator", *out.discriminator);
  return out;
}

SourceModels load_adapted_models(const Checkpoint& ckpt, const ModelConfig& model) {
  return load_source_models(ckpt, model);
}

Evaluator build_evaluator(const ExperimentConfig& cfg, const Dataset& source, const Dataset& target) {
  Evaluator ev;
  TrainingSchedule cls;
  cls.steps = cfg.pretrain.classifier_steps;
  cls.batch = cfg.pretrain.batch;
  cls.seed = mix_seed(cfg.pretrain.seed, 0xc1);
  auto report = train_binary_classifier(source.images, target.images, cfg.pretrain.held_out_fraction,
                                        cfg.model.classifier, cls);
  ev.classifier = report.model;
  ev.classifier_accuracy = report.held_out_accuracy;
  for (auto& p : ev.classifier->parameters()) p.set_requires_grad(false);

  TrainingSchedule feat = cls;
  feat.steps = cfg.model.train_featnet ? cfg.pretrain.featnet_steps : 0;
  feat.seed = mix_seed(cfg.pretrain.seed, 0xfe);
  ImageBatch both{torch::cat({source.images.data, target.images.data}), Provenance::RealSource};
  torch::Tensor labels;
  if (!source.factors.empty() && !target.factors.empty() && cfg.model.featnet.head_classes.size() == 7) {
    labels = torch::cat({factor_labels(source.factors), factor_labels(target.factors)});
  } else {
    labels = torch::cat({torch::zeros({source.size(), 1}, torch::kInt64), torch::ones({target.size(), 1}, torch::kInt64)});
  }
  ev.featnet = train_feature_net(both, labels, cfg.model.featnet, feat).model;
  return ev;
}

PretrainResult pretrain(const ExperimentConfig& cfg, const ImageBatch& source_train, const ImageBatch& source_val,
                        Evaluator& evaluator) {
  const auto& p = cfg.pretrain;
  if (source_train.size() < 1) throw InputError("pretraining needs source images");
  PretrainResult out;
  out.models = initialize_models(cfg.model, p.seed);
  auto& g = out.models.generator;
  auto& d = out.models.discriminator;
  auto gen = make_cpu_generator(mix_seed(p.seed, kTorchStream));
  auto eval_gen = make_cpu_generator(mix_seed(p.seed, kEvalStream));
  std::mt19937_64 data_rng(mix_seed(p.seed, kDataStream));
  const auto eval_z = LatentBatch::sample(p.eval_samples, cfg.model.generator.z_dim, eval_gen);

  auto sample_fd = [&]() {
    torch::NoGradGuard no_grad;
    ImageBatch samples{g->forward(eval_z.data), Provenance::GeneratedSource};
    return frechet_feature_distance(evaluator.featnet, samples, source_val);
  };
  out.frechet_initial = sample_fd();

  auto opt_g = make_adam(g->parameters(), p.lr, p.beta1, p.beta2);
  auto opt_d = make_adam(d->parameters(), p.lr, p.beta1, p.beta2);
  for (std::int64_t it = 1; it <= p.iterations; ++it) {
    std::vector<std::int64_t> idx;
    for (std::int64_t k = 0; k < p.batch; ++k) {
      idx.push_back(static_cast<std::int64_t>(data_rng() % static_cast<std::uint64_t>(source_train.size())));
    }
    auto real = source_train.select(idx).data;

    auto z = torch::randn({p.batch, cfg.model.generator.z_dim}, gen);
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = g->forward(z);
    }
    auto loss_d = adversarial_loss(d->forward(real), d->forward(fake), AdversarialSide::Discriminator);
    opt_d.zero_grad();
    loss_d.backward();
    opt_d.step();

    auto z2 = torch::randn({p.batch, cfg.model.generator.z_dim}, gen);
    torch::Tensor loss_g;
    {
      GradScope freeze_d(d->parameters(), false);
      loss_g = adversarial_loss({}, d->forward(g->forward(z2)), AdversarialSide::Generator);
      opt_g.zero_grad();
      loss_g.backward();
      opt_g.step();
    }
    const double ld = loss_d.item<double>();
    const double lg = loss_g.item<double>();
    if (!std::isfinite(ld) || !std::isfinite(lg)) {
      throw NumericError("pretraining diverged at iteration " + std::to_string(it), it);
    }
    out.losses.push_back({static_cast<double>(it), ld, lg});
  }
  g->eval();
  d->eval();
  out.frechet_final = sample_fd();
  {
    torch::NoGradGuard no_grad;
    out.source_probability = 1.0 - realisticness_probe(evaluator.classifier, g, eval_z);
  }
  out.checkpoint = make_source_checkpoint(cfg.model, out.models);
  out.checkpoint.meta["pretrain.iterations"] = std::to_string(p.iterations);
  out.checkpoint.meta["pretrain.frechet_initial"] = format_number(out.frechet_initial);
  out.checkpoint.meta["pretrain.frechet_final"] = format_number(out.frechet_final);
  out.checkpoint.meta["pretrain.source_probability"] = format_number(out.source_probability);
  return out;
}

// ---------------------------------------------------------------------------

AdaptationRun adapt(const ExperimentConfig& cfg, const Checkpoint& source, const ImageBatch& targets,
                    Evaluator* evaluator, const IterationCallback& callback) {
  const auto& a = cfg.adapt;
  a.validate();
  if (!targets.data.defined() || targets.size() != a.shots) {
    throw InputError("adaptation expects exactly " + std::to_string(a.shots) + " target images, got " +
                     std::to_string(targets.data.defined() ? targets.size() : 0));
  }
  targets.validate();
  const auto start = std::chrono::steady_clock::now();

  AdaptationRun run;
  run.config_echo = cfg.resolved.dump();
  auto models = load_source_models(source, cfg.model);
  auto g_t = models.generator;
  auto d_t = models.discriminator;
  auto g_s = clone_frozen(g_t);
  run.source_hash_before = parameter_hash(*g_s);

  const Method method = a.method;
  const bool dcl = method == Method::Dcl;
  const double lambda1 = dcl ? a.lambda1 : 0.0;
  const double lambda2 = dcl ? a.lambda2 : 0.0;
  const bool use_cl1 = lambda1 > 0.0;
  const bool use_cl2 = lambda2 > 0.0;
  const bool use_cdc = method == Method::Cdc && a.lambda_cdc > 0.0;
  const bool use_ewc = method == Method::Ewc && a.lambda_ewc > 0.0;
  if (method == Method::FreezeD) freeze_discriminator_layers(d_t, static_cast<int>(a.freeze_d_layers));

  const TapSet g_pool = pool_or_all(a.g_layer_pool, g_t->all_levels());
  const TapSet d_pool = pool_or_all(a.d_layer_pool, d_t->all_levels());

  auto gen = make_cpu_generator(mix_seed(a.seed, kTorchStream));
  std::mt19937_64 tap_rng(mix_seed(a.seed, kTapStream));
  std::mt19937_64 data_rng(mix_seed(a.seed, kDataStream));
  auto proxy_gen = make_cpu_generator(mix_seed(a.seed, kProxyStream));
  auto proxy = LatentBatch::sample(a.probe_batch, cfg.model.generator.z_dim, proxy_gen);
  proxy.fixed_proxy = true;

  std::vector<torch::Tensor> fisher;
  std::vector<torch::Tensor> source_params;
  if (use_ewc) {
    auto fisher_gen = make_cpu_generator(mix_seed(a.seed, kFisherStream));
    fisher = estimate_fisher(g_t, d_t, LatentBatch::sample(a.fisher_batch, cfg.model.generator.z_dim, fisher_gen));
    for (const auto& p : g_s->parameters()) source_params.push_back(p.detach());
  }

  const auto d_params = d_t->trainable_parameters();
  const auto g_params = g_t->parameters();
  auto opt_g = make_adam(g_params, a.lr, a.beta1, a.beta2);
  auto opt_d = make_adam(d_params, a.lr, a.beta1, a.beta2);

  PerceptualFeatures target_features;
  if (evaluator) target_features = perceptual_features(evaluator->featnet, targets);
  auto probe = [&](std::int64_t iteration, const LossBundle* g_bundle) {
    if (!evaluator) return;
    g_t->eval();
    const auto pr = run_probe(*evaluator, g_t, proxy, target_features, cfg.eval);
    MetricPoint point;
    point.iteration = iteration;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    point.loss_adv = g_bundle ? g_bundle->adv : nan;
    point.loss_cl1 = g_bundle ? g_bundle->cl1 : nan;
    point.loss_cl2 = g_bundle ? g_bundle->cl2 : nan;
    point.loss_aux = g_bundle ? g_bundle->aux : nan;
    point.p_t = pr.p_t;
    point.intra_lpips = pr.intra;
    run.series.append(point);
  };

  auto snapshot = [&](std::int64_t iteration) {
    Checkpoint ckpt;
    ckpt.config_hash = cfg.model.hash();
    store_module(ckpt, "generator", *g_t);
    store_module(ckpt, "discriminator", *d_t);
    store_adam(ckpt, "generator", opt_g, g_params);
    store_adam(ckpt, "discriminator", opt_d, d_params);
    store_generator_state(ckpt, "torch", gen);
    store_engine_state(ckpt, "taps", tap_rng);
    store_engine_state(ckpt, "data", data_rng);
    ckpt.meta["kind"] = "adapted";
    ckpt.meta["method"] = to_string(method);
    ckpt.meta["iteration"] = std::to_string(iteration);
    ckpt.meta["seed"] = std::to_string(a.seed);
    return ckpt;
  };

  const bool patch_schedule = d_t->options().patch_head && cfg.model.generator.resolution >= 32;
  const auto n = a.batch;
  const auto z_dim = cfg.model.generator.z_dim;
  const auto all_targets = targets.data;

  probe(0, nullptr);
  for (std::int64_t it = 1; it <= a.iterations; ++it) {
    const auto head = patch_schedule && (it % 2 == 1) ? DiscriminatorHead::Patch : DiscriminatorHead::Image;
    const TapSet g_taps = (use_cl1 || use_cdc) ? sample_tap_layers(tap_rng, g_pool, a.taps_per_iteration) : TapSet{};
    const TapSet d_taps = use_cl2 ? sample_tap_layers(tap_rng, d_pool, a.taps_per_iteration) : TapSet{};
    std::vector<std::int64_t> real_idx;
    for (std::int64_t k = 0; k < n; ++k) {
      real_idx.push_back(static_cast<std::int64_t>(data_rng() % static_cast<std::uint64_t>(targets.size())));
    }
    auto real = targets.select(real_idx).data;

    // Discriminator step.
    g_t->train();
    auto z = torch::randn({n, z_dim}, gen);
    torch::Tensor fake_t, fake_s;
    {
      torch::NoGradGuard no_grad;
      fake_t = g_t->forward(z);
      if (use_cl2) fake_s = g_s->forward(z);
    }
    LossTerms d_terms;
    {
      FeaturePyramid real_feats, fake_feats;
      auto real_logits = d_t->forward_tapped(real, {}, real_feats, head);
      auto fake_logits = d_t->forward_tapped(fake_t, d_taps, fake_feats, head);
      d_terms.adv = adversarial_loss(real_logits, fake_logits, AdversarialSide::Discriminator);
      if (use_cl2) {
        FeaturePyramid src_feats, neg_feats;
        d_t->forward_tapped(fake_s, d_taps, src_feats);
        d_t->forward_tapped(all_targets, d_taps, neg_feats);
        d_terms.cl2 = mean_over_taps(d_taps, [&](int l) {
          return discriminator_contrastive_loss(reduce_features(fake_feats.at(l), a.reduction),
                                                reduce_features(src_feats.at(l), a.reduction),
                                                reduce_features(neg_feats.at(l), a.reduction), a.tau);
        });
      }
    }
    auto d_obj = checked_objective(d_terms, 0.0, lambda2, it, "discriminator");
    opt_d.zero_grad();
    d_obj.total.backward();
    opt_d.step();
    ++run.d_steps;

    // Generator step.
    auto z2 = torch::randn({n, z_dim}, gen);
    LossTerms g_terms;
    {
      GradScope freeze_d(d_params, false);
      FeaturePyramid g_feats("generator");
      auto images = g_t->forward_tapped(z2, g_taps, g_feats);
      FeaturePyramid s_feats("generator");
      torch::Tensor source_images;
      if (use_cl1 || use_cl2 || use_cdc) {
        torch::NoGradGuard no_grad;
        source_images = g_s->forward_tapped(z2, g_taps, s_feats);
      }
      FeaturePyramid dfake_feats;
      auto logits = d_t->forward_tapped(images, d_taps, dfake_feats, head);
      g_terms.adv = adversarial_loss({}, logits, AdversarialSide::Generator);
      if (use_cl1) {
        g_terms.cl1 = mean_over_taps(g_taps, [&](int l) {
          return generator_contrastive_loss(reduce_features(g_feats.at(l), a.reduction),
                                            reduce_features(s_feats.at(l), a.reduction), a.tau, a.negatives);
        });
      }
      if (use_cl2) {
        FeaturePyramid src_feats, neg_feats;
        {
          torch::NoGradGuard no_grad;
          d_t->forward_tapped(source_images, d_taps, src_feats);
          d_t->forward_tapped(all_targets, d_taps, neg_feats);
        }
        g_terms.cl2 = mean_over_taps(d_taps, [&](int l) {
          return discriminator_contrastive_loss(reduce_features(dfake_feats.at(l), a.reduction),
                                                reduce_features(src_feats.at(l), a.reduction),
                                                reduce_features(neg_feats.at(l), a.reduction), a.tau);
        });
      }
      if (use_cdc) {
        g_terms.aux = a.lambda_cdc * mean_over_taps(g_taps, [&](int l) {
          return cdc_distance_loss(reduce_features(g_feats.at(l), a.reduction),
                                   reduce_features(s_feats.at(l), a.reduction));
        });
      }
      if (use_ewc) g_terms.aux = ewc_penalty(g_params, source_params, fisher, a.lambda_ewc);
      auto g_obj = checked_objective(g_terms, lambda1, lambda2, it, "generator");
      opt_g.zero_grad();
      g_obj.total.backward();
      opt_g.step();
      ++run.g_steps;

      IterationLosses record;
      record.iteration = it;
      record.d = d_obj.bundle;
      record.g = g_obj.bundle;
      run.losses.push_back(record);
    }

    if (it % a.probe_interval == 0) probe(it, &run.losses.back().g);
    if (a.checkpoint_interval > 0 && it % a.checkpoint_interval == 0 && it != a.iterations) {
      run.periodic.push_back({it, snapshot(it)});
    }
    if (callback) callback(run.losses.back(), run);
  }

  g_t->eval();
  run.final_checkpoint = snapshot(a.iterations);
  run.source_hash_after = parameter_hash(*g_s);
  run.generator = g_t;
  run.discriminator = d_t;
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

std::string losses_csv(const std::vector<IterationLosses>& losses) {
  std::ostringstream os;
  os << "iteration,d_adv,d_cl2,d_total,g_adv,g_cl1,g_cl2,g_aux,g_total\n";
  for (const auto& r : losses) {
    os << r.iteration << "," << format_number(r.d.adv) << "," << format_number(r.d.cl2) << ","
       << format_number(r.d.total) << "," << format_number(r.g.adv) << "," << format_number(r.g.cl1) << ","
       << format_number(r.g.cl2) << "," << format_number(r.g.aux) << "," << format_number(r.g.total) << "\n";
  }
  return os.str();
}

}  // namespace dcl

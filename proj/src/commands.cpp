#include "dcl/commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dcl/adaptation.hpp"
#include "dcl/checkpoint.hpp"
#include "dcl/errors.hpp"
#include "dcl/metrics.hpp"
#include "dcl/mi_verify.hpp"
#include "dcl/plot.hpp"

namespace dcl {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << text;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%S");
  return os.str();
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_parent = "runs";
  std::string run_dir;
};

KeyValueConfig load_user_config(const Common& c) {
  KeyValueConfig user = c.config_path.empty() ? KeyValueConfig() : KeyValueConfig::from_file(c.config_path);
  user.apply_overrides(c.overrides);
  return user;
}

fs::path resolve_run_dir(const Common& c, const std::string& name, const std::string& seed) {
  if (!c.run_dir.empty()) {
    fs::create_directories(c.run_dir);
    return c.run_dir;
  }
  return make_run_dir(c.out_parent, name, seed);
}

/// Loads `<dir>/<file>` when `path` is a directory, `path` itself otherwise.
fs::path checkpoint_path(const std::string& path, const std::string& file) {
  if (path.empty()) throw ConfigError("no checkpoint given for " + file);
  fs::path p(path);
  if (fs::is_directory(p)) p /= file;
  if (!fs::exists(p)) throw MissingInputError("checkpoint not found: " + p.string());
  return p;
}

struct TargetData {
  Dataset pool;
  Dataset eval;
  FewShotSample shots;
};

TargetData load_targets(const ExperimentConfig& cfg) {
  auto [source_spec, target_spec] = dataset_specs(cfg);
  TargetData t;
  t.pool = materialize(target_spec, "pool");
  t.eval = materialize(target_spec, "eval");
  t.shots = sample_few_shot(t.pool, cfg.adapt.shots, cfg.adapt.shot_seed);
  assert_disjoint(t.shots.shots.images, t.eval.images, "few-shot targets and the evaluation split");
  return t;
}

Evaluator load_evaluator(const ExperimentConfig& cfg, const std::string& path) {
  auto ckpt = load_checkpoint(checkpoint_path(path, "evaluator.ckpt"), cfg.model.hash(), cfg.adapt.force);
  return restore_evaluator(ckpt, cfg.model.classifier, cfg.model.featnet);
}

/// Pretrain run directories hold both checkpoints; point both keys at it.
void apply_source(KeyValueConfig& user, const std::string& source) {
  if (source.empty()) return;
  const auto abs = fs::absolute(source).lexically_normal().string();
  user.set("adapt.source_checkpoint", abs);
  if (!user.has("adapt.evaluator_checkpoint") && fs::is_directory(abs)) user.set("adapt.evaluator_checkpoint", abs);
}

std::string evaluator_location(const ExperimentConfig& cfg) {
  return cfg.adapt.evaluator_checkpoint.empty() ? cfg.adapt.source_checkpoint : cfg.adapt.evaluator_checkpoint;
}

// ---------------------------------------------------------------------------

int cmd_pretrain(const Common& c, std::ostream& out) {
  auto cfg = resolve_experiment(load_user_config(c));
  const auto dir = resolve_run_dir(c, "pretrain", std::to_string(cfg.pretrain.seed));
  auto [source_spec, target_spec] = dataset_specs(cfg);
  auto source_train = materialize(source_spec, "train");
  auto source_val = materialize(source_spec, "val");
  auto target_eval = materialize(target_spec, "eval");
  assert_disjoint(source_train.images, source_val.images, "source train and validation splits");
  write_dataset_manifest(dir / "dataset_manifest.txt",
                         {{"source/train", &source_train}, {"source/val", &source_val}, {"target/eval", &target_eval}});

  out << "training evaluator networks\n";
  auto evaluator = build_evaluator(cfg, source_train, target_eval);
  out << "classifier held-out accuracy " << format_number(evaluator.classifier_accuracy) << "\n";
  Checkpoint ev_ckpt;
  ev_ckpt.config_hash = cfg.model.hash();
  store_evaluator(ev_ckpt, evaluator);
  save_checkpoint(ev_ckpt, dir / "evaluator.ckpt");

  out << "pretraining source GAN for " << cfg.pretrain.iterations << " iterations\n";
  auto result = pretrain(cfg, source_train.images, source_val.images, evaluator);
  save_checkpoint(result.checkpoint, dir / "source.ckpt");

  std::ostringstream losses;
  losses << "iteration,loss_d,loss_g\n";
  for (const auto& row : result.losses) {
    losses << static_cast<std::int64_t>(row[0]) << "," << format_number(row[1]) << "," << format_number(row[2]) << "\n";
  }
  write_text(dir / "pretrain_losses.csv", losses.str());
  std::ostringstream report;
  report << "classifier_accuracy: " << format_number(evaluator.classifier_accuracy) << "\n"
         << "frechet_initial: " << format_number(result.frechet_initial) << "\n"
         << "frechet_final: " << format_number(result.frechet_final) << "\n"
         << "source_probability: " << format_number(result.source_probability) << "\n";
  write_text(dir / "pretrain_report.txt", report.str());
  {
    torch::NoGradGuard no_grad;
    auto gen = make_cpu_generator(cfg.eval.seed);
    auto z = LatentBatch::sample(16, cfg.model.generator.z_dim, gen);
    write_image_grid(dir / "samples.png", {ImageBatch{result.models.generator->forward(z.data)}}, 2);
  }

  RunManifest m;
  m.command = "pretrain";
  m.config_path = c.config_path;
  m.seed = std::to_string(cfg.pretrain.seed);
  m.artifacts = {"source.ckpt", "evaluator.ckpt", "pretrain_losses.csv", "pretrain_report.txt", "samples.png",
                 "dataset_manifest.txt"};
  m.resolved_config = cfg.resolved.dump();
  m.write(dir);
  out << report.str() << "run directory: " << dir.string() << "\n";
  return 0;
}

struct AdaptArtifacts {
  std::vector<std::string> files;
};

/// Runs one adaptation and writes its artifacts into `dir`.
AdaptationRun run_adaptation(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& out,
                             AdaptArtifacts& artifacts) {
  const auto source_path = checkpoint_path(cfg.adapt.source_checkpoint, "source.ckpt");
  auto source = load_checkpoint(source_path, cfg.model.hash(), cfg.adapt.force);
  auto evaluator = load_evaluator(cfg, evaluator_location(cfg));
  auto targets = load_targets(cfg);
  write_dataset_manifest(dir / "dataset_manifest.txt", {{"target/shots", &targets.shots.shots}});
  save_image_batch(targets.shots.shots.images, dir / "shots", "shot");
  artifacts.files.insert(artifacts.files.end(), {"dataset_manifest.txt", "shots/"});

  auto callback = [&](const IterationLosses& l, const AdaptationRun& run) {
    if (!run.series.empty() && run.series.back().iteration == l.iteration) {
      out << to_string(cfg.adapt.method) << " iteration " << l.iteration << " p_t "
          << format_number(run.series.back().p_t) << " intra_lpips " << format_number(run.series.back().intra_lpips)
          << "\n";
    }
  };
  auto run = adapt(cfg, source, targets.shots.shots.images, &evaluator, callback);
  run.series.write_csv(dir / "metrics.csv");
  write_text(dir / "losses.csv", losses_csv(run.losses));
  save_checkpoint(run.final_checkpoint, dir / "final.ckpt");
  artifacts.files.insert(artifacts.files.end(), {"metrics.csv", "losses.csv", "final.ckpt"});
  for (const auto& p : run.periodic) {
    const auto name = "ckpt_" + std::to_string(p.iteration) + ".ckpt";
    save_checkpoint(p.checkpoint, dir / name);
    artifacts.files.push_back(name);
  }
  return run;
}

int cmd_adapt(const Common& c, const std::string& method, std::int64_t shots, std::int64_t seed,
              const std::string& source, std::ostream& out) {
  auto user = load_user_config(c);
  if (!method.empty()) {
    parse_method(method);
    user.set("adapt.method", method);
  }
  if (shots >= 0) user.set("adapt.shots", std::to_string(shots));
  if (seed >= 0) user.set("adapt.seed", std::to_string(seed));
  apply_source(user, source);
  auto cfg = resolve_experiment(user);
  if (cfg.adapt.source_checkpoint.empty()) {
    throw ConfigError("adapt needs --source or adapt.source_checkpoint");
  }
  checkpoint_path(cfg.adapt.source_checkpoint, "source.ckpt");
  checkpoint_path(evaluator_location(cfg), "evaluator.ckpt");
  const auto dir = resolve_run_dir(c, to_string(cfg.adapt.method), std::to_string(cfg.adapt.seed));
  AdaptArtifacts artifacts;
  auto run = run_adaptation(cfg, dir, out, artifacts);

  RunManifest m;
  m.command = "adapt";
  m.config_path = c.config_path;
  m.seed = std::to_string(cfg.adapt.seed);
  m.artifacts = artifacts.files;
  m.extra = {{"method", to_string(cfg.adapt.method)},
             {"iterations", std::to_string(cfg.adapt.iterations)},
             {"wall_seconds", format_number(run.wall_seconds)}};
  m.resolved_config = cfg.resolved.dump();
  m.write(dir);
  out << "run directory: " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::vector<std::string>& overrides, std::ostream& out) {
  if (!fs::is_directory(run_dir)) throw MissingInputError("run directory not found: " + run_dir);
  auto manifest = RunManifest::read(run_dir);
  if (manifest.command != "adapt") throw ConfigError(run_dir + " is not an adaptation run");
  auto user = KeyValueConfig::parse(manifest.resolved_config, run_dir + "/manifest.txt");
  user.apply_overrides(overrides);
  auto cfg = resolve_experiment(user);

  auto final_ckpt = load_checkpoint(checkpoint_path(run_dir, "final.ckpt"), cfg.model.hash(), cfg.adapt.force);
  auto adapted = load_adapted_models(final_ckpt, cfg.model);
  auto source = load_source_models(
      load_checkpoint(checkpoint_path(cfg.adapt.source_checkpoint, "source.ckpt"), cfg.model.hash(), cfg.adapt.force),
      cfg.model);
  auto evaluator = load_evaluator(cfg, evaluator_location(cfg));
  auto targets = load_targets(cfg);

  torch::NoGradGuard no_grad;
  auto gen = make_cpu_generator(cfg.eval.seed);
  auto z = LatentBatch::sample(cfg.eval.generated, cfg.model.generator.z_dim, gen);
  z.fixed_proxy = true;
  adapted.generator->eval();
  ImageBatch images{adapted.generator->forward(z.data), Provenance::GeneratedTarget};
  auto feats = perceptual_features(evaluator.featnet, images);
  auto target_feats = perceptual_features(evaluator.featnet, targets.shots.shots.images);
  const double p_t = realisticness_probe(evaluator.classifier, adapted.generator, z);
  auto intra = intra_lpips(feats, target_feats, cfg.eval.pair_budget, cfg.eval.seed);
  const double standard = standard_lpips(feats, cfg.eval.standard_pairs, cfg.eval.seed);
  const double fd = frechet_feature_distance(evaluator.featnet, images, targets.eval.images);

  const fs::path dir(run_dir);
  std::ostringstream report;
  report << "p_t: " << format_number(p_t) << "\n"
         << "intra_lpips: " << format_number(intra.mean) << "\n"
         << "intra_lpips_std: " << format_number(intra.std) << "\n"
         << "standard_lpips: " << format_number(standard) << "\n"
         << "frechet_distance: " << format_number(fd) << "\n"
         << "generated: " << cfg.eval.generated << "\n"
         << "pair_budget: " << cfg.eval.pair_budget << "\n"
         << "clusters_with_pairs: " << intra.clusters_with_pairs << "\n";
  write_text(dir / "eval_report.txt", report.str());
  std::ostringstream clusters;
  clusters << "cluster,members,pairs,intra_lpips\n";
  for (std::size_t m = 0; m < intra.per_cluster.size(); ++m) {
    clusters << m << "," << intra.assignment.members[m].size() << "," << intra.assignment.pairs_used[m] << ","
             << format_number(intra.per_cluster[m]) << "\n";
  }
  write_text(dir / "eval_clusters.csv", clusters.str());

  const std::int64_t show = std::min<std::int64_t>(8, z.size());
  ImageBatch src{source.generator->forward(z.data.slice(0, 0, show)), Provenance::GeneratedSource};
  write_image_grid(dir / "grid_source_target.png", {src, images.slice(0, show)}, 2);
  std::vector<ImageBatch> rows = {targets.shots.shots.images};
  for (std::size_t k = 0; k < 5; ++k) {
    auto row = torch::zeros_like(targets.shots.shots.images.data);
    for (std::size_t m = 0; m < intra.assignment.members.size(); ++m) {
      const auto& members = intra.assignment.members[m];
      if (k < members.size()) row[static_cast<std::int64_t>(m)].copy_(images.data[members[k]]);
    }
    rows.push_back(ImageBatch{row, Provenance::GeneratedTarget});
  }
  write_image_grid(dir / "grid_clusters.png", rows, 2);
  out << report.str();
  return 0;
}

int cmd_probe(const Common& c, const std::string& pretrain_dir, const std::string& methods_csv,
              const std::string& seeds_csv, std::ostream& out) {
  if (!fs::is_directory(pretrain_dir)) throw MissingInputError("pretrain run directory not found: " + pretrain_dir);
  auto base = load_user_config(c);
  apply_source(base, pretrain_dir);
  std::vector<Method> methods;
  {
    std::stringstream ss(methods_csv);
    std::string m;
    while (std::getline(ss, m, ',')) methods.push_back(parse_method(m));
  }
  std::vector<std::string> seeds;
  {
    std::stringstream ss(seeds_csv);
    std::string s;
    while (std::getline(ss, s, ',')) seeds.push_back(s);
  }
  if (methods.empty() || seeds.empty()) throw ConfigError("probe needs at least one method and one seed");
  // Validate every combination before the first run starts.
  for (auto m : methods) {
    for (const auto& s : seeds) {
      auto user = base;
      user.set("adapt.method", to_string(m));
      user.set("adapt.seed", s);
      resolve_experiment(user);
    }
  }
  const auto dir = resolve_run_dir(c, "probe", seeds.front());
  std::ostringstream csv;
  csv << "method,seed," << MetricSeries::kHeader << "\n";
  RunManifest manifest;
  for (auto m : methods) {
    for (const auto& s : seeds) {
      auto user = base;
      user.set("adapt.method", to_string(m));
      user.set("adapt.seed", s);
      auto cfg = resolve_experiment(user);
      const auto sub = dir / (to_string(m) + "_" + s);
      fs::create_directories(sub);
      AdaptArtifacts artifacts;
      auto run = run_adaptation(cfg, sub, out, artifacts);
      RunManifest sub_manifest;
      sub_manifest.command = "adapt";
      sub_manifest.config_path = c.config_path;
      sub_manifest.seed = s;
      sub_manifest.artifacts = artifacts.files;
      sub_manifest.resolved_config = cfg.resolved.dump();
      sub_manifest.write(sub);
      for (const auto& p : run.series.points()) {
        csv << to_string(m) << "," << s << "," << p.iteration << "," << format_number(p.loss_adv) << ","
            << format_number(p.loss_cl1) << "," << format_number(p.loss_cl2) << "," << format_number(p.loss_aux)
            << "," << format_number(p.p_t) << "," << format_number(p.intra_lpips) << "\n";
      }
      manifest.artifacts.push_back(sub.filename().string() + "/");
      manifest.resolved_config = cfg.resolved.dump();
    }
  }
  write_text(dir / "probe.csv", csv.str());
  manifest.command = "probe";
  manifest.config_path = c.config_path;
  manifest.seed = seeds_csv;
  manifest.artifacts.push_back("probe.csv");
  manifest.extra = {{"methods", methods_csv}, {"pretrain_run", fs::absolute(pretrain_dir).string()}};
  manifest.write(dir);
  out << "run directory: " << dir.string() << "\n";
  return 0;
}

int cmd_mi_check(const Common& c, const std::vector<std::string>& joints, const std::vector<std::int64_t>& sizes,
                 std::int64_t trials, std::uint64_t seed, bool untrained, std::int64_t embed, std::ostream& out) {
  std::vector<ToyJointDistribution> parsed;
  for (const auto& j : joints) parsed.push_back(joint_by_name(j));
  for (auto n : sizes) {
    if (n < 2) throw ConfigError("--batch-size must be >= 2");
  }
  if (trials < 2) throw ConfigError("--trials must be >= 2");
  const auto dir = resolve_run_dir(c, "mi-check", std::to_string(seed));
  CriticOptions opts;
  opts.train = !untrained;
  if (embed > 0) opts.embed = embed;
  std::ostringstream csv, text;
  csv << BoundReport::csv_header() << "\n";
  for (const auto& joint : parsed) {
    for (auto n : sizes) {
      auto report = verify_bound(joint, n, opts, trials, seed);
      csv << report.csv_row() << "\n";
      text << report.to_text() << "\n";
      out << joint.name << " N=" << n << " bound " << format_number(report.bound_value) << " exact_mi "
          << format_number(report.exact_mi) << " holds " << (report.holds ? "true" : "false") << "\n";
    }
  }
  write_text(dir / "bound_reports.csv", csv.str());
  write_text(dir / "bound_reports.txt", text.str());
  RunManifest m;
  m.command = "mi-check";
  m.seed = std::to_string(seed);
  m.artifacts = {"bound_reports.csv", "bound_reports.txt"};
  m.write(dir);
  out << "run directory: " << dir.string() << "\n";
  return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out_dir, std::ostream& out) {
  if (csvs.empty()) throw ConfigError("plot needs at least one CSV file");
  for (const auto& path : csvs) {
    auto table = CsvTable::read(path);
    const fs::path dest = out_dir.empty() ? fs::path(path).parent_path() : fs::path(out_dir);
    const auto stem = fs::path(path).stem().string();
    std::vector<std::pair<std::string, std::vector<PlotSeries>>> charts;
    std::string x_label;
    if (table.column("p_t") >= 0 && table.column("iteration") >= 0) {
      const std::string group = table.column("method") >= 0 ? "method" : "";
      if (!group.empty() && table.column("seed") >= 0) {
        // One series per method/seed run.
        const int mc = table.column("method");
        const int sc = table.column("seed");
        table.header.push_back("run");
        for (auto& row : table.rows) row.push_back(row[static_cast<std::size_t>(mc)] + "/" + row[static_cast<std::size_t>(sc)]);
      }
      const std::string by = group.empty() ? "" : (table.column("run") >= 0 ? "run" : group);
      charts.push_back({"p_t", series_from_table(table, "iteration", "p_t", by)});
      charts.push_back({"intra_lpips", series_from_table(table, "iteration", "intra_lpips", by)});
      x_label = "iteration";
    } else if (table.column("bound_value") >= 0) {
      charts.push_back({"bound_value", series_from_table(table, "batch_size", "bound_value", "joint")});
      x_label = "batch size";
    } else if (table.column("loss_d") >= 0) {
      charts.push_back({"losses", series_from_table(table, "iteration", "loss_d")});
      auto g = series_from_table(table, "iteration", "loss_g");
      charts.back().second.insert(charts.back().second.end(), g.begin(), g.end());
      x_label = "iteration";
    } else {
      throw InputError("unrecognized CSV layout in " + path);
    }
    for (const auto& [name, series] : charts) {
      ChartOptions opts;
      opts.title = stem + " " + name;
      opts.x_label = x_label;
      opts.y_label = name;
      const auto file = dest / (stem + "_" + name + ".png");
      write_line_chart(file, series, opts);
      out << "wrote " << file.string() << "\n";
    }
  }
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os << "command: " << command << "\n"
     << "config_path: " << config_path << "\n"
     << "seed: " << seed << "\n"
     << "toolkit_version: " << toolkit_version << "\n";
  for (const auto& [k, v] : extra) os << k << ": " << v << "\n";
  for (const auto& a : artifacts) os << "artifact: " << a << "\n";
  os << "artifact: manifest.txt\n";
  os << "[config]\n" << resolved_config;
  return os.str();
}

void RunManifest::write(const fs::path& dir) const { write_text(dir / "manifest.txt", to_text()); }

RunManifest RunManifest::read(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw MissingInputError("no manifest.txt in " + dir.string());
  RunManifest m;
  std::string line;
  bool in_config = false;
  std::ostringstream config;
  while (std::getline(in, line)) {
    if (in_config) {
      config << line << "\n";
      continue;
    }
    if (line == "[config]") {
      in_config = true;
      continue;
    }
    const auto pos = line.find(": ");
    const auto key = line.substr(0, pos == std::string::npos ? line.size() : pos);
    const auto value = pos == std::string::npos ? std::string() : line.substr(pos + 2);
    if (key == "command") {
      m.command = value;
    } else if (key == "config_path") {
      m.config_path = value;
    } else if (key == "seed") {
      m.seed = value;
    } else if (key == "toolkit_version") {
      m.toolkit_version = value;
    } else if (key == "artifact") {
      if (value != "manifest.txt") m.artifacts.push_back(value);
    } else if (!key.empty()) {
      m.extra.emplace_back(key, value);
    }
  }
  m.resolved_config = config.str();
  return m;
}

fs::path make_run_dir(const fs::path& parent, const std::string& name, const std::string& seed) {
  const auto base = name + "_" + seed + "_" + utc_timestamp();
  fs::path dir = parent / base;
  for (int k = 1; fs::exists(dir); ++k) dir = parent / (base + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

std::pair<DatasetSpec, DatasetSpec> dataset_specs(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  const auto resolution = cfg.model.generator.resolution;
  if (d.kind == "synthetic") {
    SyntheticStyle style;
    style.resolution = resolution;
    ToyDomainSizes sizes{d.source_train, d.source_val, d.target_pool, d.target_eval};
    return synthesize_toy_domains(d.seed, style, sizes);
  }
  DatasetSpec source;
  source.kind = DatasetKind::ImageFolder;
  source.name = "source";
  source.domain = Domain::Source;
  source.root = d.source_folder;
  source.resolution = resolution;
  source.splits = {{"train", 0}, {"val", 0}};
  DatasetSpec target = source;
  target.name = "target";
  target.domain = Domain::Target;
  target.root = d.target_folder;
  target.splits = {{"pool", 0}, {"eval", 0}};
  return {source, target};
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot generator adaptation with dual contrastive learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);

  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key = value configuration file");
    sub->add_option("--set", common.overrides, "override as key=value (repeatable)");
    sub->add_option("--out", common.out_parent, "parent directory for the run directory");
    sub->add_option("--run-dir", common.run_dir, "exact run directory to write into");
  };

  auto* pretrain_cmd = app.add_subcommand("pretrain", "train the source GAN and evaluator networks");
  add_common(pretrain_cmd);

  std::string method, source;
  std::int64_t shots = -1, seed = -1;
  auto* adapt_cmd = app.add_subcommand("adapt", "adapt a pretrained generator to few target images");
  add_common(adapt_cmd);
  adapt_cmd->add_option("--method", method, "one of: " + valid_methods());
  adapt_cmd->add_option("--shots", shots, "target image count M");
  adapt_cmd->add_option("--seed", seed, "adaptation seed");
  adapt_cmd->add_option("--source", source, "pretrain run directory or source checkpoint");

  std::string run_dir;
  std::vector<std::string> eval_overrides;
  auto* eval_cmd = app.add_subcommand("eval", "score an adaptation run");
  eval_cmd->add_option("run_dir", run_dir, "adaptation run directory")->required();
  eval_cmd->add_option("--set", eval_overrides, "override evaluation keys as key=value");

  std::string probe_source, methods = "dcl,tgan,freezed,ewc,cdc", seeds = "0";
  auto* probe_cmd = app.add_subcommand("probe", "run every method with shared seeds and collect probe curves");
  add_common(probe_cmd);
  probe_cmd->add_option("pretrain_run", probe_source, "pretrain run directory")->required();
  probe_cmd->add_option("--methods", methods, "comma-separated method ids");
  probe_cmd->add_option("--seeds", seeds, "comma-separated seeds");

  std::vector<std::string> joints = {"independent", "deterministic", "gaussian"};
  std::vector<std::int64_t> sizes = {2, 4, 8};
  std::int64_t trials = 200, embed = 0;
  std::uint64_t mi_seed = 0;
  bool untrained = false;
  auto* mi_cmd = app.add_subcommand("mi-check", "verify the contrastive mutual-information bound on toy joints");
  add_common(mi_cmd);
  mi_cmd->add_option("--joint", joints, "independent, deterministic or gaussian (repeatable)");
  mi_cmd->add_option("--batch-size", sizes, "batch size N (repeatable)");
  mi_cmd->add_option("--trials", trials, "evaluation batches per report");
  mi_cmd->add_option("--seed", mi_seed, "seed");
  mi_cmd->add_option("--embed", embed, "critic embedding width");
  mi_cmd->add_flag("--untrained", untrained, "evaluate the randomly initialized critic");

  std::vector<std::string> csvs;
  std::string plot_out;
  auto* plot_cmd = app.add_subcommand("plot", "render CSV logs as PNG charts");
  plot_cmd->add_option("csv", csvs, "metric, probe, bound or loss CSV files")->required();
  plot_cmd->add_option("--out", plot_out, "output directory (default: next to each CSV)");

  std::vector<std::string> argv_store = {"dcl"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForVersion&) {
      out << kToolkitVersion << "\n";
      return 0;
    } catch (const CLI::ParseError& e) {
      throw ConfigError(e.what());
    }
    if (*pretrain_cmd) return cmd_pretrain(common, out);
    if (*adapt_cmd) return cmd_adapt(common, method, shots, seed, source, out);
    if (*eval_cmd) return cmd_eval(run_dir, eval_overrides, out);
    if (*probe_cmd) return cmd_probe(common, probe_source, methods, seeds, out);
    if (*mi_cmd) return cmd_mi_check(common, joints, sizes, trials, mi_seed, untrained, embed, out);
    if (*plot_cmd) return cmd_plot(csvs, plot_out, out);
    return static_cast<int>(ExitCode::kFailure);
  } catch (const ConfigError& e) {
    err << "dcl: config-error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  } catch (const MissingInputError& e) {
    err << "dcl: missing-input: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kMissingInput);
  } catch (const NumericError& e) {
    err << "dcl: numeric-failure: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const std::exception& e) {
    err << "dcl: error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
}

}  // namespace dcl

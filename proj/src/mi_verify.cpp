#include "dcl/mi_verify.hpp"

#include <cmath>
#include <sstream>

#include "dcl/batches.hpp"
#include "dcl/data.hpp"
#include "dcl/errors.hpp"
#include "dcl/losses.hpp"
#include "dcl/metrics.hpp"
#include "dcl/models.hpp"

namespace dcl {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

torch::nn::Sequential mlp(std::int64_t in, const CriticOptions& o) {
  return torch::nn::Sequential(torch::nn::Linear(in, o.hidden),
                               torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                               torch::nn::Linear(o.hidden, o.hidden),
                               torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                               torch::nn::Linear(o.hidden, o.embed));
}

}  // namespace

ToyJointDistribution ToyJointDistribution::discrete(torch::Tensor table, std::string name) {
  ToyJointDistribution j;
  j.kind = JointKind::DiscreteTable;
  j.name = std::move(name);
  j.table = table.to(torch::kFloat64).contiguous();
  j.validate();
  return j;
}

ToyJointDistribution ToyJointDistribution::independent(std::int64_t k) {
  return discrete(torch::full({k, k}, 1.0 / static_cast<double>(k * k), torch::kFloat64), "independent");
}

ToyJointDistribution ToyJointDistribution::deterministic(std::int64_t k) {
  return discrete(torch::eye(k, torch::kFloat64) / static_cast<double>(k), "deterministic");
}

ToyJointDistribution ToyJointDistribution::gaussian(double rho, std::int64_t dim) {
  ToyJointDistribution j;
  j.kind = JointKind::CorrelatedGaussian;
  j.name = "gaussian";
  j.rho = rho;
  j.dim = dim;
  j.validate();
  return j;
}

void ToyJointDistribution::validate() const {
  if (kind == JointKind::CorrelatedGaussian) {
    if (!(std::abs(rho) < 1.0)) throw InputError("gaussian joint needs |rho| < 1");
    if (dim < 1) throw InputError("gaussian joint needs dim >= 1");
    return;
  }
  if (!table.defined() || table.dim() != 2 || table.numel() == 0) throw InputError("joint table must be 2-D");
  if ((table < 0).any().item<bool>()) throw InputError("joint table has negative entries");
  if (std::abs(table.sum().item<double>() - 1.0) > 1e-9) throw InputError("joint table must sum to 1");
}

std::int64_t ToyJointDistribution::x_dim() const {
  return kind == JointKind::DiscreteTable ? table.size(0) : dim;
}

std::int64_t ToyJointDistribution::y_dim() const {
  return kind == JointKind::DiscreteTable ? table.size(1) : dim;
}

std::pair<torch::Tensor, torch::Tensor> ToyJointDistribution::sample(std::int64_t n, std::mt19937_64& rng) const {
  auto x = torch::zeros({n, x_dim()});
  auto y = torch::zeros({n, y_dim()});
  auto xa = x.accessor<float, 2>();
  auto ya = y.accessor<float, 2>();
  if (kind == JointKind::CorrelatedGaussian) {
    std::normal_distribution<double> normal;
    const double s = std::sqrt(1.0 - rho * rho);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t d = 0; d < dim; ++d) {
        const double a = normal(rng);
        xa[i][d] = static_cast<float>(a);
        ya[i][d] = static_cast<float>(rho * a + s * normal(rng));
      }
    }
    return {x, y};
  }
  auto flat = table.flatten();
  auto p = flat.accessor<double, 1>();
  const auto cols = table.size(1);
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    double acc = 0.0;
    std::int64_t cell = flat.size(0) - 1;
    for (std::int64_t c = 0; c < flat.size(0); ++c) {
      acc += p[c];
      if (u < acc) {
        cell = c;
        break;
      }
    }
    xa[i][cell / cols] = 1.0f;
    ya[i][cell % cols] = 1.0f;
  }
  return {x, y};
}

double exact_mi(const ToyJointDistribution& joint) {
  joint.validate();
  if (joint.kind == JointKind::CorrelatedGaussian) {
    return -0.5 * static_cast<double>(joint.dim) * std::log1p(-joint.rho * joint.rho);
  }
  auto t = joint.table.accessor<double, 2>();
  const auto kx = joint.table.size(0);
  const auto ky = joint.table.size(1);
  std::vector<double> px(static_cast<std::size_t>(kx), 0.0), py(static_cast<std::size_t>(ky), 0.0);
  for (std::int64_t i = 0; i < kx; ++i) {
    for (std::int64_t j = 0; j < ky; ++j) {
      px[static_cast<std::size_t>(i)] += t[i][j];
      py[static_cast<std::size_t>(j)] += t[i][j];
    }
  }
  double mi = 0.0;
  for (std::int64_t i = 0; i < kx; ++i) {
    for (std::int64_t j = 0; j < ky; ++j) {
      if (t[i][j] > 0.0) {
        mi += t[i][j] * std::log(t[i][j] / (px[static_cast<std::size_t>(i)] * py[static_cast<std::size_t>(j)]));
      }
    }
  }
  return std::max(mi, 0.0);
}

CriticImpl::CriticImpl(std::int64_t x_dim, std::int64_t y_dim, const CriticOptions& options) {
  fx_ = register_module("fx", mlp(x_dim, options));
  fy_ = register_module("fy", mlp(y_dim, options));
}

torch::Tensor CriticImpl::encode_x(const torch::Tensor& x) { return fx_->forward(x); }

torch::Tensor CriticImpl::encode_y(const torch::Tensor& y) { return fy_->forward(y); }

torch::Tensor CriticImpl::loss(const torch::Tensor& x, const torch::Tensor& y, double tau) {
  return generator_contrastive_loss(encode_y(y), encode_x(x), tau, NegativeSource::Source);
}

double BoundReport::log_n() const { return std::log(static_cast<double>(batch_size)); }

double BoundReport::tightness_gap() const { return std::min(log_n(), exact_mi) - bound_value; }

std::string BoundReport::to_text() const {
  std::ostringstream os;
  os << "joint: " << joint << "\n"
     << "batch_size: " << batch_size << "\n"
     << "trials: " << trials << "\n"
     << "critic_trained: " << (trained ? "true" : "false") << "\n"
     << "critic_embed: " << embed << "\n"
     << "log_n: " << format_number(log_n()) << "\n"
     << "mean_loss: " << format_number(mean_loss) << "\n"
     << "std_error: " << format_number(std_error) << "\n"
     << "bound_value: " << format_number(bound_value) << "\n"
     << "exact_mi: " << format_number(exact_mi) << "\n"
     << "eps_stat: " << format_number(eps_stat) << "\n"
     << "holds: " << (holds ? "true" : "false") << "\n"
     << "gap: " << format_number(gap) << "\n"
     << "tightness_gap: " << format_number(tightness_gap()) << "\n";
  return os.str();
}

std::string BoundReport::csv_header() {
  return "joint,batch_size,trials,critic_trained,critic_embed,log_n,mean_loss,std_error,bound_value,exact_mi,"
         "eps_stat,holds,gap,tightness_gap";
}

std::string BoundReport::csv_row() const {
  std::ostringstream os;
  os << joint << "," << batch_size << "," << trials << "," << (trained ? 1 : 0) << "," << embed << ","
     << format_number(log_n()) << "," << format_number(mean_loss) << "," << format_number(std_error) << ","
     << format_number(bound_value) << "," << format_number(exact_mi) << "," << format_number(eps_stat) << ","
     << (holds ? 1 : 0) << "," << format_number(gap) << "," << format_number(tightness_gap());
  return os.str();
}

BoundReport verify_bound(const ToyJointDistribution& joint, std::int64_t batch_size, const CriticOptions& options,
                         std::int64_t trials, std::uint64_t seed) {
  joint.validate();
  if (batch_size < 2) throw ConfigError("bound verification needs a batch size of at least 2");
  if (trials < 2) throw ConfigError("bound verification needs at least two trials");

  auto gen = make_cpu_generator(mix_seed(seed, 0x3171));
  Critic critic(joint.x_dim(), joint.y_dim(), options);
  init_parameters(*critic, gen, 0.2);
  std::mt19937_64 train_rng(mix_seed(seed, 0x3172));
  if (options.train) {
    torch::optim::Adam opt(critic->parameters(), torch::optim::AdamOptions(options.lr));
    for (std::int64_t step = 0; step < options.train_steps; ++step) {
      auto [x, y] = joint.sample(options.train_batch, train_rng);
      auto loss = critic->loss(x, y, options.tau);
      if (!std::isfinite(loss.item<double>())) {
        throw NumericError("critic diverged at step " + std::to_string(step), step);
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  std::mt19937_64 eval_rng(mix_seed(seed, 0x3173));
  torch::NoGradGuard no_grad;
  std::vector<double> losses;
  for (std::int64_t t = 0; t < trials; ++t) {
    auto [x, y] = joint.sample(batch_size, eval_rng);
    const double v = critic->loss(x, y, options.tau).item<double>();
    if (!std::isfinite(v)) throw NumericError("critic produced a non-finite loss", t);
    losses.push_back(v);
  }

  BoundReport r;
  r.joint = joint.name;
  r.batch_size = batch_size;
  r.trials = trials;
  r.trained = options.train;
  r.embed = options.embed;
  double sum = 0.0;
  for (double v : losses) sum += v;
  r.mean_loss = sum / static_cast<double>(trials);
  double var = 0.0;
  for (double v : losses) var += (v - r.mean_loss) * (v - r.mean_loss);
  var /= static_cast<double>(trials - 1);
  r.std_error = std::sqrt(var / static_cast<double>(trials));
  r.bound_value = r.log_n() - r.mean_loss;
  r.exact_mi = exact_mi(joint);
  r.eps_stat = 3.0 * r.std_error;
  r.holds = r.bound_value <= r.exact_mi + r.eps_stat;
  r.gap = r.exact_mi - r.bound_value;
  return r;
}

ToyJointDistribution joint_by_name(const std::string& name) {
  if (name == "independent") return ToyJointDistribution::independent(16);
  if (name == "deterministic") return ToyJointDistribution::deterministic(16);
  if (name == "gaussian") return ToyJointDistribution::gaussian(0.9, 1);
  throw ConfigError("unknown joint '" + name + "'; valid joints: independent, deterministic, gaussian");
}

}  // namespace dcl

#include "dcl/losses.hpp"

#include <cmath>

#include "dcl/errors.hpp"

namespace dcl {

namespace F = torch::nn::functional;

namespace {

void require_matrix(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 2) {
    throw InputError(std::string(what) + " must be a (rows, channels) matrix");
  }
}

void require_positive_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be positive and finite");
}

torch::Tensor unit_rows(const torch::Tensor& m) {
  auto norms = m.norm(2, 1, /*keepdim=*/true);
  if ((norms.detach() == 0).any().item<bool>()) {
    throw DegenerateInputError("cosine similarity of a zero-norm feature row is undefined");
  }
  return m / norms;
}

}  // namespace

torch::Tensor adversarial_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                               AdversarialSide side) {
  if (!fake_logits.defined() || fake_logits.numel() == 0) {
    throw InputError("adversarial loss needs a non-empty fake batch");
  }
  // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x).
  if (side == AdversarialSide::Generator) return F::softplus(-fake_logits).mean();
  if (!real_logits.defined() || real_logits.numel() == 0) {
    throw InputError("discriminator loss needs a non-empty real batch");
  }
  return 0.5 * (F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean());
}

torch::Tensor cosine_similarity_matrix(const torch::Tensor& a, const torch::Tensor& b) {
  require_matrix(a, "first feature set");
  require_matrix(b, "second feature set");
  if (a.size(1) != b.size(1)) throw InputError("feature sets differ in channel count");
  return unit_rows(a).matmul(unit_rows(b).t());
}

torch::Tensor temperature_similarity(const torch::Tensor& u, const torch::Tensor& v, double tau) {
  require_positive_tau(tau);
  if (u.numel() != v.numel() || u.numel() == 0) throw InputError("similarity needs equal-length vectors");
  auto cos = cosine_similarity_matrix(u.reshape({1, -1}), v.reshape({1, -1}));
  return torch::exp(cos.squeeze() / tau);
}

SimilarityMatrix SimilarityMatrix::build(const torch::Tensor& a, const torch::Tensor& b, double tau) {
  require_positive_tau(tau);
  return SimilarityMatrix{torch::exp(cosine_similarity_matrix(a, b) / tau), tau};
}

torch::Tensor generator_contrastive_loss(const torch::Tensor& target_features, const torch::Tensor& source_features,
                                         double tau, NegativeSource negatives) {
  require_positive_tau(tau);
  require_matrix(target_features, "target features");
  require_matrix(source_features, "source features");
  if (target_features.sizes() != source_features.sizes() || target_features.size(0) < 1) {
    throw InputError("generator contrastive loss needs matching non-empty (N, C) feature sets");
  }
  const auto n = target_features.size(0);
  if (negatives == NegativeSource::Source) {
    auto logits = cosine_similarity_matrix(target_features, source_features) / tau;
    return (torch::logsumexp(logits, 1) - logits.diagonal()).mean();
  }
  auto t = unit_rows(target_features);
  auto positive = (t * unit_rows(source_features)).sum(1, /*keepdim=*/true) / tau;
  auto self = t.matmul(t.t()) / tau;
  auto eye = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  self = self.masked_fill(eye, -std::numeric_limits<double>::infinity());
  auto logits = torch::cat({positive, self}, 1);
  return (torch::logsumexp(logits, 1) - positive.squeeze(1)).mean();
}

torch::Tensor discriminator_contrastive_loss(const torch::Tensor& target_fake, const torch::Tensor& source_fake,
                                             const torch::Tensor& real_target, double tau) {
  require_positive_tau(tau);
  require_matrix(target_fake, "target-fake features");
  require_matrix(source_fake, "source-fake features");
  require_matrix(real_target, "real-target features");
  if (real_target.size(0) == 0) {
    throw ConfigError("discriminator contrastive loss needs at least one real target image (M >= 1)");
  }
  if (target_fake.sizes() != source_fake.sizes() || target_fake.size(0) < 1) {
    throw InputError("discriminator contrastive loss needs matching non-empty fake feature sets");
  }
  auto t = unit_rows(target_fake);
  auto positive = (t * unit_rows(source_fake)).sum(1, /*keepdim=*/true) / tau;
  auto to_real = t.matmul(unit_rows(real_target).t()) / tau;
  auto logits = torch::cat({positive, to_real}, 1);
  return (torch::logsumexp(logits, 1) - positive.squeeze(1)).mean();
}

Objective dcl_objective(const LossTerms& terms, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0 || !std::isfinite(lambda1) || !std::isfinite(lambda2)) {
    throw ConfigError("contrastive weights must be finite and non-negative");
  }
  if (!terms.adv.defined()) throw InputError("objective needs an adversarial term");
  auto value = [](const torch::Tensor& t, const char* name) {
    if (!t.defined()) return 0.0;
    const double v = t.item<double>();
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name, -1);
    return v;
  };
  Objective out;
  out.bundle.lambda1 = lambda1;
  out.bundle.lambda2 = lambda2;
  out.bundle.adv = value(terms.adv, "adv");
  out.bundle.cl1 = value(terms.cl1, "cl1");
  out.bundle.cl2 = value(terms.cl2, "cl2");
  out.bundle.aux = value(terms.aux, "aux");
  out.total = terms.adv;
  if (terms.cl1.defined()) out.total = out.total + lambda1 * terms.cl1;
  if (terms.cl2.defined()) out.total = out.total + lambda2 * terms.cl2;
  if (terms.aux.defined()) out.total = out.total + terms.aux;
  out.bundle.total = out.total.item<double>();
  return out;
}

torch::Tensor cdc_distance_loss(const torch::Tensor& target_features, const torch::Tensor& source_features) {
  require_matrix(target_features, "target features");
  require_matrix(source_features, "source features");
  if (target_features.sizes() != source_features.sizes()) {
    throw InputError("distance loss needs matching feature sets");
  }
  const auto n = target_features.size(0);
  if (n < 2) throw InputError("distance loss needs at least two rows");
  auto off_diagonal = ~torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  auto rows = [&](const torch::Tensor& f) {
    auto sim = cosine_similarity_matrix(f, f);
    return torch::log_softmax(sim.masked_select(off_diagonal).view({n, n - 1}), 1);
  };
  auto log_source = rows(source_features);
  auto log_target = rows(target_features);
  return (log_source.exp() * (log_source - log_target)).sum(1).mean();
}

std::vector<torch::Tensor> estimate_fisher(Generator& g, Discriminator& d, const LatentBatch& z) {
  z.validate();
  if (g->frozen()) throw ConfigError("Fisher estimation needs a generator with trainable parameters");
  auto params = g->parameters();
  std::vector<torch::Tensor> fisher;
  fisher.reserve(params.size());
  for (const auto& p : params) fisher.push_back(torch::zeros_like(p).detach());
  const auto n = z.size();
  for (std::int64_t i = 0; i < n; ++i) {
    auto image = g->forward(z.data.slice(0, i, i + 1));
    auto loss = adversarial_loss({}, d->forward(image), AdversarialSide::Generator);
    auto grads = torch::autograd::grad({loss}, params, {}, /*retain_graph=*/false, /*create_graph=*/false,
                                       /*allow_unused=*/true);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (grads[k].defined()) fisher[k] += grads[k].detach().pow(2);
    }
  }
  for (auto& f : fisher) f /= static_cast<double>(n);
  return fisher;
}

torch::Tensor ewc_penalty(const std::vector<torch::Tensor>& target_params,
                          const std::vector<torch::Tensor>& source_params, const std::vector<torch::Tensor>& fisher,
                          double lambda) {
  if (target_params.size() != source_params.size() || target_params.size() != fisher.size()) {
    throw InputError("EWC parameter lists are not aligned");
  }
  if (lambda < 0.0) throw ConfigError("EWC weight must be non-negative");
  torch::Tensor total;
  for (std::size_t i = 0; i < target_params.size(); ++i) {
    if (target_params[i].sizes() != source_params[i].sizes() || target_params[i].sizes() != fisher[i].sizes()) {
      throw InputError("EWC tensors differ in shape at index " + std::to_string(i));
    }
    auto term = (fisher[i] * (target_params[i] - source_params[i]).pow(2)).sum();
    total = total.defined() ? total + term : term;
  }
  if (!total.defined()) return torch::zeros({});
  return lambda * total;
}

}  // namespace dcl

#pragma once

// Plain-loop reference implementations on nested std::vector<double>.  They
// share no code with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    dot += u[k] * v[k];
    nu += u[k] * u[k];
    nv += v[k] * v[k];
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

inline double sim(const std::vector<double>& u, const std::vector<double>& v, double tau) {
  return std::exp(cosine(u, v) / tau);
}

/// Generator-side InfoNCE: anchors t_i, positives s_i, negatives s_j (all j)
/// or t_j (j != i) plus the positive.
inline double generator_cl(const Matrix& t, const Matrix& s, double tau, bool target_negatives = false) {
  const std::size_t n = t.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = sim(t[i], s[i], tau);
    double denom = pos;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      denom += target_negatives ? sim(t[i], t[j], tau) : sim(t[i], s[j], tau);
    }
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(n);
}

/// Discriminator-side InfoNCE: positive pair (t_i, s_i), negatives are every real target r_j.
inline double discriminator_cl(const Matrix& t, const Matrix& s, const Matrix& r, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double pos = sim(t[i], s[i], tau);
    double denom = pos;
    for (const auto& rj : r) denom += sim(t[i], rj, tau);
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(t.size());
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return d;
}

struct IntraResult {
  double mean = 0.0;
  std::vector<double> per_cluster;
  std::vector<int> cluster;
};

/// Nearest-target clustering followed by the mean pairwise distance of every
/// unordered pair inside each cluster; the score averages clusters that hold
/// at least two members.
inline IntraResult intra_cluster_distance(const Matrix& generated, const Matrix& targets) {
  IntraResult out;
  std::vector<std::vector<std::size_t>> members(targets.size());
  for (std::size_t i = 0; i < generated.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < targets.size(); ++m) {
      const double d = squared_distance(generated[i], targets[m]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(m);
      }
    }
    out.cluster.push_back(best);
    members[static_cast<std::size_t>(best)].push_back(i);
  }
  double sum = 0.0;
  int counted = 0;
  for (const auto& mem : members) {
    double acc = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < mem.size(); ++a) {
      for (std::size_t b = a + 1; b < mem.size(); ++b) {
        acc += squared_distance(generated[mem[a]], generated[mem[b]]);
        ++pairs;
      }
    }
    out.per_cluster.push_back(pairs > 0 ? acc / pairs : 0.0);
    if (pairs > 0) {
      sum += acc / pairs;
      ++counted;
    }
  }
  out.mean = counted > 0 ? sum / counted : 0.0;
  return out;
}

/// Fréchet distance through the eigenvalues of Σ1Σ2: Tr sqrt(Σ1Σ2) is the sum
/// of square roots of its (real, non-negative) eigenvalues.
inline double frechet(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                      const Eigen::MatrixXd& s2) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(s1 * s2);
  double trace_sqrt = 0.0;
  for (int k = 0; k < es.eigenvalues().size(); ++k) {
    trace_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()[k].real()));
  }
  return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
}

/// Mutual information of a discrete joint table in nats.
inline double mutual_information(const Matrix& p) {
  std::vector<double> px(p.size(), 0.0), py(p.front().size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      px[i] += p[i][j];
      py[j] += p[i][j];
    }
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      if (p[i][j] > 0.0) mi += p[i][j] * std::log(p[i][j] / (px[i] * py[j]));
    }
  }
  return mi;
}

/// Pearson chi-square statistic of observed counts against a uniform expectation.
inline double chi_square_uniform(const std::vector<std::int64_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  const double expected = total / static_cast<double>(counts.size());
  double chi = 0.0;
  for (auto c : counts) chi += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return chi;
}

}  // namespace oracle

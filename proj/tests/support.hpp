#pragma once

// Test-side helpers: random instances, an independent brute-force
// implementation of the model, and finite-difference tools. Nothing here
// calls the library's link functions or recursions.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "lmrasch/lmrasch.hpp"

namespace lmtest {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using lmrasch::Dataset;
using lmrasch::ItemDesign;
using lmrasch::ModelShape;
using lmrasch::Parameters;

using Rng = std::mt19937_64;

inline double unif(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
inline int unif_int(Rng& rng, int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }
inline double normal(Rng& rng, double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng); }

// ---------------------------------------------------------------------------
// Random instances

// Items per occasion in [1, max_items]; some items re-use earlier
// difficulties when `link_items` is set.
inline ItemDesign random_design(Rng& rng, int T, int max_items, bool link_items = true) {
  std::vector<std::vector<int>> link(static_cast<std::size_t>(T));
  int next = 0;
  for (int t = 0; t < T; ++t) {
    const int J = unif_int(rng, 1, max_items);
    for (int j = 0; j < J; ++j) {
      if (link_items && next > 0 && unif(rng, 0, 1) < 0.3) link[t].push_back(unif_int(rng, 0, next - 1));
      else link[t].push_back(next++);
    }
  }
  return ItemDesign(std::move(link));
}

inline Dataset random_dataset(Rng& rng, const ItemDesign& design, int H, int max_subjects, int p_c, int p_i,
                              double missing_rate = 0.0) {
  Dataset data;
  for (int k = 0; k < p_c; ++k) data.cluster_covariate_names.push_back("x" + std::to_string(k + 1));
  for (int k = 0; k < p_i; ++k) data.subject_covariate_names.push_back("z" + std::to_string(k + 1));
  for (int h = 0; h < H; ++h) {
    lmrasch::Cluster c;
    c.id = std::to_string(h + 1);
    c.covariates = VectorXd(p_c);
    for (int k = 0; k < p_c; ++k) c.covariates(k) = normal(rng);
    const int n = unif_int(rng, 1, max_subjects);
    for (int i = 0; i < n; ++i) {
      lmrasch::Subject s;
      s.id = std::to_string(i + 1);
      for (int t = 0; t < design.occasions(); ++t) {
        VectorXd z(p_i);
        for (int k = 0; k < p_i; ++k) z(k) = normal(rng);
        s.covariates.push_back(z);
        std::vector<std::int8_t> row;
        for (int j = 0; j < design.items(t); ++j)
          row.push_back(unif(rng, 0, 1) < missing_rate ? lmrasch::kMissing
                                                       : static_cast<std::int8_t>(unif_int(rng, 0, 1)));
        s.responses.push_back(std::move(row));
      }
      c.subjects.push_back(std::move(s));
    }
    data.clusters.push_back(std::move(c));
  }
  return data;
}

// Decreasing vector of length n starting near `start`.
inline VectorXd decreasing(Rng& rng, int n, double start, double min_gap = 0.2, double max_gap = 2.0) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = i == 0 ? start : v(i - 1) - unif(rng, min_gap, max_gap);
  return v;
}

inline Parameters random_params(Rng& rng, const ModelShape& s, double scale = 1.0) {
  Parameters p = Parameters::zeros(s);
  for (int v = 1; v < s.k2; ++v) p.theta(v) = p.theta(v - 1) + unif(rng, 0.3, 2.0) * scale;
  for (int d = 0; d < s.difficulties; ++d) p.beta(d) = normal(rng, scale) + p.theta(s.k2 - 1) / 2;
  for (int u = 0; u < s.k1 - 1; ++u) {
    p.gamma0(u) = normal(rng, scale);
    for (int k = 0; k < s.cluster_covariates; ++k) p.gamma1(u, k) = normal(rng, 0.5 * scale);
  }
  if (s.has_chain()) {
    for (int u = 0; u < s.k1 - 1; ++u) p.delta0(u) = normal(rng, scale);
    p.delta1 = decreasing(rng, s.k2 - 1, normal(rng, scale));
    for (int k = 0; k < s.subject_covariates; ++k) p.delta2(k) = normal(rng, 0.5 * scale);
    for (int t = 0; t < s.occasions - 1; ++t) {
      for (int u = 0; u < s.k1 - 1; ++u) p.eta0(t, u) = normal(rng, scale);
      for (int v0 = 0; v0 < s.k2; ++v0)
        p.eta1[t].row(v0) = decreasing(rng, s.k2 - 1, normal(rng, scale) + v0 - 1).transpose();
      for (int k = 0; k < s.subject_covariates; ++k) p.eta2(t, k) = normal(rng, 0.5 * scale);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Independent model evaluation in raw probability space

inline double o_expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> o_rho(const Parameters& p, const VectorXd& x) {
  std::vector<double> e(static_cast<std::size_t>(p.shape.k1));
  double tot = 0.0;
  for (int u = 0; u < p.shape.k1; ++u) {
    double a = 0.0;
    if (u > 0) {
      a = p.gamma0(u - 1);
      for (int k = 0; k < x.size(); ++k) a += p.gamma1(u - 1, k) * x(k);
    }
    e[u] = std::exp(a);
    tot += e[u];
  }
  for (auto& v : e) v /= tot;
  return e;
}

// P(V = v) from cumulative logits g[v-1] = logit P(V >= v), v = 1..k-1 (0-based states).
inline std::vector<double> o_cumulative(const std::vector<double>& g) {
  const std::size_t k = g.size() + 1;
  std::vector<double> ge(k + 1);
  ge[0] = 1.0;
  for (std::size_t v = 1; v < k; ++v) ge[v] = o_expit(g[v - 1]);
  ge[k] = 0.0;
  std::vector<double> out(k);
  for (std::size_t v = 0; v < k; ++v) out[v] = ge[v] - ge[v + 1];
  return out;
}

inline double dot(const VectorXd& a, const VectorXd& b) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a(i) * b(i);
  return s;
}

inline std::vector<double> o_initial(const Parameters& p, const VectorXd& z, int u) {
  const int k2 = p.shape.k2;
  if (k2 == 1) return {1.0};
  std::vector<double> g(static_cast<std::size_t>(k2 - 1));
  for (int v = 1; v < k2; ++v)
    g[v - 1] = (u > 0 ? p.delta0(u - 1) : 0.0) + p.delta1(v - 1) + dot(z, p.delta2);
  return o_cumulative(g);
}

// Row v0 of the transition matrix into occasion t (t >= 1, 0-based).
inline std::vector<double> o_transition_row(const Parameters& p, const VectorXd& z, int u, int t, int v0) {
  const int k2 = p.shape.k2;
  if (k2 == 1) return {1.0};
  std::vector<double> g(static_cast<std::size_t>(k2 - 1));
  const VectorXd eta2 = p.eta2.row(t - 1).transpose();
  for (int v = 1; v < k2; ++v)
    g[v - 1] = (u > 0 ? p.eta0(t - 1, u - 1) : 0.0) + p.eta1[t - 1](v0, v - 1) + dot(z, eta2);
  return o_cumulative(g);
}

inline double o_emission(const Parameters& p, const ItemDesign& design, const lmrasch::Subject& s, int t, int v) {
  double prob = 1.0;
  for (int j = 0; j < design.items(t); ++j) {
    const auto y = s.responses[t][j];
    if (y == lmrasch::kMissing) continue;
    const double lam = o_expit(p.theta(v) - p.beta(design.difficulty(t, j)));
    prob *= y == 1 ? lam : 1.0 - lam;
  }
  return prob;
}

// Probability of one subject's responses along a fixed latent path.
inline double o_path_prob(const Parameters& p, const ItemDesign& design, const lmrasch::Subject& s, int u,
                          const std::vector<int>& path) {
  double prob = o_initial(p, s.covariates[0], u)[path[0]] * o_emission(p, design, s, 0, path[0]);
  for (int t = 1; t < design.occasions(); ++t)
    prob *= o_transition_row(p, s.covariates[t], u, t, path[t - 1])[path[t]] *
            o_emission(p, design, s, t, path[t]);
  return prob;
}

struct EnumPosterior {
  double likelihood = 0.0;
  std::vector<double> w;                           // [u]
  std::vector<MatrixXd> z1;                        // [i] k2 x T
  std::vector<std::vector<MatrixXd>> z2;           // [i][t-1]
};

// Exhaustive enumeration of (u, every subject's full path) for one cluster.
inline EnumPosterior o_enumerate_cluster(const Parameters& p, const ItemDesign& design, const lmrasch::Cluster& c) {
  const int k1 = p.shape.k1, k2 = p.shape.k2, T = design.occasions();
  const int n = static_cast<int>(c.subjects.size());
  EnumPosterior out;
  out.w.assign(static_cast<std::size_t>(k1), 0.0);
  out.z1.assign(static_cast<std::size_t>(n), MatrixXd::Zero(k2, T));
  out.z2.assign(static_cast<std::size_t>(n), std::vector<MatrixXd>(static_cast<std::size_t>(T - 1), MatrixXd::Zero(k2, k2)));
  const auto rho = o_rho(p, c.covariates);
  const int digits = n * T;
  std::vector<int> states(static_cast<std::size_t>(digits), 0);
  for (int u = 0; u < k1; ++u) {
    std::fill(states.begin(), states.end(), 0);
    while (true) {
      double joint = rho[u];
      for (int i = 0; i < n; ++i) {
        std::vector<int> path(states.begin() + i * T, states.begin() + (i + 1) * T);
        joint *= o_path_prob(p, design, c.subjects[i], u, path);
      }
      out.likelihood += joint;
      out.w[u] += joint;
      for (int i = 0; i < n; ++i)
        for (int t = 0; t < T; ++t) {
          out.z1[i](states[i * T + t], t) += joint;
          if (t > 0) out.z2[i][t - 1](states[i * T + t - 1], states[i * T + t]) += joint;
        }
      int pos = 0;
      while (pos < digits && ++states[pos] == k2) states[pos++] = 0;
      if (pos == digits) break;
    }
  }
  for (auto& v : out.w) v /= out.likelihood;
  for (int i = 0; i < n; ++i) {
    out.z1[i] /= out.likelihood;
    for (auto& m : out.z2[i]) m /= out.likelihood;
  }
  return out;
}

inline double o_total_loglik(const Parameters& p, const ItemDesign& design, const Dataset& data) {
  double total = 0.0;
  for (const auto& c : data.clusters) total += std::log(o_enumerate_cluster(p, design, c).likelihood);
  return total;
}

// ---------------------------------------------------------------------------
// Finite differences and an independent maximizer

using Objective = std::function<double(const VectorXd&)>;

inline VectorXd fd_gradient(const Objective& f, const VectorXd& x, double h = 1e-5) {
  VectorXd g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline MatrixXd fd_hessian(const std::function<VectorXd(const VectorXd&)>& grad, const VectorXd& x,
                           double h = 1e-5) {
  MatrixXd H(x.size(), x.size());
  for (int i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    H.col(i) = (grad(a) - grad(b)) / (2 * h);
  }
  return 0.5 * (H + H.transpose());
}

// Relative error with an absolute floor for entries near zero.
inline double rel_error(const VectorXd& a, const VectorXd& b, double floor = 1e-3) {
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a(i) - b(i)) / std::max({std::abs(a(i)), std::abs(b(i)), floor}));
  return worst;
}

// Damped Newton using only function values (finite-difference derivatives).
inline VectorXd fd_maximize(const Objective& f, VectorXd x, int max_iter = 200) {
  auto grad = [&](const VectorXd& y) { return fd_gradient(f, y, 1e-5); };
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd g = grad(x);
    if (g.cwiseAbs().maxCoeff() < 1e-9) break;
    MatrixXd H = fd_hessian(grad, x, 1e-4);
    VectorXd dir;
    for (double mu = 0.0;; mu = mu == 0.0 ? 1e-6 : mu * 10) {
      Eigen::LLT<MatrixXd> llt(-H + mu * MatrixXd::Identity(x.size(), x.size()));
      if (llt.info() == Eigen::Success) {
        dir = llt.solve(g);
        break;
      }
    }
    const double f0 = f(x);
    double step = 1.0;
    bool moved = false;
    for (int k = 0; k < 50; ++k, step *= 0.5) {
      const VectorXd trial = x + step * dir;
      const double ft = f(trial);
      if (std::isfinite(ft) && ft >= f0) {
        x = trial;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return x;
}

}  // namespace lmtest

#pragma once

#include <vector>

#include "lmrasch/likelihood.hpp"

// E-step quantities: posterior cluster classes w(u), single-occasion state
// posteriors z(v) and two-slice posteriors z(v0, v1), both conditional on
// the cluster class and mixed over it.

namespace lmrasch {

// Scaled backward variables; unscaled log r_t = log_r.col(t) + log_scale(t).
struct BackwardState {
  MatrixXd log_r;      // k2 x T
  VectorXd log_scale;  // T
};

inline BackwardState backward_pass(const ChainModel& chain, const MatrixXd& log_emis) {
  const auto k = log_emis.rows();
  const auto T = log_emis.cols();
  BackwardState b{MatrixXd(k, T), VectorXd(T)};
  b.log_r.col(T - 1).setZero();
  b.log_scale(T - 1) = 0.0;
  double acc = 0.0;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    VectorXd r = detail::log_matvec(chain.log_trans[t], log_emis.col(t + 1) + b.log_r.col(t + 1));
    acc += detail::log_normalize(r);
    b.log_r.col(t) = r;
    b.log_scale(t) = acc;
  }
  return b;
}

struct SubjectPosterior {
  std::vector<MatrixXd> z1_given_u;               // [u] k2 x T
  std::vector<std::vector<MatrixXd>> z2_given_u;  // [u][t-1] k2 x k2
  MatrixXd z1;                                    // k2 x T, mixed over u
  std::vector<MatrixXd> z2;                       // [t-1] k2 x k2, mixed over u
};

struct ClusterPosterior {
  VectorXd w;  // k1
  std::vector<SubjectPosterior> subjects;
  double loglik = 0.0;
};

struct PosteriorQuantities {
  std::vector<ClusterPosterior> clusters;
  double loglik = 0.0;  // total log-likelihood at the parameters used
};

struct ConditionalPosterior {
  MatrixXd z1;               // k2 x T
  std::vector<MatrixXd> z2;  // T-1 blocks of k2 x k2
  double loglik = 0.0;       // log p(Y_hi | U_h = u)
};

namespace detail {

inline ConditionalPosterior conditional_posterior(const ChainModel& chain, const MatrixXd& log_emis) {
  const auto k = log_emis.rows();
  const auto T = log_emis.cols();
  const ForwardState f = forward_pass(chain, log_emis);
  const BackwardState b = backward_pass(chain, log_emis);
  ConditionalPosterior out;
  out.loglik = f.loglik();
  out.z1.resize(k, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    VectorXd lz = f.log_q.col(t) + b.log_r.col(t);
    log_normalize(lz);
    out.z1.col(t) = exp_entries(lz);
  }
  for (Eigen::Index t = 1; t < T; ++t) {
    MatrixXd lz(k, k);
    for (Eigen::Index v0 = 0; v0 < k; ++v0)
      for (Eigen::Index v1 = 0; v1 < k; ++v1)
        lz(v0, v1) = f.log_q(v0, t - 1) + chain.log_trans[t - 1](v0, v1) + log_emis(v1, t) +
                     b.log_r(v1, t);
    const double s = numeric::log_sum_exp(std::span<const double>(lz.data(), lz.size()));
    out.z2.push_back(exp_entries((lz.array() - s).matrix()));
  }
  return out;
}

}  // namespace detail

// Posterior state probabilities of one subject given U_h = u.
inline ConditionalPosterior subject_posteriors_given_u(const Parameters& p, const ItemDesign& design,
                                                       const Subject& s, int u) {
  const EmissionTable table(p);
  return detail::conditional_posterior(ChainModel::of(p, s, u), subject_log_emissions(table, design, s));
}

// p(Y_hi | U_h = u) recovered from the backward pass alone.
inline double subject_loglik_backward(const Parameters& p, const ItemDesign& design,
                                      const Subject& s, int u) {
  const EmissionTable table(p);
  const ChainModel chain = ChainModel::of(p, s, u);
  const MatrixXd emis = subject_log_emissions(table, design, s);
  const BackwardState b = backward_pass(chain, emis);
  const VectorXd terms = chain.log_init + emis.col(0) + b.log_r.col(0);
  return numeric::log_sum_exp(std::span<const double>(terms.data(), terms.size())) + b.log_scale(0);
}

inline VectorXd softmax_from_logs(VectorXd log_v) {
  detail::log_normalize(log_v);
  return exp_entries(log_v);
}

inline ClusterPosterior cluster_posterior(const Parameters& p, const EmissionTable& table,
                                          const ItemDesign& design, const Cluster& c) {
  const int k1 = p.shape.k1;
  ClusterPosterior out;
  VectorXd log_w = log_cluster_class_probs(p, c.covariates);
  out.subjects.resize(c.subjects.size());
  for (std::size_t i = 0; i < c.subjects.size(); ++i) {
    const Subject& s = c.subjects[i];
    const MatrixXd emis = subject_log_emissions(table, design, s);
    auto& sp = out.subjects[i];
    for (int u = 0; u < k1; ++u) {
      ConditionalPosterior cp = detail::conditional_posterior(ChainModel::of(p, s, u), emis);
      log_w(u) += cp.loglik;
      sp.z1_given_u.push_back(std::move(cp.z1));
      sp.z2_given_u.push_back(std::move(cp.z2));
    }
  }
  out.loglik = numeric::log_sum_exp(std::span<const double>(log_w.data(), log_w.size()));
  out.w = softmax_from_logs(log_w);
  for (auto& sp : out.subjects) {
    sp.z1 = MatrixXd::Zero(sp.z1_given_u[0].rows(), sp.z1_given_u[0].cols());
    sp.z2.assign(sp.z2_given_u[0].size(), MatrixXd::Zero(p.shape.k2, p.shape.k2));
    for (int u = 0; u < k1; ++u) {
      sp.z1 += out.w(u) * sp.z1_given_u[u];
      for (std::size_t t = 0; t < sp.z2.size(); ++t) sp.z2[t] += out.w(u) * sp.z2_given_u[u][t];
    }
  }
  return out;
}

// Posterior cluster-class probabilities w_h(u).
inline VectorXd cluster_posterior_w(const Parameters& p, const ItemDesign& design, const Cluster& c) {
  const VectorXd parts = cluster_class_logliks(p, EmissionTable(p), design, c);
  return softmax_from_logs(parts);
}

inline PosteriorQuantities estep(const Parameters& p, const ItemDesign& design, const Dataset& data,
                                 int threads = 1) {
  const EmissionTable table(p);
  PosteriorQuantities out;
  out.clusters.resize(data.clusters.size());
  parallel_for(data.clusters.size(), threads, [&](std::size_t h) {
    out.clusters[h] = cluster_posterior(p, table, design, data.clusters[h]);
  });
  for (const auto& c : out.clusters) out.loglik += c.loglik;
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

struct Decoding {
  std::vector<int> cluster_class;                     // [h]
  std::vector<std::vector<std::vector<int>>> states;  // [h][i][t]
};

// First index of the maximum, so ties go to the lower label.
template <class Vec>
int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

inline Decoding decode(const PosteriorQuantities& post) {
  Decoding d;
  for (const auto& c : post.clusters) {
    d.cluster_class.push_back(argmax_lowest(c.w));
    auto& rows = d.states.emplace_back();
    for (const auto& s : c.subjects) {
      auto& path = rows.emplace_back();
      for (Eigen::Index t = 0; t < s.z1.cols(); ++t) path.push_back(argmax_lowest(s.z1.col(t)));
    }
  }
  return d;
}

inline Decoding decode(const Parameters& p, const ItemDesign& design, const Dataset& data,
                       int threads = 1) {
  return decode(estep(p, design, data, threads));
}

}  // namespace lmrasch

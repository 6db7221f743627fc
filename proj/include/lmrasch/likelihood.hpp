#pragma once

#include <span>
#include <vector>

#include "lmrasch/model_params.hpp"
#include "lmrasch/numeric.hpp"
#include "lmrasch/parallel.hpp"

// Forward recursion and manifest log-likelihood. Everything runs in log space
// with per-occasion renormalisation so that long response vectors (100+
// items per occasion) never underflow.

namespace lmrasch {

// log lambda and log(1 - lambda) for every (state, difficulty) pair.
struct EmissionTable {
  MatrixXd log_correct;  // k2 x D
  MatrixXd log_wrong;    // k2 x D

  explicit EmissionTable(const Parameters& p)
      : log_correct(p.shape.k2, p.shape.difficulties), log_wrong(p.shape.k2, p.shape.difficulties) {
    for (int v = 0; v < p.shape.k2; ++v)
      for (int d = 0; d < p.shape.difficulties; ++d) {
        const double x = p.theta(v) - p.beta(d);
        log_correct(v, d) = numeric::log_expit(x);
        log_wrong(v, d) = numeric::log_expit(-x);
      }
  }
};

// log p(Y^(t) = y | V = v) for each state; missing responses are skipped.
inline VectorXd emission_logprobs(const EmissionTable& table, const ItemDesign& design,
                                  std::span<const std::int8_t> y, int t) {
  if (static_cast<int>(y.size()) != design.items(t))
    throw InvalidArgument("response row does not match the design at this occasion");
  VectorXd out = VectorXd::Zero(table.log_correct.rows());
  for (int j = 0; j < design.items(t); ++j) {
    if (y[j] == kMissing) continue;
    const int d = design.difficulty(t, j);
    out += (y[j] == 1 ? table.log_correct.col(d) : table.log_wrong.col(d));
  }
  return out;
}

inline VectorXd emission_logprobs(const Parameters& p, const ItemDesign& design,
                                  std::span<const std::int8_t> y, int t) {
  return emission_logprobs(EmissionTable(p), design, y, t);
}

// k2 x T matrix of emission log-probabilities for one subject.
inline MatrixXd subject_log_emissions(const EmissionTable& table, const ItemDesign& design,
                                      const Subject& s) {
  MatrixXd out(table.log_correct.rows(), design.occasions());
  for (int t = 0; t < design.occasions(); ++t)
    out.col(t) = emission_logprobs(table, design, s.responses[t], t);
  return out;
}

// Initial distribution and transition matrices of one subject's chain given
// the cluster class.
struct ChainModel {
  VectorXd log_init;               // k2
  std::vector<MatrixXd> log_trans;  // entry t-1 is the transition into occasion t

  static ChainModel of(const Parameters& p, const Subject& s, int u) {
    ChainModel c;
    c.log_init = log_initial_probs(p, s.covariates[0], u);
    for (int t = 1; t < p.shape.occasions; ++t)
      c.log_trans.push_back(log_transition_matrix(p, s.covariates[t], u, t));
    return c;
  }
};

// Scaled forward variables: log_q.col(t) is normalised to log-sum 0 and
// log_scale(t) is the log-sum of the unscaled vector, so the unscaled
// log q_t = log_q.col(t) + log_scale(t).
struct ForwardState {
  MatrixXd log_q;      // k2 x T
  VectorXd log_scale;  // T

  double loglik() const { return log_scale(log_scale.size() - 1); }
};

namespace detail {

// log of (M' a) where M holds log entries, a holds log entries.
inline VectorXd log_matvec_transposed(const MatrixXd& log_m, const VectorXd& log_a) {
  const auto k = log_m.cols();
  VectorXd out(k);
  std::vector<double> terms(static_cast<std::size_t>(log_m.rows()));
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index r = 0; r < log_m.rows(); ++r) terms[r] = log_a(r) + log_m(r, c);
    out(c) = numeric::log_sum_exp(terms);
  }
  return out;
}

inline VectorXd log_matvec(const MatrixXd& log_m, const VectorXd& log_a) {
  const auto k = log_m.rows();
  VectorXd out(k);
  std::vector<double> terms(static_cast<std::size_t>(log_m.cols()));
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < log_m.cols(); ++c) terms[c] = log_m(r, c) + log_a(c);
    out(r) = numeric::log_sum_exp(terms);
  }
  return out;
}

inline double log_normalize(VectorXd& log_v) {
  const double s = numeric::log_sum_exp(std::span<const double>(log_v.data(), log_v.size()));
  if (std::isfinite(s)) log_v.array() -= s;
  return s;
}

}  // namespace detail

inline ForwardState forward_pass(const ChainModel& chain, const MatrixXd& log_emis) {
  const auto T = log_emis.cols();
  ForwardState f{MatrixXd(log_emis.rows(), T), VectorXd(T)};
  VectorXd a = chain.log_init + log_emis.col(0);
  double acc = detail::log_normalize(a);
  f.log_q.col(0) = a;
  f.log_scale(0) = acc;
  for (Eigen::Index t = 1; t < T; ++t) {
    a = detail::log_matvec_transposed(chain.log_trans[t - 1], f.log_q.col(t - 1)) + log_emis.col(t);
    acc += detail::log_normalize(a);
    f.log_q.col(t) = a;
    f.log_scale(t) = acc;
  }
  return f;
}

// log p(Y_hi = y_hi | U_h = u)
inline double subject_loglik_given_u(const Parameters& p, const ItemDesign& design,
                                     const Subject& s, int u) {
  const EmissionTable table(p);
  return forward_pass(ChainModel::of(p, s, u), subject_log_emissions(table, design, s)).loglik();
}

// Per-class pieces of one cluster's likelihood: entry u is
// log rho_h(u) + sum_i log p(Y_hi | U_h = u).
inline VectorXd cluster_class_logliks(const Parameters& p, const EmissionTable& table,
                                      const ItemDesign& design, const Cluster& c) {
  VectorXd out = log_cluster_class_probs(p, c.covariates);
  for (const auto& s : c.subjects) {
    const MatrixXd emis = subject_log_emissions(table, design, s);
    for (int u = 0; u < p.shape.k1; ++u)
      out(u) += forward_pass(ChainModel::of(p, s, u), emis).loglik();
  }
  return out;
}

inline double cluster_loglik(const Parameters& p, const ItemDesign& design, const Cluster& c) {
  const VectorXd parts = cluster_class_logliks(p, EmissionTable(p), design, c);
  return numeric::log_sum_exp(std::span<const double>(parts.data(), parts.size()));
}

// Sum of cluster log-likelihoods, reduced in cluster order for any thread count.
inline double total_loglik(const Parameters& p, const ItemDesign& design, const Dataset& data,
                           int threads = 1) {
  const EmissionTable table(p);
  std::vector<double> per_cluster(data.clusters.size());
  parallel_for(data.clusters.size(), threads, [&](std::size_t h) {
    const VectorXd parts = cluster_class_logliks(p, table, design, data.clusters[h]);
    per_cluster[h] = numeric::log_sum_exp(std::span<const double>(parts.data(), parts.size()));
  });
  double total = 0.0;
  for (double x : per_cluster) total += x;
  return total;
}

}  // namespace lmrasch

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmrasch/errors.hpp"
#include "lmrasch/numeric.hpp"

// Parameter containers and link functions of the multilevel latent Markov
// Rasch model. All indices in the C++ API are 0-based: class u = 0 and state
// v = 0 are the reference levels, occasion t = 0 is the first occasion.
// Human-facing names (files, reports) use the 1-based convention.

namespace lmrasch {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Item design

class ItemDesign {
 public:
  ItemDesign() = default;

  // link[t][j] is the 0-based difficulty index of item j at occasion t.
  explicit ItemDesign(std::vector<std::vector<int>> link) : link_(std::move(link)) {
    validate();
  }

  int occasions() const { return static_cast<int>(link_.size()); }
  int items(int t) const { return static_cast<int>(link_[t].size()); }
  int difficulties() const { return n_difficulties_; }
  int difficulty(int t, int j) const { return link_[t][j]; }
  const std::vector<std::vector<int>>& links() const { return link_; }

  bool operator==(const ItemDesign&) const = default;

 private:
  void validate() {
    if (link_.empty()) throw InvalidDesign("item design has no occasions");
    int max_d = -1;
    for (std::size_t t = 0; t < link_.size(); ++t) {
      if (link_[t].empty())
        throw InvalidDesign("occasion " + std::to_string(t + 1) + " has no items");
      for (int d : link_[t]) {
        if (d < 0) throw InvalidDesign("negative difficulty index");
        max_d = std::max(max_d, d);
      }
    }
    std::vector<bool> used(static_cast<std::size_t>(max_d + 1), false);
    for (const auto& row : link_)
      for (int d : row) used[static_cast<std::size_t>(d)] = true;
    for (std::size_t d = 0; d < used.size(); ++d)
      if (!used[d])
        throw InvalidDesign("difficulty id " + std::to_string(d + 1) +
                            " is not referenced by any item");
    n_difficulties_ = max_d + 1;
  }

  std::vector<std::vector<int>> link_;
  int n_difficulties_ = 0;
};

// ---------------------------------------------------------------------------
// Data

inline constexpr std::int8_t kMissing = -1;

struct Subject {
  std::string id;
  // responses[t][j] in {0, 1, kMissing}
  std::vector<std::vector<std::int8_t>> responses;
  // covariates[t] has length p_i
  std::vector<VectorXd> covariates;

  bool operator==(const Subject&) const = default;
};

struct Cluster {
  std::string id;
  VectorXd covariates;  // length p_c
  std::vector<Subject> subjects;

  bool operator==(const Cluster&) const = default;
};

struct Dataset {
  std::vector<std::string> cluster_covariate_names;
  std::vector<std::string> subject_covariate_names;
  std::vector<Cluster> clusters;

  int cluster_covariates() const { return static_cast<int>(cluster_covariate_names.size()); }
  int subject_covariates() const { return static_cast<int>(subject_covariate_names.size()); }

  std::size_t subject_count() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.subjects.size();
    return n;
  }

  bool operator==(const Dataset&) const = default;

  void validate(const ItemDesign& design) const {
    const auto pc = cluster_covariates();
    const auto pi = subject_covariates();
    const int T = design.occasions();
    for (const auto& c : clusters) {
      if (c.covariates.size() != pc)
        throw InvalidArgument("cluster " + c.id + ": expected " + std::to_string(pc) +
                              " covariates");
      for (const auto& s : c.subjects) {
        if (static_cast<int>(s.responses.size()) != T ||
            static_cast<int>(s.covariates.size()) != T)
          throw InvalidArgument("subject " + s.id + ": occasion count mismatch");
        for (int t = 0; t < T; ++t) {
          if (static_cast<int>(s.responses[t].size()) != design.items(t))
            throw InvalidArgument("subject " + s.id + ": response row length mismatch at occasion " +
                                  std::to_string(t + 1));
          for (auto y : s.responses[t])
            if (y != 0 && y != 1 && y != kMissing)
              throw InvalidArgument("subject " + s.id + ": response must be 0, 1 or missing");
          if (s.covariates[t].size() != pi)
            throw InvalidArgument("subject " + s.id + ": expected " + std::to_string(pi) +
                                  " covariates");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct ModelShape {
  int k1 = 1;  // cluster-level classes
  int k2 = 1;  // individual-level states
  int occasions = 1;
  int difficulties = 1;
  int cluster_covariates = 0;
  int subject_covariates = 0;

  bool has_classes() const { return k1 > 1; }
  bool has_chain() const { return k2 > 1; }
  bool operator==(const ModelShape&) const = default;

  static ModelShape of(const ItemDesign& design, const Dataset& data, int k1, int k2) {
    if (k1 < 1 || k2 < 1) throw InvalidArgument("k1 and k2 must be at least 1");
    return {k1, k2, design.occasions(), design.difficulties(), data.cluster_covariates(),
            data.subject_covariates()};
  }
};

struct Parameters {
  ModelShape shape;
  VectorXd theta;   // k2; theta(0) == 0, non-decreasing
  VectorXd beta;    // D
  VectorXd gamma0;  // k1-1, class u stored at u-1
  MatrixXd gamma1;  // (k1-1) x p_c
  VectorXd delta0;  // k1-1 (empty when k2 == 1)
  VectorXd delta1;  // k2-1, state v stored at v-1, decreasing
  VectorXd delta2;  // p_i (empty when k2 == 1)
  MatrixXd eta0;    // (T-1) x (k1-1), row t-1 holds occasion t
  std::vector<MatrixXd> eta1;  // T-1 blocks of k2 x (k2-1), rows decreasing
  MatrixXd eta2;    // (T-1) x p_i

  static Parameters zeros(const ModelShape& s) {
    Parameters p;
    p.shape = s;
    const int c = s.k1 - 1;
    const int chain = s.has_chain() ? 1 : 0;
    p.theta = VectorXd::Zero(s.k2);
    p.beta = VectorXd::Zero(s.difficulties);
    p.gamma0 = VectorXd::Zero(c);
    p.gamma1 = MatrixXd::Zero(c, s.cluster_covariates);
    p.delta0 = VectorXd::Zero(chain * c);
    p.delta1 = VectorXd::Zero(s.k2 - 1);
    p.delta2 = VectorXd::Zero(chain * s.subject_covariates);
    p.eta0 = MatrixXd::Zero(chain * (s.occasions - 1), c);
    if (s.has_chain())
      p.eta1.assign(static_cast<std::size_t>(s.occasions - 1), MatrixXd::Zero(s.k2, s.k2 - 1));
    p.eta2 = MatrixXd::Zero(chain * (s.occasions - 1), s.subject_covariates);
    return p;
  }

  // Throws ConstraintViolation when the identifiability or ordering
  // constraints are broken.
  void check_constraints() const {
    if (theta.size() != shape.k2 || beta.size() != shape.difficulties)
      throw InvalidArgument("parameter block sizes do not match model shape");
    if (theta(0) != 0.0) throw ConstraintViolation("theta_1 must be 0");
    for (int v = 1; v < shape.k2; ++v)
      if (theta(v) < theta(v - 1)) throw ConstraintViolation("abilities must be non-decreasing");
    for (int v = 1; v < delta1.size(); ++v)
      if (delta1(v) > delta1(v - 1))
        throw ConstraintViolation("initial cut intercepts must be decreasing");
    for (const auto& m : eta1)
      for (int r = 0; r < m.rows(); ++r)
        for (int v = 1; v < m.cols(); ++v)
          if (m(r, v) > m(r, v - 1))
            throw ConstraintViolation("transition cut intercepts must be decreasing");
  }
};

// ---------------------------------------------------------------------------
// Link functions

// Entry-wise exp that maps -inf to exactly 0 (Eigen's vectorised exp
// returns a denormal there).
template <class Derived>
auto exp_entries(const Eigen::MatrixBase<Derived>& m) {
  return m.unaryExpr([](double v) { return std::exp(v); });
}

// P(correct | ability, difficulty) under the Rasch model.
inline double rasch_prob(double theta, double beta) {
  if (!std::isfinite(theta) || !std::isfinite(beta))
    throw InvalidArgument("rasch_prob: non-finite input");
  return numeric::expit(theta - beta);
}

inline VectorXd log_cluster_class_probs(const Parameters& p, const VectorXd& x) {
  if (x.size() != p.shape.cluster_covariates)
    throw InvalidArgument("cluster covariate vector has wrong length");
  VectorXd eta(p.shape.k1);
  eta(0) = 0.0;
  for (int u = 1; u < p.shape.k1; ++u)
    eta(u) = p.gamma0(u - 1) + (p.shape.cluster_covariates > 0 ? p.gamma1.row(u - 1).dot(x) : 0.0);
  const double lse = numeric::log_sum_exp(std::span<const double>(eta.data(), eta.size()));
  return eta.array() - lse;
}

// Cluster-class prior rho_h(u), class 0 is the reference.
inline VectorXd cluster_class_probs(const Parameters& p, const VectorXd& x) {
  return exp_entries(log_cluster_class_probs(p, x));
}

// Log category probabilities from cumulative logits g = (g_2, ..., g_k),
// where g_v = logit P(V >= v). g must be non-increasing.
inline VectorXd log_probs_from_global_logits(std::span<const double> g) {
  const auto k = static_cast<int>(g.size()) + 1;
  for (double x : g)
    if (!std::isfinite(x)) throw InvalidArgument("global logits must be finite");
  for (int v = 1; v + 1 < k; ++v)
    if (g[v] > g[v - 1])
      throw ConstraintViolation("global logits must be decreasing in the category index");
  VectorXd out(k);
  if (k == 1) {
    out(0) = 0.0;
    return out;
  }
  out(0) = numeric::log_expit(-g[0]);
  for (int v = 1; v + 1 < k; ++v)
    out(v) = g[v - 1] == g[v] ? numeric::kNegInf : numeric::log_expit_diff(g[v - 1], g[v]);
  out(k - 1) = numeric::log_expit(g[k - 2]);
  return out;
}

inline VectorXd invert_global_logits(std::span<const double> g) {
  return exp_entries(log_probs_from_global_logits(g));
}

namespace detail {

inline double covariate_term(const VectorXd& coef, const VectorXd& z) {
  if (coef.size() == 0) return 0.0;
  if (coef.size() != z.size()) throw InvalidArgument("individual covariate vector has wrong length");
  return coef.dot(z);
}

}  // namespace detail

// log pi(. | u) for the first occasion.
inline VectorXd log_initial_probs(const Parameters& p, const VectorXd& z, int u) {
  const auto& s = p.shape;
  if (u < 0 || u >= s.k1) throw InvalidArgument("class index out of range");
  if (!s.has_chain()) return VectorXd::Zero(1);
  const double base = (u > 0 ? p.delta0(u - 1) : 0.0) + detail::covariate_term(p.delta2, z);
  std::vector<double> g(static_cast<std::size_t>(s.k2 - 1));
  for (int v = 1; v < s.k2; ++v) g[v - 1] = base + p.delta1(v - 1);
  return log_probs_from_global_logits(g);
}

inline VectorXd initial_probs(const Parameters& p, const VectorXd& z, int u) {
  return exp_entries(log_initial_probs(p, z, u));
}

// Row v0 holds log pi^(t)(. | u, v0); t >= 1.
inline MatrixXd log_transition_matrix(const Parameters& p, const VectorXd& z, int u, int t) {
  const auto& s = p.shape;
  if (u < 0 || u >= s.k1) throw InvalidArgument("class index out of range");
  if (t < 1 || t >= s.occasions) throw InvalidArgument("transition occasion out of range");
  if (!s.has_chain()) return MatrixXd::Zero(1, 1);
  if (z.size() != s.subject_covariates)
    throw InvalidArgument("individual covariate vector has wrong length");
  const double base = (u > 0 ? p.eta0(t - 1, u - 1) : 0.0) +
                      (s.subject_covariates > 0 ? p.eta2.row(t - 1).dot(z) : 0.0);
  const MatrixXd& cut = p.eta1[static_cast<std::size_t>(t - 1)];
  MatrixXd out(s.k2, s.k2);
  std::vector<double> g(static_cast<std::size_t>(s.k2 - 1));
  for (int v0 = 0; v0 < s.k2; ++v0) {
    for (int v1 = 1; v1 < s.k2; ++v1) g[v1 - 1] = base + cut(v0, v1 - 1);
    out.row(v0) = log_probs_from_global_logits(g).transpose();
  }
  return out;
}

inline MatrixXd transition_matrix(const Parameters& p, const VectorXd& z, int u, int t) {
  return exp_entries(log_transition_matrix(p, z, u, t));
}

// Number of free parameters. The initial and transition blocks vanish for a
// single state, and the class blocks vanish for a single cluster class.
inline long count_parameters(int k1, int k2, int D, int p_c, int p_i, int T) {
  long r = D + (k2 - 1) + static_cast<long>(k1 - 1) * (1 + p_c);
  if (k2 > 1) {
    r += (k1 - 1) + (k2 - 1) + p_i;
    r += static_cast<long>(T - 1) * ((k1 - 1) + static_cast<long>(k2) * (k2 - 1) + p_i);
  }
  return r;
}

inline long count_parameters(const ModelShape& s) {
  return count_parameters(s.k1, s.k2, s.difficulties, s.cluster_covariates, s.subject_covariates,
                          s.occasions);
}

}  // namespace lmrasch

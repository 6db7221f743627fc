#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lmrasch/newton.hpp"
#include "lmrasch/param_ref.hpp"
#include "lmrasch/posterior.hpp"

// M-step components. Each one maximises its own additive piece of the
// expected complete-data log-likelihood over an unconstrained working vector:
// ordered quantities (abilities, cut intercepts) are stored as a leading
// value plus log-gaps, so the ordering can never be violated.

namespace lmrasch {

// |coefficient| cap that keeps quasi-separated fits finite.
inline constexpr double kCoefBound = 50.0;
inline constexpr double kLogGapLower = -30.0;
inline constexpr double kLogGapUpper = 4.605170185988092;  // log(100)

namespace detail {

inline double log_gap(double hi, double lo) {
  const double gap = hi - lo;
  return gap > 0.0 ? std::clamp(std::log(gap), kLogGapLower, kLogGapUpper) : kLogGapLower;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rasch component: abilities and difficulties.

class RaschProblem {
 public:
  // trials(v, d): expected number of observed responses to difficulty d by
  // subjects in state v; successes(v, d): the correct ones among them.
  RaschProblem(MatrixXd trials, MatrixXd successes)
      : trials_(std::move(trials)), successes_(std::move(successes)) {}

  RaschProblem(const PosteriorQuantities& post, const ItemDesign& design, const Dataset& data,
               int k2)
      : trials_(MatrixXd::Zero(k2, design.difficulties())),
        successes_(MatrixXd::Zero(k2, design.difficulties())) {
    for (std::size_t h = 0; h < data.clusters.size(); ++h)
      for (std::size_t i = 0; i < data.clusters[h].subjects.size(); ++i) {
        const Subject& s = data.clusters[h].subjects[i];
        const MatrixXd& z = post.clusters[h].subjects[i].z1;
        for (int t = 0; t < design.occasions(); ++t)
          for (int j = 0; j < design.items(t); ++j) {
            const auto y = s.responses[t][j];
            if (y == kMissing) continue;
            const int d = design.difficulty(t, j);
            trials_.col(d) += z.col(t);
            if (y == 1) successes_.col(d) += z.col(t);
          }
      }
  }

  int states() const { return static_cast<int>(trials_.rows()); }
  int difficulties() const { return static_cast<int>(trials_.cols()); }
  Eigen::Index dim() const { return states() - 1 + difficulties(); }

  VectorXd lower() const {
    VectorXd lo = VectorXd::Constant(dim(), -kCoefBound);
    lo.head(states() - 1).setConstant(kLogGapLower);
    return lo;
  }
  VectorXd upper() const {
    VectorXd hi = VectorXd::Constant(dim(), kCoefBound);
    hi.head(states() - 1).setConstant(kLogGapUpper);
    return hi;
  }

  VectorXd pack(const Parameters& p) const {
    VectorXd x(dim());
    for (int v = 1; v < states(); ++v) x(v - 1) = detail::log_gap(p.theta(v), p.theta(v - 1));
    x.tail(difficulties()) = p.beta;
    return x;
  }

  void unpack(const VectorXd& x, Parameters& p) const {
    p.theta = abilities(x);
    p.beta = x.tail(difficulties());
  }

  std::optional<Eigen::Index> working_index(const ParamRef& r) const {
    if (r.block == Block::Beta) return states() - 1 + r.index[0];
    if (r.block == Block::Theta)
      throw InvalidArgument("abilities cannot be pinned: " + name(r));
    return std::nullopt;
  }

  double value(const VectorXd& x) const {
    const VectorXd theta = abilities(x);
    double f = 0.0;
    for (int d = 0; d < difficulties(); ++d)
      for (int v = 0; v < states(); ++v) {
        const double e = theta(v) - x(states() - 1 + d);
        f += successes_(v, d) * e - trials_(v, d) * numeric::log1pexp(e);
      }
    return f;
  }

  double evaluate(const VectorXd& x, VectorXd& grad, MatrixXd& hess) const {
    const int k = states();
    const int D = difficulties();
    const int m = k - 1;
    const VectorXd theta = abilities(x);
    VectorXd g_theta = VectorXd::Zero(k);
    VectorXd h_theta = VectorXd::Zero(k);
    VectorXd g_beta = VectorXd::Zero(D);
    VectorXd h_beta = VectorXd::Zero(D);
    MatrixXd h_cross = MatrixXd::Zero(k, D);
    double f = 0.0;
    for (int d = 0; d < D; ++d)
      for (int v = 0; v < k; ++v) {
        const double e = theta(v) - x(m + d);
        const double lam = numeric::expit(e);
        const double n = trials_(v, d);
        f += successes_(v, d) * e - n * numeric::log1pexp(e);
        const double r = successes_(v, d) - n * lam;
        const double c = n * lam * (1.0 - lam);
        g_theta(v) += r;
        g_beta(d) -= r;
        h_theta(v) -= c;
        h_beta(d) -= c;
        h_cross(v, d) += c;
      }
    // theta_v = sum_{w < v} exp(x_w)
    MatrixXd jac = MatrixXd::Zero(k, m);
    for (int w = 0; w < m; ++w)
      for (int v = w + 1; v < k; ++v) jac(v, w) = std::exp(x(w));

    grad.resize(dim());
    hess.setZero(dim(), dim());
    grad.head(m) = jac.transpose() * g_theta;
    grad.tail(D) = g_beta;
    hess.topLeftCorner(m, m) = jac.transpose() * h_theta.asDiagonal() * jac;
    for (int w = 0; w < m; ++w) hess(w, w) += grad(w);  // second derivative of exp
    hess.topRightCorner(m, D) = jac.transpose() * h_cross;
    hess.bottomLeftCorner(D, m) = hess.topRightCorner(m, D).transpose();
    hess.bottomRightCorner(D, D).diagonal() = h_beta;
    return f;
  }

 private:
  VectorXd abilities(const VectorXd& x) const {
    VectorXd theta(states());
    theta(0) = 0.0;
    for (int v = 1; v < states(); ++v) theta(v) = theta(v - 1) + std::exp(x(v - 1));
    return theta;
  }

  MatrixXd trials_;
  MatrixXd successes_;
};

// ---------------------------------------------------------------------------
// Cluster-class multinomial logit.

class ClusterLogitProblem {
 public:
  // design: H x (1 + p_c) with a leading column of ones; weights: H x k1.
  ClusterLogitProblem(MatrixXd design, MatrixXd weights)
      : x_(std::move(design)), w_(std::move(weights)) {}

  ClusterLogitProblem(const PosteriorQuantities& post, const Dataset& data, int k1)
      : x_(static_cast<Eigen::Index>(data.clusters.size()), 1 + data.cluster_covariates()),
        w_(static_cast<Eigen::Index>(data.clusters.size()), k1) {
    for (std::size_t h = 0; h < data.clusters.size(); ++h) {
      x_(h, 0) = 1.0;
      x_.row(h).tail(data.cluster_covariates()) = data.clusters[h].covariates.transpose();
      w_.row(h) = post.clusters[h].w.transpose();
    }
  }

  int classes() const { return static_cast<int>(w_.cols()); }
  int width() const { return static_cast<int>(x_.cols()); }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(classes() - 1) * width(); }
  VectorXd lower() const { return VectorXd::Constant(dim(), -kCoefBound); }
  VectorXd upper() const { return VectorXd::Constant(dim(), kCoefBound); }

  VectorXd pack(const Parameters& p) const {
    VectorXd x(dim());
    for (int u = 1; u < classes(); ++u) {
      x((u - 1) * width()) = p.gamma0(u - 1);
      x.segment((u - 1) * width() + 1, width() - 1) = p.gamma1.row(u - 1).transpose();
    }
    return x;
  }

  void unpack(const VectorXd& x, Parameters& p) const {
    for (int u = 1; u < classes(); ++u) {
      p.gamma0(u - 1) = x((u - 1) * width());
      p.gamma1.row(u - 1) = x.segment((u - 1) * width() + 1, width() - 1).transpose();
    }
  }

  std::optional<Eigen::Index> working_index(const ParamRef& r) const {
    if (r.block == Block::Gamma0) return (r.index[0] - 1) * width();
    if (r.block == Block::Gamma1) return (r.index[0] - 1) * width() + 1 + r.index[1];
    return std::nullopt;
  }

  double value(const VectorXd& x) const {
    VectorXd g;
    MatrixXd h;
    return accumulate(x, g, h, false);
  }

  double evaluate(const VectorXd& x, VectorXd& grad, MatrixXd& hess) const {
    return accumulate(x, grad, hess, true);
  }

 private:
  double accumulate(const VectorXd& x, VectorXd& grad, MatrixXd& hess, bool derivs) const {
    const int k = classes();
    const int q = width();
    if (derivs) {
      grad.setZero(dim());
      hess.setZero(dim(), dim());
    }
    double f = 0.0;
    VectorXd eta(k);
    for (Eigen::Index h = 0; h < x_.rows(); ++h) {
      eta(0) = 0.0;
      for (int u = 1; u < k; ++u) eta(u) = x_.row(h).dot(x.segment((u - 1) * q, q));
      const double lse = numeric::log_sum_exp(std::span<const double>(eta.data(), eta.size()));
      const VectorXd rho = exp_entries((eta.array() - lse).matrix());
      const double total = w_.row(h).sum();
      for (int u = 0; u < k; ++u) f += w_(h, u) * (eta(u) - lse);
      if (!derivs) continue;
      const VectorXd xh = x_.row(h).transpose();
      const MatrixXd outer = xh * xh.transpose();
      for (int u = 1; u < k; ++u) {
        grad.segment((u - 1) * q, q) += (w_(h, u) - total * rho(u)) * xh;
        for (int u2 = 1; u2 < k; ++u2) {
          const double c = total * rho(u) * ((u == u2 ? 1.0 : 0.0) - rho(u2));
          hess.block((u - 1) * q, (u2 - 1) * q, q, q) -= c * outer;
        }
      }
    }
    return f;
  }

  MatrixXd x_;
  MatrixXd w_;
};

// ---------------------------------------------------------------------------
// Weighted cumulative (global) logit model shared by the initial and the
// transition components:
//   logit P(V >= v) = alpha_group + cut_{row, v} + z' b,  v = 1..k-1,
// with alpha_0 = 0 and cut_{row, .} decreasing.

struct OrdinalObservation {
  int group = 0;
  int row = 0;
  VectorXd z;       // covariates
  VectorXd weight;  // expected count per category
};

class OrdinalProblem {
 public:
  OrdinalProblem(int groups, int rows, int categories, int covariates,
                 std::vector<OrdinalObservation> obs)
      : groups_(groups), rows_(rows), cats_(categories), covs_(covariates), obs_(std::move(obs)) {
    if (cats_ < 2) throw InvalidArgument("ordinal model needs at least two categories");
    if (covs_ == 0) collapse();
  }

  int groups() const { return groups_; }
  int rows() const { return rows_; }
  int categories() const { return cats_; }
  int covariates() const { return covs_; }
  const std::vector<OrdinalObservation>& observations() const { return obs_; }

  Eigen::Index dim() const { return (groups_ - 1) + rows_ * (cats_ - 1) + covs_; }
  Eigen::Index alpha_index(int g) const { return g - 1; }
  Eigen::Index cut_index(int r, int m) const { return (groups_ - 1) + r * (cats_ - 1) + m; }
  Eigen::Index cov_index(int j) const { return (groups_ - 1) + rows_ * (cats_ - 1) + j; }

  VectorXd lower() const {
    VectorXd lo = VectorXd::Constant(dim(), -kCoefBound);
    for (int r = 0; r < rows_; ++r)
      for (int m = 1; m < cats_ - 1; ++m) lo(cut_index(r, m)) = kLogGapLower;
    return lo;
  }
  VectorXd upper() const {
    VectorXd hi = VectorXd::Constant(dim(), kCoefBound);
    for (int r = 0; r < rows_; ++r)
      for (int m = 1; m < cats_ - 1; ++m) hi(cut_index(r, m)) = kLogGapUpper;
    return hi;
  }

  // alpha: groups-1, cuts: rows x (categories-1), b: covariates
  VectorXd pack(const VectorXd& alpha, const MatrixXd& cuts, const VectorXd& b) const {
    VectorXd x(dim());
    for (int g = 1; g < groups_; ++g) x(alpha_index(g)) = alpha(g - 1);
    for (int r = 0; r < rows_; ++r) {
      x(cut_index(r, 0)) = cuts(r, 0);
      for (int m = 1; m < cats_ - 1; ++m) x(cut_index(r, m)) = detail::log_gap(cuts(r, m - 1), cuts(r, m));
    }
    for (int j = 0; j < covs_; ++j) x(cov_index(j)) = b(j);
    return x;
  }

  void unpack(const VectorXd& x, VectorXd& alpha, MatrixXd& cuts, VectorXd& b) const {
    alpha.resize(groups_ - 1);
    for (int g = 1; g < groups_; ++g) alpha(g - 1) = x(alpha_index(g));
    cuts.resize(rows_, cats_ - 1);
    for (int r = 0; r < rows_; ++r) {
      const VectorXd c = row_cuts(x, r);
      cuts.row(r) = c.transpose();
    }
    b.resize(covs_);
    for (int j = 0; j < covs_; ++j) b(j) = x(cov_index(j));
  }

  double value(const VectorXd& x) const {
    VectorXd g;
    MatrixXd h;
    return accumulate(x, g, h, false);
  }

  double evaluate(const VectorXd& x, VectorXd& grad, MatrixXd& hess) const {
    return accumulate(x, grad, hess, true);
  }

 private:
  VectorXd row_cuts(const VectorXd& x, int r) const {
    VectorXd c(cats_ - 1);
    c(0) = x(cut_index(r, 0));
    for (int m = 1; m < cats_ - 1; ++m) c(m) = c(m - 1) - std::exp(x(cut_index(r, m)));
    return c;
  }

  // Merge observations that share (group, row) when there are no covariates.
  void collapse() {
    std::vector<OrdinalObservation> merged;
    std::vector<int> slot(static_cast<std::size_t>(groups_ * rows_), -1);
    for (auto& o : obs_) {
      auto& s = slot[static_cast<std::size_t>(o.group * rows_ + o.row)];
      if (s < 0) {
        s = static_cast<int>(merged.size());
        merged.push_back(std::move(o));
      } else {
        merged[static_cast<std::size_t>(s)].weight += o.weight;
      }
    }
    obs_ = std::move(merged);
  }

  double accumulate(const VectorXd& x, VectorXd& grad, MatrixXd& hess, bool derivs) const {
    const int k = cats_;
    const int ncut = k - 1;
    if (derivs) {
      grad.setZero(dim());
      hess.setZero(dim(), dim());
    }
    std::vector<VectorXd> cuts;
    for (int r = 0; r < rows_; ++r) cuts.push_back(row_cuts(x, r));
    VectorXd b(covs_);
    for (int j = 0; j < covs_; ++j) b(j) = x(cov_index(j));

    // Local parameter layout per observation: [alpha?][row cuts][b].
    std::vector<Eigen::Index> idx;
    MatrixXd jac;  // ncut x local
    VectorXd g_cut(ncut);
    MatrixXd h_cut(ncut, ncut);
    double f = 0.0;
    for (const auto& o : obs_) {
      const double base = (o.group > 0 ? x(alpha_index(o.group)) : 0.0) + (covs_ ? b.dot(o.z) : 0.0);
      const VectorXd g = cuts[static_cast<std::size_t>(o.row)].array() + base;
      const VectorXd logp = log_probs_from_global_logits(std::span<const double>(g.data(), g.size()));
      for (int v = 0; v < k; ++v) f += numeric::weighted_log(o.weight(v), logp(v));
      if (!derivs) continue;

      g_cut.setZero();
      h_cut.setZero();
      for (int v = 0; v < k; ++v) {
        const double w = o.weight(v);
        if (w == 0.0) continue;
        if (v == 0) {
          const double fb = numeric::expit(g(0));
          g_cut(0) -= w * fb;
          h_cut(0, 0) -= w * fb * (1.0 - fb);
        } else if (v == k - 1) {
          const double fa = numeric::expit(g(k - 2));
          g_cut(k - 2) += w * (1.0 - fa);
          h_cut(k - 2, k - 2) -= w * fa * (1.0 - fa);
        } else {
          const double a = g(v - 1);
          const double bb = g(v);
          const double fa = numeric::expit(a);
          const double fb = numeric::expit(bb);
          // density over probability, in log space to survive saturation
          const double ra = std::exp(numeric::log_expit(a) + numeric::log_expit(-a) - logp(v));
          const double rb = std::exp(numeric::log_expit(bb) + numeric::log_expit(-bb) - logp(v));
          g_cut(v - 1) += w * ra;
          g_cut(v) -= w * rb;
          h_cut(v - 1, v - 1) += w * (ra * (1.0 - 2.0 * fa) - ra * ra);
          h_cut(v, v) += w * (-rb * (1.0 - 2.0 * fb) - rb * rb);
          h_cut(v - 1, v) += w * ra * rb;
          h_cut(v, v - 1) += w * ra * rb;
        }
      }

      idx.clear();
      if (o.group > 0) idx.push_back(alpha_index(o.group));
      for (int m = 0; m < ncut; ++m) idx.push_back(cut_index(o.row, m));
      for (int j = 0; j < covs_; ++j) idx.push_back(cov_index(j));
      const auto L = static_cast<Eigen::Index>(idx.size());
      jac.setZero(ncut, L);
      Eigen::Index col = 0;
      if (o.group > 0) jac.col(col++).setOnes();
      const Eigen::Index cut0 = col;
      const auto& xr = x;
      for (int m = 0; m < ncut; ++m) {
        jac(m, cut0) = 1.0;
        for (int mm = 1; mm <= m; ++mm) jac(m, cut0 + mm) = -std::exp(xr(cut_index(o.row, mm)));
      }
      col = cut0 + ncut;
      for (int j = 0; j < covs_; ++j) jac.col(col + j).setConstant(o.z(j));

      const VectorXd gl = jac.transpose() * g_cut;
      MatrixXd hl = jac.transpose() * h_cut * jac;
      // curvature of the log-gap reparametrisation
      for (int mm = 1; mm < ncut; ++mm) {
        double s = 0.0;
        for (int m = mm; m < ncut; ++m) s += g_cut(m);
        hl(cut0 + mm, cut0 + mm) += -std::exp(xr(cut_index(o.row, mm))) * s;
      }
      for (Eigen::Index a = 0; a < L; ++a) {
        grad(idx[a]) += gl(a);
        for (Eigen::Index c = 0; c < L; ++c) hess(idx[a], idx[c]) += hl(a, c);
      }
    }
    return f;
  }

  int groups_;
  int rows_;
  int cats_;
  int covs_;
  std::vector<OrdinalObservation> obs_;
};

inline OrdinalProblem initial_problem(const PosteriorQuantities& post, const Dataset& data,
                                      const ModelShape& shape) {
  std::vector<OrdinalObservation> obs;
  for (std::size_t h = 0; h < data.clusters.size(); ++h) {
    const auto& cp = post.clusters[h];
    for (std::size_t i = 0; i < data.clusters[h].subjects.size(); ++i)
      for (int u = 0; u < shape.k1; ++u) {
        if (cp.w(u) == 0.0) continue;
        obs.push_back({u, 0, data.clusters[h].subjects[i].covariates[0],
                       cp.w(u) * cp.subjects[i].z1_given_u[u].col(0)});
      }
  }
  return OrdinalProblem(shape.k1, 1, shape.k2, shape.subject_covariates, std::move(obs));
}

// Transition into occasion t (t >= 1).
inline OrdinalProblem transition_problem(const PosteriorQuantities& post, const Dataset& data,
                                         const ModelShape& shape, int t) {
  std::vector<OrdinalObservation> obs;
  for (std::size_t h = 0; h < data.clusters.size(); ++h) {
    const auto& cp = post.clusters[h];
    for (std::size_t i = 0; i < data.clusters[h].subjects.size(); ++i)
      for (int u = 0; u < shape.k1; ++u) {
        if (cp.w(u) == 0.0) continue;
        const MatrixXd& pair = cp.subjects[i].z2_given_u[u][static_cast<std::size_t>(t - 1)];
        for (int v0 = 0; v0 < shape.k2; ++v0)
          obs.push_back({u, v0, data.clusters[h].subjects[i].covariates[t],
                         cp.w(u) * pair.row(v0).transpose()});
      }
  }
  return OrdinalProblem(shape.k1, shape.k2, shape.k2, shape.subject_covariates, std::move(obs));
}

// ---------------------------------------------------------------------------
// Components applied to Parameters

struct MStepOptions {
  NewtonOptions newton;
  std::vector<ParamRef> frozen;  // pinned at their current values
};

namespace detail {

template <class IndexFn>
std::vector<bool> freeze_mask(Eigen::Index dim, const std::vector<ParamRef>& frozen, IndexFn&& index) {
  std::vector<bool> mask(static_cast<std::size_t>(dim), false);
  for (const auto& r : frozen)
    if (auto i = index(r)) mask[static_cast<std::size_t>(*i)] = true;
  return mask;
}

inline std::optional<Eigen::Index> ordinal_index(const OrdinalProblem& prob, const ParamRef& r,
                                                 Block alpha, Block cut, Block cov, int t) {
  const bool timed = t > 0;
  const int off = timed ? 1 : 0;
  if (r.block != alpha && r.block != cut && r.block != cov) return std::nullopt;
  if (timed && r.index[0] != t) return std::nullopt;
  if (!profileable(r)) throw InvalidArgument("parameter cannot be pinned: " + name(r));
  if (r.block == alpha) return prob.alpha_index(r.index[off]);
  if (r.block == cov) return prob.cov_index(r.index[off]);
  return prob.cut_index(timed ? r.index[1] : 0, 0);
}

}  // namespace detail

inline NewtonResult mstep_rasch(const PosteriorQuantities& post, const ItemDesign& design,
                                const Dataset& data, Parameters& p, const MStepOptions& opt = {}) {
  const RaschProblem prob(post, design, data, p.shape.k2);
  const auto mask = detail::freeze_mask(prob.dim(), opt.frozen,
                                        [&](const ParamRef& r) { return prob.working_index(r); });
  NewtonResult res = newton_maximize(prob, prob.pack(p), opt.newton, mask);
  if (res.moved) prob.unpack(res.x, p);
  return res;
}

inline NewtonResult mstep_cluster_logit(const PosteriorQuantities& post, const Dataset& data,
                                        Parameters& p, const MStepOptions& opt = {}) {
  if (!p.shape.has_classes()) return {VectorXd(), 0.0, 0.0, 0, true, false, false};
  const ClusterLogitProblem prob(post, data, p.shape.k1);
  const auto mask = detail::freeze_mask(prob.dim(), opt.frozen,
                                        [&](const ParamRef& r) { return prob.working_index(r); });
  NewtonResult res = newton_maximize(prob, prob.pack(p), opt.newton, mask);
  if (res.moved) prob.unpack(res.x, p);
  return res;
}

inline NewtonResult mstep_initial(const PosteriorQuantities& post, const Dataset& data,
                                  Parameters& p, const MStepOptions& opt = {}) {
  if (!p.shape.has_chain()) return {VectorXd(), 0.0, 0.0, 0, true, false, false};
  const OrdinalProblem prob = initial_problem(post, data, p.shape);
  const auto mask = detail::freeze_mask(prob.dim(), opt.frozen, [&](const ParamRef& r) {
    return detail::ordinal_index(prob, r, Block::Delta0, Block::Delta1, Block::Delta2, 0);
  });
  NewtonResult res =
      newton_maximize(prob, prob.pack(p.delta0, p.delta1.transpose(), p.delta2), opt.newton, mask);
  if (!res.moved) return res;
  MatrixXd cuts;
  prob.unpack(res.x, p.delta0, cuts, p.delta2);
  p.delta1 = cuts.row(0).transpose();
  return res;
}

// Transition into occasion t (t >= 1).
inline NewtonResult mstep_transition(const PosteriorQuantities& post, const Dataset& data,
                                     Parameters& p, int t, const MStepOptions& opt = {}) {
  if (!p.shape.has_chain()) return {VectorXd(), 0.0, 0.0, 0, true, false, false};
  const OrdinalProblem prob = transition_problem(post, data, p.shape, t);
  const auto mask = detail::freeze_mask(prob.dim(), opt.frozen, [&](const ParamRef& r) {
    return detail::ordinal_index(prob, r, Block::Eta0, Block::Eta1, Block::Eta2, t);
  });
  auto& cuts = p.eta1[static_cast<std::size_t>(t - 1)];
  const VectorXd alpha0 = p.eta0.row(t - 1).transpose();
  const VectorXd b0 = p.eta2.row(t - 1).transpose();
  NewtonResult res = newton_maximize(prob, prob.pack(alpha0, cuts, b0), opt.newton, mask);
  if (!res.moved) return res;
  VectorXd alpha, b;
  prob.unpack(res.x, alpha, cuts, b);
  p.eta0.row(t - 1) = alpha.transpose();
  p.eta2.row(t - 1) = b.transpose();
  return res;
}

struct ComponentReport {
  std::string name;
  NewtonResult result;
};

using ComponentObserver = std::function<void(std::string_view component, const Parameters&)>;

// All components in a fixed order; the observer sees the parameters after
// each component.
inline std::vector<ComponentReport> mstep(const PosteriorQuantities& post, const ItemDesign& design,
                                          const Dataset& data, Parameters& p,
                                          const MStepOptions& opt = {},
                                          const ComponentObserver& observer = {}) {
  std::vector<ComponentReport> out;
  auto done = [&](std::string name, NewtonResult r) {
    if (observer) observer(name, p);
    out.push_back({std::move(name), std::move(r)});
  };
  done("rasch", mstep_rasch(post, design, data, p, opt));
  if (p.shape.has_classes()) done("cluster_logit", mstep_cluster_logit(post, data, p, opt));
  if (p.shape.has_chain()) {
    done("initial", mstep_initial(post, data, p, opt));
    for (int t = 1; t < p.shape.occasions; ++t)
      done("transition_" + std::to_string(t + 1), mstep_transition(post, data, p, t, opt));
  }
  return out;
}

// Expected complete-data log-likelihood with the latent indicators replaced
// by their posterior expectations.
inline double complete_data_loglik(const Parameters& p, const ItemDesign& design, const Dataset& data,
                                   const PosteriorQuantities& post) {
  const EmissionTable table(p);
  const int k1 = p.shape.k1;
  double total = 0.0;
  for (std::size_t h = 0; h < data.clusters.size(); ++h) {
    const Cluster& c = data.clusters[h];
    const ClusterPosterior& cp = post.clusters[h];
    const VectorXd log_rho = log_cluster_class_probs(p, c.covariates);
    for (int u = 0; u < k1; ++u) total += numeric::weighted_log(cp.w(u), log_rho(u));
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
      const Subject& s = c.subjects[i];
      const SubjectPosterior& sp = cp.subjects[i];
      const MatrixXd emis = subject_log_emissions(table, design, s);
      for (Eigen::Index t = 0; t < emis.cols(); ++t)
        for (Eigen::Index v = 0; v < emis.rows(); ++v)
          total += numeric::weighted_log(sp.z1(v, t), emis(v, t));
      for (int u = 0; u < k1; ++u) {
        if (cp.w(u) == 0.0) continue;
        const ChainModel chain = ChainModel::of(p, s, u);
        for (Eigen::Index v = 0; v < chain.log_init.size(); ++v)
          total += numeric::weighted_log(cp.w(u) * sp.z1_given_u[u](v, 0), chain.log_init(v));
        for (std::size_t t = 0; t < chain.log_trans.size(); ++t)
          for (Eigen::Index v0 = 0; v0 < chain.log_trans[t].rows(); ++v0)
            for (Eigen::Index v1 = 0; v1 < chain.log_trans[t].cols(); ++v1)
              total += numeric::weighted_log(cp.w(u) * sp.z2_given_u[u][t](v0, v1),
                                             chain.log_trans[t](v0, v1));
      }
    }
  }
  return total;
}

}  // namespace lmrasch
